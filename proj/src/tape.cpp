#include "chamferlab/tape.hpp"

#include <cmath>

#include "chamferlab/errors.hpp"

namespace chamferlab {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> parents, Backward backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_adjoint) {
    n.adjoint = g;
    n.has_adjoint = true;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.adjoint.data()[i] += g.data()[i];
  }
}

std::vector<Matrix> Tape::grad(Var output, std::span<const Var> inputs) {
  if (output.tape != this) throw ContractError("grad: output belongs to another tape");
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ContractError("grad: output must be scalar, got " + out.shape_string());
  }
  for (Node& n : nodes_) {
    n.has_adjoint = false;
    n.adjoint = Matrix();
  }
  last_visits_ = 0;
  accumulate(output.id, Matrix(1, 1, 1.0));
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_adjoint || !n.backward) continue;
    ++last_visits_;
    const Matrix upstream = n.adjoint;
    n.backward(*this, upstream);
  }
  std::vector<Matrix> result;
  result.reserve(inputs.size());
  for (Var v : inputs) {
    const Node& n = nodes_[v.id];
    result.push_back(n.has_adjoint ? n.adjoint : Matrix(n.value.rows(), n.value.cols()));
  }
  return result;
}

namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("tape op: operands recorded on different tapes");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(matmul(a.value(), b.value()), {a.id, b.id}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id, matmul_nt(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b.id, matmul_tn(a.value(), g));
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(a.value() + b.value(), {a.id, b.id}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(a.value() - b.value(), {a.id, b.id}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, -1.0 * g);
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(hadamard(a.value(), b.value()), {a.id, b.id}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id, hadamard(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b.id, hadamard(g, a.value()));
  });
}

Var scale(Var a, double s) {
  return a.tape->record(s * a.value(), {a.id}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a.id, s * g); });
}

Var add_bias(Var a, Var row) {
  same_tape(a, row);
  return a.tape->record(add_row_broadcast(a.value(), row.value()), {a.id, row.id},
                        [a, row](Tape& tp, const Matrix& g) {
                          tp.accumulate(a.id, g);
                          if (tp.requires_grad(row)) tp.accumulate(row.id, column_sums(g));
                        });
}

Var silu(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = v * sigmoid(v);
  return a.tape->record(std::move(out), {a.id}, [a](Tape& tp, const Matrix& g) {
    Matrix d = g;
    const auto& x = a.value().data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double s = sigmoid(x[i]);
      d.data()[i] *= s * (1.0 + x[i] * (1.0 - s));
    }
    tp.accumulate(a.id, d);
  });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  Matrix y = out;
  return a.tape->record(std::move(out), {a.id}, [a, y](Tape& tp, const Matrix& g) {
    Matrix d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
    tp.accumulate(a.id, d);
  });
}

Var concat_cols(Var a, Var b) {
  same_tape(a, b);
  const std::size_t ac = a.value().cols();
  const std::size_t bc = b.value().cols();
  return a.tape->record(hstack(a.value(), b.value()), {a.id, b.id}, [a, b, ac, bc](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id, g.col_block(0, ac));
    if (tp.requires_grad(b)) tp.accumulate(b.id, g.col_block(ac, bc));
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Matrix out = table.value().select_rows(idx);
  return table.tape->record(std::move(out), {table.id}, [table, idx](Tape& tp, const Matrix& g) {
    Matrix d(table.value().rows(), table.value().cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d.cols(); ++c) d(idx[i], c) += g(i, c);
    tp.accumulate(table.id, d);
  });
}

Var sum(Var a) {
  return a.tape->record(Matrix(1, 1, sum(a.value())), {a.id}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, Matrix(a.value().rows(), a.value().cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape->record(Matrix(1, 1, sum(a.value()) / n), {a.id}, [a, n](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, Matrix(a.value().rows(), a.value().cols(), g(0, 0) / n));
  });
}

Var weighted_sum(Var a, const Matrix& w) {
  if (!a.value().same_shape(w)) throw DimensionError("weighted_sum: shape mismatch");
  return a.tape->record(Matrix(1, 1, sum(hadamard(a.value(), w))), {a.id}, [a, w](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g(0, 0) * w);
  });
}

Var mean_row_sq_error(Var a, Var b) {
  same_tape(a, b);
  const Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.rows());
  double total = 0.0;
  for (double v : diff.data()) total += v * v;
  return a.tape->record(Matrix(1, 1, total / n), {a.id, b.id}, [a, b, diff, n](Tape& tp, const Matrix& g) {
    const Matrix d = (2.0 * g(0, 0) / n) * diff;
    tp.accumulate(a.id, d);
    if (tp.requires_grad(b)) tp.accumulate(b.id, -1.0 * d);
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) throw DimensionError("cross_entropy: label count mismatch");
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= z.cols()) throw RangeError("cross_entropy: label out of range");
    double mx = z(r, 0);
    for (std::size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, z(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) denom += std::exp(z(r, c) - mx);
    for (std::size_t c = 0; c < z.cols(); ++c) probs(r, c) = std::exp(z(r, c) - mx) / denom;
    total += -(z(r, label) - mx - std::log(denom));
  }
  const double n = static_cast<double>(z.rows());
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(Matrix(1, 1, total / n), {logits.id},
                             [logits, probs, lab, n](Tape& tp, const Matrix& g) {
                               Matrix d = probs;
                               for (std::size_t r = 0; r < d.rows(); ++r) d(r, lab[r]) -= 1.0;
                               tp.accumulate(logits.id, (g(0, 0) / n) * d);
                             });
}

}  // namespace chamferlab
