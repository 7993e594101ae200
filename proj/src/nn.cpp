#include "chamferlab/nn.hpp"

#include <cmath>

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"

namespace chamferlab {

Linear make_linear(std::size_t in, std::size_t out, RngStream& rng, double gain) {
  Linear l{Matrix(in, out), Matrix(1, out)};
  if (gain != 0.0) {
    const double s = gain / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight.data()) w = s * rng.normal();
  }
  return l;
}

MlpVars bind_layers(Tape& tape, const std::vector<Linear>& layers, bool trainable) {
  MlpVars vars;
  for (const Linear& l : layers) {
    vars.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
    vars.biases.push_back(trainable ? tape.variable(l.bias) : tape.constant(l.bias));
  }
  return vars;
}

Var mlp_forward(Var x, const MlpVars& vars, bool activate_last) {
  Var h = x;
  for (std::size_t i = 0; i < vars.weights.size(); ++i) {
    h = add_bias(matmul(h, vars.weights[i]), vars.biases[i]);
    if (i + 1 < vars.weights.size() || activate_last) h = silu(h);
  }
  return h;
}

Matrix mlp_forward(const Matrix& x, const std::vector<Linear>& layers, bool activate_last) {
  Tape tape;
  const MlpVars vars = bind_layers(tape, layers, false);
  return mlp_forward(tape.constant(x), vars, activate_last).value();
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
}

void Optimizer::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count mismatch");
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->data();
      const auto& g = grads[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
    }
    return;
  }
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data();
    auto& m = m_[i].data();
    auto& v = v_[i].data();
    const auto& g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon_);
    }
  }
}

std::uint64_t checksum(const std::vector<const Matrix*>& params) {
  Fnv1a h;
  for (const Matrix* p : params) h.matrix(*p);
  return h.digest();
}

}  // namespace chamferlab
