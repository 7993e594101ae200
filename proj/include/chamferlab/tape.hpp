#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "chamferlab/matrix.hpp"

namespace chamferlab {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
};

// Reverse-mode recorder for small dense networks. Nodes are appended in
// evaluation order, so walking the list backwards is a reverse topological
// order and each node is visited at most once per backward pass.
class Tape {
 public:
  Var variable(Matrix value);  // differentiable leaf
  Var constant(Matrix value);  // leaf excluded from differentiation

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient of a scalar (1×1) output with respect to each input leaf or node.
  std::vector<Matrix> grad(Var output, std::span<const Var> inputs);

  // Number of nodes whose backward rule ran in the last grad() call.
  std::size_t last_backward_visits() const { return last_visits_; }

  using Backward = std::function<void(Tape&, const Matrix& upstream)>;
  Var record(Matrix value, std::vector<std::size_t> parents, Backward backward);

  // Accumulates into a node's adjoint; used by backward rules.
  void accumulate(std::size_t id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool requires_grad = false;
    bool has_adjoint = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

// Primitive ops. Shapes follow the Matrix functions of the same name.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var a, Var row);
Var silu(Var a);
Var tanh(Var a);
Var concat_cols(Var a, Var b);
// Row gather from an embedding table; indices select rows of `table`.
Var gather_rows(Var table, std::span<const std::size_t> indices);
// Scalar ops.
Var sum(Var a);
Var mean(Var a);
// Σ a∘w for a constant weight matrix w (vector-Jacobian products).
Var weighted_sum(Var a, const Matrix& w);
// Mean over rows of the squared row norm of (a − b).
Var mean_row_sq_error(Var a, Var b);
// Mean softmax cross-entropy of logit rows against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace chamferlab
