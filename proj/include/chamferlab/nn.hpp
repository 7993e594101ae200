#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chamferlab/matrix.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/tape.hpp"

namespace chamferlab {

// Affine layer y = x·W + b with W in×out and b 1×out.
struct Linear {
  Matrix weight;
  Matrix bias;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

// Weights ~ N(0, gain²/fan_in); gain 0 gives an all-zero layer.
Linear make_linear(std::size_t in, std::size_t out, RngStream& rng, double gain = 1.0);

// Stack of Linear layers with SiLU between them. The last layer is linear
// unless activate_last is set.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars bind_layers(Tape& tape, const std::vector<Linear>& layers, bool trainable);
Var mlp_forward(Var x, const MlpVars& vars, bool activate_last);
Matrix mlp_forward(const Matrix& x, const std::vector<Linear>& layers, bool activate_last);

enum class OptimizerKind { Sgd, Adam };
OptimizerKind optimizer_from_name(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

// First-order optimizer over a fixed parameter list. Adam moments are kept
// per parameter in the order first seen.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double epsilon_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

std::uint64_t checksum(const std::vector<const Matrix*>& params);

}  // namespace chamferlab
