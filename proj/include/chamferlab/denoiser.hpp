#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "chamferlab/matrix.hpp"
#include "chamferlab/nn.hpp"
#include "chamferlab/schedule.hpp"
#include "chamferlab/tape.hpp"

namespace chamferlab {

struct DenoiserArch {
  std::size_t dim = 2;
  std::size_t classes = 1;
  std::size_t hidden_width = 128;
  std::size_t hidden_layers = 3;
  std::size_t time_width = 32;
  std::size_t class_width = 16;
  std::size_t steps = kDefaultSteps;  // T, used to scale the time embedding
};

// Sinusoidal embedding of per-row timesteps, scaled so t = T maps to 1000.
Matrix time_embedding(std::span<const std::size_t> t, std::size_t width, std::size_t steps);

// Conditional noise predictor ε_θ(x_t, t, c). Row `classes` of the class
// table is the null token used for the unconditional branch.
class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(const DenoiserArch& arch, std::uint64_t seed);

  const DenoiserArch& arch() const { return arch_; }
  int null_token() const { return static_cast<int>(arch_.classes); }

  const std::vector<Linear>& layers() const { return layers_; }
  const Matrix& class_table() const { return class_table_; }

  // Rows of the class table for the given labels (null token allowed).
  Matrix class_embedding(std::span<const int> labels) const;

  Matrix predict(const Matrix& x, std::size_t t, std::span<const int> labels) const;
  Matrix predict_with_embedding(const Matrix& x, std::size_t t, const Matrix& cond) const;

  // Tape forward. `params` comes from bind(); cond is batch×class_width.
  struct Vars {
    MlpVars mlp;
    Var class_table;
  };
  Vars bind(Tape& tape, bool trainable) const;
  Var forward(Tape& tape, const Vars& vars, Var x, std::span<const std::size_t> t, Var cond) const;
  Var forward_labels(Tape& tape, const Vars& vars, Var x, std::span<const std::size_t> t,
                     std::span<const int> labels) const;

  // Σ upstream ∘ ε_θ(x, t, cond) differentiated with respect to x.
  Matrix input_vjp(const Matrix& x, std::size_t t, const Matrix& cond, const Matrix& upstream) const;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& dir, const NoiseSchedule& sched) const;
  static DenoiserModel load(const std::filesystem::path& dir, NoiseSchedule* sched = nullptr);

 private:
  void check_labels(std::span<const int> labels, std::size_t rows) const;

  DenoiserArch arch_;
  std::vector<Linear> layers_;
  Matrix class_table_;
};

}  // namespace chamferlab
