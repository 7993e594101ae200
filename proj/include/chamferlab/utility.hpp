#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chamferlab/datagen.hpp"
#include "chamferlab/featspace.hpp"
#include "chamferlab/nn.hpp"

namespace chamferlab {

struct ClassifierSpec {
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  std::size_t steps = 1500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-2;
};

// MLP classifier: SiLU hidden layers and a linear head. The head starts at
// zero, so an untrained classifier scores every class equally.
struct Classifier {
  std::vector<Linear> layers;
  std::size_t classes = 0;

  Matrix logits(const Matrix& x) const;
  std::vector<int> predict(const Matrix& x) const;  // argmax, ties to the lower class
  double accuracy(const LabeledSet& data) const;
  // Hidden layers only, as a feature projector.
  Projector encoder(bool l2_normalize = false) const;
};

Classifier train_classifier(const LabeledSet& data, const ClassifierSpec& spec, std::uint64_t seed);

// Produces n labelled points (balanced over classes) for a given seed.
using Generator = std::function<LabeledSet(std::size_t n, std::uint64_t seed)>;

// Samples straight from the data distribution.
Generator oracle_generator(const DatasetSpec& spec);

struct UtilityRun {
  std::uint64_t seed = 0;
  std::string mix;  // "synthetic-only", "mixed", "real-only"
  std::size_t n_synth = 0;
  std::size_t n_real = 0;
  double acc_id = 0.0;   // real validation
  double acc_ood = 0.0;  // group-shifted validation
};

struct UtilityData {
  LabeledSet real_train;
  LabeledSet validation;
  LabeledSet shifted_validation;
};

// Builds real train/validation sets plus the shifted (×1.5 group shift) variant.
UtilityData utility_data(const DatasetSpec& spec, std::size_t validation_per_class);

std::vector<UtilityRun> utility_experiment(const Generator& generator, std::size_t n_synth, std::size_t n_real,
                                           const UtilityData& data, const ClassifierSpec& spec,
                                           const std::vector<std::uint64_t>& seeds);

std::string utility_csv(const std::vector<UtilityRun>& runs);

}  // namespace chamferlab
