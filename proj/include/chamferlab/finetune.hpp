#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "chamferlab/datagen.hpp"
#include "chamferlab/denoiser.hpp"
#include "chamferlab/diffusion.hpp"
#include "chamferlab/featspace.hpp"
#include "chamferlab/schedule.hpp"

namespace chamferlab {

// Continues ε-prediction training on the exemplar points only.
DenoiserModel vanilla_finetune(const DenoiserModel& model, const ExemplarSet& exemplars, std::size_t num_classes,
                               const NoiseSchedule& sched, const TrainConfig& cfg);

struct ReflConfig {
  double lambda = 1e-3;
  std::size_t T = kDefaultSteps;
  // The rollout stops after j ~ U[t1, t2] reverse steps, i.e. at timestep T − j.
  std::size_t t1 = 30;
  std::size_t t2 = 39;
  std::size_t steps = 500;
  double learning_rate = 1e-3;
  std::size_t batch_per_class = 32;
  double omega = 1.0;  // CFG scale of the no-grad rollout
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 0;

  void validate() const;
};

ReflConfig refl_config_from_json(const nlohmann::json& j);

struct ReflLoss {
  double loss = 0.0;
  std::vector<Matrix> grads;  // aligned with DenoiserModel::parameters()
};

// λ·mean over classes of chamfer(exemplars_c, project(x̂_0)) where x̂_0 comes
// from a single denoiser call at timestep t; gradients flow through that call only.
ReflLoss refl_loss(const DenoiserModel& model, const Matrix& x_t, std::size_t t, std::span<const int> labels,
                   const FeatureSet& exemplar_features, std::span<const int> exemplar_labels,
                   const Projector& projector, const NoiseSchedule& sched, double lambda);

struct ReflResult {
  DenoiserModel model;
  std::vector<double> loss_curve;
};

ReflResult refl_chamfer_finetune(const DenoiserModel& model, const ExemplarSet& exemplars, const Projector& projector,
                                 const NoiseSchedule& sched, const ReflConfig& cfg);

}  // namespace chamferlab
