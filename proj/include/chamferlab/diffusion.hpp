#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "chamferlab/datagen.hpp"
#include "chamferlab/denoiser.hpp"
#include "chamferlab/nn.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/schedule.hpp"

namespace chamferlab {

struct TrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double p_uncond = 0.1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);

struct TrainResult {
  DenoiserModel model;
  std::vector<double> loss_curve;  // one entry per step
};

// Monte-Carlo ε-prediction objective: batches of (x0, t ~ U[1,T], ε ~ N(0,I)),
// with each label replaced by the null token with probability p_uncond.
TrainResult train(DenoiserModel model, const LabeledSet& data, const NoiseSchedule& sched, const TrainConfig& cfg);

// Mean ε-prediction loss over n fresh (x0, t, ε) draws; labels kept.
double denoising_loss(const DenoiserModel& model, const LabeledSet& data, const NoiseSchedule& sched,
                      std::size_t n, std::uint64_t seed);

// One ancestral step x_t → x_{t−1}. Noise is drawn only when σ > 0.
Matrix ddpm_step_at(const Matrix& x_t, const Matrix& eps, double alpha, double alpha_bar, double sigma, RngStream& rng);
Matrix ddpm_step(const Matrix& x_t, const Matrix& eps, std::size_t t, const NoiseSchedule& sched, RngStream& rng);

}  // namespace chamferlab
