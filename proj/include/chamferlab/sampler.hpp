#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "chamferlab/chamfer.hpp"
#include "chamferlab/datagen.hpp"
#include "chamferlab/denoiser.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/schedule.hpp"

namespace chamferlab {

struct SamplingConfig {
  double omega = 1.0;
  std::optional<GuidanceConfig> guidance;
  std::optional<CadsParams> cads;
};

struct SampleStats {
  std::size_t denoiser_calls = 0;
  std::size_t unconditional_calls = 0;
  std::size_t guidance_calls = 0;
  std::vector<double> guidance_losses;  // Chamfer loss at each guided step
};

// Ancestral sampling from x_T ~ N(0, I) down to x_0. At each step: ε_c, then
// ε_u only when ω ≠ 1, CFG combination, and the guidance hook on scheduled steps.
Matrix sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const int> labels,
              const SamplingConfig& config, RngStream& rng, SampleStats* stats = nullptr);

}  // namespace chamferlab

namespace chamferlab {

// Class-balanced generation: `per_class` samples for each class, drawn in
// single-class batches of at most `batch` rows so guidance sees one class at
// a time. Batch b of class c uses stream (seed, c·1000 + b).
LabeledSet generate_per_class(const DenoiserModel& model, const NoiseSchedule& sched, const SamplingConfig& config,
                              std::size_t per_class, std::size_t batch, std::uint64_t seed);

}  // namespace chamferlab
