#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "chamferlab/denoiser.hpp"
#include "chamferlab/featspace.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/schedule.hpp"

namespace chamferlab {

struct ChamferBreakdown {
  double total = 0.0;
  double term_real_to_gen = 0.0;  // mean over real x of min_y ‖x−y‖² (diversity)
  double term_gen_to_real = 0.0;  // mean over generated y of min_x ‖x−y‖² (fidelity)
  std::vector<std::size_t> nearest_gen;   // per real row, argmin generated row
  std::vector<std::size_t> nearest_real;  // per generated row, argmin real row
};

// X real, Y generated. Argmin ties go to the lowest index.
ChamferBreakdown chamfer(const Matrix& real, const Matrix& gen);
ChamferBreakdown chamfer(const FeatureSet& real, const FeatureSet& gen);

// ∂ chamfer / ∂ gen with the argmin matchings held fixed.
Matrix chamfer_grad(const Matrix& real, const Matrix& gen);
Matrix chamfer_grad(const FeatureSet& real, const FeatureSet& gen);

enum class GradMode { StopGrad, Full };
// Where the guidance gradient is applied: added to the ε prediction
// (score-space form) or subtracted from x_t directly.
enum class GuidanceSpace { Eps, Xt };

struct GuidanceConfig {
  double gamma = 0.0;
  std::size_t g_freq = 5;
  double omega = 1.0;
  GradMode grad_mode = GradMode::StopGrad;
  GuidanceSpace space = GuidanceSpace::Eps;
  Projector projector = Projector::identity(2);
  FeatureSet exemplars;
  std::vector<int> exemplar_labels;  // optional, parallel to exemplars
  std::optional<std::pair<std::size_t, std::size_t>> window;  // inclusive [t_lo, t_hi]
  // Guide each class only with its own exemplars instead of pooling the
  // exemplars of every class present in the batch.
  bool per_class = false;

  void validate() const;
  // True when the step t is on the g_freq grid and inside the window.
  bool scheduled(std::size_t t) const;
};

GradMode grad_mode_from_name(const std::string& name);
std::string grad_mode_name(GradMode mode);

// Everything about the current denoiser call that full-gradient mode needs.
struct GuidanceInputs {
  const DenoiserModel* model = nullptr;
  std::span<const int> labels;
  Matrix cond;  // conditional embedding rows fed to the model
  double omega = 1.0;
};

struct GuidanceResult {
  Matrix x_t;
  Matrix eps;
  Matrix grad_xt;  // ∇_{x_t} of the Chamfer loss
  double loss = 0.0;
};

GuidanceResult guidance_step(const Matrix& x_t, std::size_t t, const Matrix& eps, const NoiseSchedule& sched,
                             const GuidanceConfig& cfg, const GuidanceInputs& inputs);

// ε' = ε − γ·√(1−ᾱ_t)·∇_{x_t} r  for a reward gradient taken with respect to x_t.
Matrix reward_guidance(const Matrix& eps, const Matrix& grad_reward, double gamma, double alpha_bar);

struct CadsParams {
  double tau1 = 0.6;
  double tau2 = 0.9;
  double noise_scale = 0.25;  // s
  double psi = 1.0;           // rescale mixing
  void validate() const;
};

// Condition-annealing schedule value γ(t) ∈ [0, 1]: 1 keeps the condition, 0 is pure noise.
double cads_gamma(std::size_t t, std::size_t T, const CadsParams& params);
Matrix cads_anneal(const Matrix& cond, std::size_t t, std::size_t T, const CadsParams& params, RngStream& rng);

}  // namespace chamferlab
