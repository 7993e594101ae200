#pragma once

#include <cstddef>
#include <vector>

#include "chamferlab/matrix.hpp"

namespace chamferlab {

enum class ScheduleKind { Linear, Cosine };

// Discrete variance schedule indexed by t ∈ [1, T]. ᾱ_0 is taken as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas, ScheduleKind kind = ScheduleKind::Linear);

  std::size_t steps() const { return betas_.size(); }
  ScheduleKind kind() const { return kind_; }
  double beta(std::size_t t) const { return betas_.at(index(t)); }
  double alpha(std::size_t t) const { return 1.0 - beta(t); }
  double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars_.at(index(t)); }
  // As alpha_bar but rejects t = 0.
  double alpha_bar_checked(std::size_t t) const { return alpha_bars_.at(index(t)); }
  // Posterior standard deviation; σ_1 is forced to zero.
  double sigma(std::size_t t) const { return sigmas_.at(index(t)); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::size_t index(std::size_t t) const;

  ScheduleKind kind_ = ScheduleKind::Linear;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

inline constexpr std::size_t kDefaultSteps = 40;

// Linear: β interpolates beta_start..beta_end. Cosine: β from the squared-cosine
// ᾱ curve, clipped to [beta_start, beta_end].
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end, ScheduleKind kind);

// x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε
Matrix forward_noise_at(const Matrix& x0, const Matrix& eps, double alpha_bar);
Matrix forward_noise(const Matrix& x0, std::size_t t, const Matrix& eps, const NoiseSchedule& sched);
// x̂_0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t
Matrix ddim_x0_at(const Matrix& x_t, const Matrix& eps_pred, double alpha_bar);
Matrix ddim_x0(const Matrix& x_t, const Matrix& eps_pred, std::size_t t, const NoiseSchedule& sched);
// ε_u + ω(ε_c − ε_u); ω = 1 is conditional-only.
Matrix cfg_combine(const Matrix& eps_c, const Matrix& eps_u, double omega);

}  // namespace chamferlab
