#include "chamferlab/schedule.hpp"

#include <cmath>
#include <numbers>

#include "chamferlab/errors.hpp"

namespace chamferlab {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ScheduleKind kind) : kind_(kind), betas_(std::move(betas)) {
  if (betas_.empty()) throw ScheduleError("schedule: need at least one step");
  double prod = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ScheduleError("schedule: beta outside (0, 1)");
    prod *= 1.0 - b;
    alpha_bars_.push_back(prod);
  }
  sigmas_.resize(betas_.size());
  sigmas_[0] = 0.0;
  for (std::size_t i = 1; i < betas_.size(); ++i) {
    const double var = betas_[i] * (1.0 - alpha_bars_[i - 1]) / (1.0 - alpha_bars_[i]);
    sigmas_[i] = std::sqrt(var);
  }
}

std::size_t NoiseSchedule::index(std::size_t t) const {
  if (t < 1 || t > betas_.size()) {
    throw RangeError("schedule: t=" + std::to_string(t) + " outside [1, " + std::to_string(betas_.size()) + "]");
  }
  return t - 1;
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end, ScheduleKind kind) {
  if (steps == 0) throw ScheduleError("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ScheduleError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(steps);
  if (kind == ScheduleKind::Linear) {
    for (std::size_t i = 0; i < steps; ++i) {
      const double f = steps == 1 ? 0.0 : double(i) / double(steps - 1);
      betas[i] = beta_start + f * (beta_end - beta_start);
    }
  } else {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / double(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (std::size_t i = 0; i < steps; ++i) {
      const double b = 1.0 - f(double(i + 1)) / f(double(i));
      betas[i] = std::clamp(b, beta_start, beta_end);
    }
  }
  return NoiseSchedule(std::move(betas), kind);
}

Matrix forward_noise_at(const Matrix& x0, const Matrix& eps, double alpha_bar) {
  if (!x0.same_shape(eps)) throw DimensionError("forward_noise: x0 and eps shapes differ");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Matrix out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
  return out;
}

Matrix forward_noise(const Matrix& x0, std::size_t t, const Matrix& eps, const NoiseSchedule& sched) {
  return forward_noise_at(x0, eps, sched.alpha_bar_checked(t));
}

Matrix ddim_x0_at(const Matrix& x_t, const Matrix& eps_pred, double alpha_bar) {
  if (!x_t.same_shape(eps_pred)) throw DimensionError("ddim_x0: x_t and eps shapes differ");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Matrix out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (x_t.data()[i] - b * eps_pred.data()[i]) / a;
  return out;
}

Matrix ddim_x0(const Matrix& x_t, const Matrix& eps_pred, std::size_t t, const NoiseSchedule& sched) {
  return ddim_x0_at(x_t, eps_pred, sched.alpha_bar_checked(t));
}

Matrix cfg_combine(const Matrix& eps_c, const Matrix& eps_u, double omega) {
  if (!eps_c.same_shape(eps_u)) throw DimensionError("cfg_combine: shapes differ");
  if (omega == 1.0) return eps_c;
  if (omega == 0.0) return eps_u;
  Matrix out(eps_c.rows(), eps_c.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = eps_u.data()[i];
    out.data()[i] = u + omega * (eps_c.data()[i] - u);
  }
  return out;
}

}  // namespace chamferlab
