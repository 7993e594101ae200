#include "chamferlab/chamfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "chamferlab/errors.hpp"

namespace chamferlab {
namespace {

std::size_t nearest_row(std::span<const double> q, const Matrix& set) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < set.rows(); ++r) {
    const double d = squared_distance(q, set.row(r));
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

void require_nonempty(const Matrix& real, const Matrix& gen) {
  if (real.rows() == 0 || gen.rows() == 0) throw ContractError("chamfer: point sets must be nonempty");
  if (real.cols() != gen.cols()) throw DimensionError("chamfer: dimensions differ");
}

}  // namespace

ChamferBreakdown chamfer(const Matrix& real, const Matrix& gen) {
  require_nonempty(real, gen);
  ChamferBreakdown b;
  b.nearest_gen.resize(real.rows());
  b.nearest_real.resize(gen.rows());
  double s1 = 0.0;
  for (std::size_t i = 0; i < real.rows(); ++i) {
    b.nearest_gen[i] = nearest_row(real.row(i), gen);
    s1 += squared_distance(real.row(i), gen.row(b.nearest_gen[i]));
  }
  double s2 = 0.0;
  for (std::size_t j = 0; j < gen.rows(); ++j) {
    b.nearest_real[j] = nearest_row(gen.row(j), real);
    s2 += squared_distance(real.row(b.nearest_real[j]), gen.row(j));
  }
  b.term_real_to_gen = s1 / double(real.rows());
  b.term_gen_to_real = s2 / double(gen.rows());
  b.total = b.term_real_to_gen + b.term_gen_to_real;
  return b;
}

ChamferBreakdown chamfer(const FeatureSet& real, const FeatureSet& gen) {
  require_same_space(real, gen, "chamfer");
  return chamfer(real.features, gen.features);
}

Matrix chamfer_grad(const Matrix& real, const Matrix& gen) {
  const ChamferBreakdown b = chamfer(real, gen);
  Matrix g(gen.rows(), gen.cols());
  const double w1 = 2.0 / double(real.rows());
  const double w2 = 2.0 / double(gen.rows());
  for (std::size_t i = 0; i < real.rows(); ++i) {
    const std::size_t j = b.nearest_gen[i];
    for (std::size_t d = 0; d < gen.cols(); ++d) g(j, d) += w1 * (gen(j, d) - real(i, d));
  }
  for (std::size_t j = 0; j < gen.rows(); ++j) {
    const std::size_t i = b.nearest_real[j];
    for (std::size_t d = 0; d < gen.cols(); ++d) g(j, d) += w2 * (gen(j, d) - real(i, d));
  }
  return g;
}

Matrix chamfer_grad(const FeatureSet& real, const FeatureSet& gen) {
  require_same_space(real, gen, "chamfer_grad");
  return chamfer_grad(real.features, gen.features);
}

GradMode grad_mode_from_name(const std::string& name) {
  if (name == "stopgrad") return GradMode::StopGrad;
  if (name == "full") return GradMode::Full;
  throw ConfigError("unknown grad_mode '" + name + "'");
}

std::string grad_mode_name(GradMode mode) { return mode == GradMode::StopGrad ? "stopgrad" : "full"; }

void GuidanceConfig::validate() const {
  if (g_freq < 1) throw ConfigError("guidance: g_freq must be >= 1");
  if (!(gamma >= 0.0)) throw ConfigError("guidance: gamma must be >= 0");
  if (exemplars.size() == 0) throw ConfigError("guidance: exemplar set is empty");
  if (exemplars.projector_id != projector.id()) throw ConfigError("guidance: exemplar features were not produced by the guidance projector");
  if (!exemplar_labels.empty() && exemplar_labels.size() != exemplars.size()) {
    throw ConfigError("guidance: exemplar label count does not match exemplar rows");
  }
  if (per_class && exemplar_labels.empty()) throw ConfigError("guidance: per-class filtering needs exemplar labels");
  if (window && window->first > window->second) throw ConfigError("guidance: window lower bound exceeds upper bound");
}

bool GuidanceConfig::scheduled(std::size_t t) const {
  if (t % g_freq != 0) return false;
  if (window && (t < window->first || t > window->second)) return false;
  return true;
}

GuidanceResult guidance_step(const Matrix& x_t, std::size_t t, const Matrix& eps, const NoiseSchedule& sched,
                             const GuidanceConfig& cfg, const GuidanceInputs& inputs) {
  cfg.validate();
  GuidanceResult out{x_t, eps, Matrix(x_t.rows(), x_t.cols()), 0.0};
  if (cfg.gamma == 0.0) return out;
  if (inputs.labels.size() != x_t.rows()) throw DimensionError("guidance: label count does not match batch");

  const double ab = sched.alpha_bar_checked(t);
  const double sqrt_ab = std::sqrt(ab);
  const double sqrt_1mab = std::sqrt(1.0 - ab);
  const Matrix x0 = ddim_x0_at(x_t, eps, ab);

  // Partition the batch: one group per class with per-class filtering,
  // otherwise a single group guided by the exemplars of every class present.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < x_t.rows(); ++r) groups[cfg.per_class ? inputs.labels[r] : 0].push_back(r);

  std::vector<int> present(inputs.labels.begin(), inputs.labels.end());
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());

  Matrix grad_x0(x_t.rows(), x_t.cols());
  for (const auto& [key, rows] : groups) {
    std::vector<std::size_t> ex_rows;
    for (std::size_t i = 0; i < cfg.exemplars.size(); ++i) {
      if (cfg.exemplar_labels.empty()) {
        ex_rows.push_back(i);
      } else if (cfg.per_class ? cfg.exemplar_labels[i] == key
                               : std::binary_search(present.begin(), present.end(), cfg.exemplar_labels[i])) {
        ex_rows.push_back(i);
      }
    }
    // No exemplar of the batch's classes: pool everything.
    if (ex_rows.empty()) {
      if (cfg.per_class) continue;
      for (std::size_t i = 0; i < cfg.exemplars.size(); ++i) ex_rows.push_back(i);
    }
    const Matrix x0_rows = x0.select_rows(rows);
    const Matrix feats = cfg.projector.apply(x0_rows);
    const Matrix ex = cfg.exemplars.features.select_rows(ex_rows);
    out.loss += chamfer(ex, feats).total;
    const Matrix g_feat = chamfer_grad(ex, feats);
    const Matrix g_rows = cfg.projector.vjp(x0_rows, g_feat);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t d = 0; d < x_t.cols(); ++d) grad_x0(rows[i], d) = g_rows(i, d);
  }

  // ∂x̂_0/∂x_t = I/√ᾱ_t − (√(1−ᾱ_t)/√ᾱ_t)·∂ε/∂x_t; stop-grad drops the second term.
  Matrix g_xt = (1.0 / sqrt_ab) * grad_x0;
  if (cfg.grad_mode == GradMode::Full) {
    if (inputs.model == nullptr) throw ConfigError("guidance: full gradient mode needs the denoiser");
    const DenoiserModel& model = *inputs.model;
    const double w = -sqrt_1mab / sqrt_ab;
    Matrix jt = inputs.omega * model.input_vjp(x_t, t, inputs.cond, grad_x0);
    if (inputs.omega != 1.0) {
      const std::vector<int> nulls(x_t.rows(), model.null_token());
      jt = jt + (1.0 - inputs.omega) * model.input_vjp(x_t, t, model.class_embedding(nulls), grad_x0);
    }
    g_xt = g_xt + w * jt;
  }
  out.grad_xt = g_xt;

  if (cfg.space == GuidanceSpace::Eps) {
    out.eps = reward_guidance(eps, -1.0 * g_xt, cfg.gamma, ab);
  } else {
    out.x_t = x_t - cfg.gamma * g_xt;
  }
  return out;
}

Matrix reward_guidance(const Matrix& eps, const Matrix& grad_reward, double gamma, double alpha_bar) {
  if (!eps.same_shape(grad_reward)) throw DimensionError("reward_guidance: shapes differ");
  if (gamma == 0.0) return eps;
  const double f = gamma * std::sqrt(1.0 - alpha_bar);
  Matrix out = eps;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= f * grad_reward.data()[i];
  return out;
}

void CadsParams::validate() const {
  if (!(tau1 < tau2)) throw ConfigError("cads: tau1 must be < tau2");
  if (noise_scale < 0.0) throw ConfigError("cads: noise scale must be >= 0");
}

double cads_gamma(std::size_t t, std::size_t T, const CadsParams& p) {
  const double u = double(t) / double(T);
  if (u <= p.tau1) return 1.0;
  if (u >= p.tau2) return 0.0;
  return (p.tau2 - u) / (p.tau2 - p.tau1);
}

Matrix cads_anneal(const Matrix& cond, std::size_t t, std::size_t T, const CadsParams& params, RngStream& rng) {
  params.validate();
  if (t < 1 || t > T) throw RangeError("cads: t outside [1, T]");
  if (params.noise_scale == 0.0) return cond;
  const double g = cads_gamma(t, T, params);
  if (g == 1.0) return cond;
  Matrix noised = cond;
  const double a = std::sqrt(g);
  const double b = params.noise_scale * std::sqrt(1.0 - g);
  for (double& v : noised.data()) v = a * v + b * rng.normal();
  if (params.psi == 0.0) return noised;
  // Restore each row's mean and spread, then blend by psi.
  Matrix out = noised;
  const double n = double(cond.cols());
  for (std::size_t r = 0; r < cond.rows(); ++r) {
    double m0 = 0, m1 = 0, s0 = 0, s1 = 0;
    for (std::size_t c = 0; c < cond.cols(); ++c) {
      m0 += cond(r, c) / n;
      m1 += noised(r, c) / n;
    }
    for (std::size_t c = 0; c < cond.cols(); ++c) {
      s0 += (cond(r, c) - m0) * (cond(r, c) - m0) / n;
      s1 += (noised(r, c) - m1) * (noised(r, c) - m1) / n;
    }
    s0 = std::sqrt(s0);
    s1 = std::sqrt(s1);
    if (s1 == 0.0) continue;
    for (std::size_t c = 0; c < cond.cols(); ++c) {
      const double rescaled = (noised(r, c) - m1) / s1 * s0 + m0;
      out(r, c) = params.psi * rescaled + (1.0 - params.psi) * noised(r, c);
    }
  }
  return out;
}

}  // namespace chamferlab
