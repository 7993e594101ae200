#include "chamferlab/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "chamferlab/chamfer.hpp"
#include "chamferlab/errors.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/tape.hpp"

namespace chamferlab {

DenoiserModel vanilla_finetune(const DenoiserModel& model, const ExemplarSet& exemplars, std::size_t num_classes,
                               const NoiseSchedule& sched, const TrainConfig& cfg) {
  if (exemplars.points.rows() == 0) throw TrainingError("vanilla_finetune: exemplar set is empty");
  return train(model, exemplars.as_labeled(num_classes), sched, cfg).model;
}

void ReflConfig::validate() const {
  if (!(1 <= t1 && t1 <= t2 && t2 <= T)) throw ConfigError("refl: need 1 <= t1 <= t2 <= T");
  if (!(lambda >= 0.0)) throw ConfigError("refl: lambda must be >= 0");
  if (batch_per_class == 0) throw ConfigError("refl: batch_per_class must be >= 1");
}

ReflConfig refl_config_from_json(const nlohmann::json& j) {
  ReflConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.T = j.value("T", c.T);
  c.t1 = j.value("t1", c.t1);
  c.t2 = j.value("t2", c.t2);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_per_class = j.value("batch_per_class", c.batch_per_class);
  c.omega = j.value("omega", c.omega);
  c.optimizer = optimizer_from_name(j.value("optimizer", optimizer_name(c.optimizer)));
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

ReflLoss refl_loss(const DenoiserModel& model, const Matrix& x_t, std::size_t t, std::span<const int> labels,
                   const FeatureSet& exemplar_features, std::span<const int> exemplar_labels,
                   const Projector& projector, const NoiseSchedule& sched, double lambda) {
  if (exemplar_features.projector_id != projector.id()) throw ConfigError("refl: exemplar features do not match projector");
  const double ab = sched.alpha_bar_checked(t);
  const double sqrt_ab = std::sqrt(ab);
  const double sqrt_1mab = std::sqrt(1.0 - ab);

  Tape tape;
  const auto vars = model.bind(tape, true);
  const std::vector<std::size_t> ts(x_t.rows(), t);
  Var eps = model.forward_labels(tape, vars, tape.constant(x_t), ts, labels);
  const Matrix x0 = ddim_x0_at(x_t, eps.value(), ab);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);

  ReflLoss out;
  Matrix grad_eps(x_t.rows(), x_t.cols());
  const double weight = lambda / double(by_class.size());
  for (const auto& [c, rows] : by_class) {
    std::vector<std::size_t> ex_rows;
    for (std::size_t i = 0; i < exemplar_labels.size(); ++i)
      if (exemplar_labels[i] == c) ex_rows.push_back(i);
    if (ex_rows.empty()) continue;
    const Matrix ex = exemplar_features.features.select_rows(ex_rows);
    const Matrix x0_rows = x0.select_rows(rows);
    const Matrix feats = projector.apply(x0_rows);
    out.loss += weight * chamfer(ex, feats).total;
    // ∂x̂_0/∂ε = −√(1−ᾱ)/√ᾱ
    const Matrix g_x0 = projector.vjp(x0_rows, weight * chamfer_grad(ex, feats));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t d = 0; d < x_t.cols(); ++d) grad_eps(rows[i], d) = -(sqrt_1mab / sqrt_ab) * g_x0(i, d);
  }

  std::vector<Var> inputs;
  for (std::size_t i = 0; i < vars.mlp.weights.size(); ++i) {
    inputs.push_back(vars.mlp.weights[i]);
    inputs.push_back(vars.mlp.biases[i]);
  }
  inputs.push_back(vars.class_table);
  out.grads = tape.grad(weighted_sum(eps, grad_eps), inputs);
  return out;
}

ReflResult refl_chamfer_finetune(const DenoiserModel& model, const ExemplarSet& exemplars, const Projector& projector,
                                 const NoiseSchedule& sched, const ReflConfig& cfg) {
  cfg.validate();
  if (cfg.T != sched.steps()) throw ConfigError("refl: config T does not match the schedule");
  if (exemplars.points.rows() == 0) throw TrainingError("refl: exemplar set is empty");
  const FeatureSet ex_feats = project(projector, exemplars.points, FeatureSource::Real);

  std::vector<int> classes(exemplars.class_labels.begin(), exemplars.class_labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<int> labels;
  for (int c : classes) labels.insert(labels.end(), cfg.batch_per_class, c);
  const std::vector<int> nulls(labels.size(), model.null_token());

  ReflResult result{model, {}};
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  RngStream rng(cfg.seed, 81);
  const std::size_t T = sched.steps();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t j = cfg.t1 + rng.uniform_index(cfg.t2 - cfg.t1 + 1);
    const std::size_t t_stop = std::max<std::size_t>(1, T - std::min(j, T));

    Matrix x = gauss(rng, labels.size(), model.arch().dim);
    for (std::size_t t = T; t > t_stop; --t) {
      Matrix eps = result.model.predict(x, t, labels);
      if (cfg.omega != 1.0) eps = cfg_combine(eps, result.model.predict(x, t, nulls), cfg.omega);
      x = ddpm_step(x, eps, t, sched, rng);
    }
    ReflLoss l = refl_loss(result.model, x, t_stop, labels, ex_feats, exemplars.class_labels, projector, sched, cfg.lambda);
    if (!std::isfinite(l.loss)) throw TrainingError("refl: loss diverged at step " + std::to_string(step));
    result.loss_curve.push_back(l.loss);
    opt.step(result.model.parameters(), l.grads);
  }
  return result;
}

}  // namespace chamferlab
