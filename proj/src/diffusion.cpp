#include "chamferlab/diffusion.hpp"

#include <cmath>

#include "chamferlab/errors.hpp"

namespace chamferlab {

void TrainConfig::validate() const {
  if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ConfigError("train config: p_uncond must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.p_uncond = j.value("p_uncond", c.p_uncond);
  c.optimizer = optimizer_from_name(j.value("optimizer", optimizer_name(c.optimizer)));
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"p_uncond", c.p_uncond}, {"optimizer", optimizer_name(c.optimizer)}, {"seed", c.seed}};
}

TrainResult train(DenoiserModel model, const LabeledSet& data, const NoiseSchedule& sched, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw TrainingError("train: dataset is empty");
  if (data.dim() != model.arch().dim) throw DimensionError("train: data dimension does not match model");
  for (int l : data.class_labels)
    if (l < 0 || static_cast<std::size_t>(l) >= model.arch().classes) throw RangeError("train: label out of range");

  TrainResult result;
  result.loss_curve.reserve(cfg.steps);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  RngStream rng(cfg.seed, 21);
  const std::size_t T = sched.steps();
  const std::size_t B = cfg.batch_size;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> rows(B);
    std::vector<std::size_t> ts(B);
    std::vector<int> labels(B);
    Matrix x_t(B, data.dim());
    Matrix eps = gauss(rng, B, data.dim());
    for (std::size_t i = 0; i < B; ++i) {
      rows[i] = rng.uniform_index(data.size());
      ts[i] = 1 + rng.uniform_index(T);
      const bool drop = rng.uniform() < cfg.p_uncond;
      labels[i] = drop ? model.null_token() : data.class_labels[rows[i]];
      const double ab = sched.alpha_bar(ts[i]);
      const double a = std::sqrt(ab);
      const double b = std::sqrt(1.0 - ab);
      for (std::size_t d = 0; d < data.dim(); ++d) x_t(i, d) = a * data.points(rows[i], d) + b * eps(i, d);
    }

    Tape tape;
    const auto vars = model.bind(tape, true);
    Var pred = model.forward_labels(tape, vars, tape.constant(x_t), ts, labels);
    Var loss = mean_row_sq_error(pred, tape.constant(eps));
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingError("train: loss diverged at step " + std::to_string(step));
    result.loss_curve.push_back(value);

    std::vector<Var> inputs;
    for (std::size_t i = 0; i < vars.mlp.weights.size(); ++i) {
      inputs.push_back(vars.mlp.weights[i]);
      inputs.push_back(vars.mlp.biases[i]);
    }
    inputs.push_back(vars.class_table);
    opt.step(model.parameters(), tape.grad(loss, inputs));
  }
  result.model = std::move(model);
  return result;
}

double denoising_loss(const DenoiserModel& model, const LabeledSet& data, const NoiseSchedule& sched, std::size_t n,
                      std::uint64_t seed) {
  RngStream rng(seed, 23);
  std::vector<std::size_t> ts(n);
  std::vector<int> labels(n);
  Matrix x_t(n, data.dim());
  const Matrix eps = gauss(rng, n, data.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = rng.uniform_index(data.size());
    ts[i] = 1 + rng.uniform_index(sched.steps());
    labels[i] = data.class_labels[row];
    const double ab = sched.alpha_bar(ts[i]);
    for (std::size_t d = 0; d < data.dim(); ++d)
      x_t(i, d) = std::sqrt(ab) * data.points(row, d) + std::sqrt(1.0 - ab) * eps(i, d);
  }
  Tape tape;
  const auto vars = model.bind(tape, false);
  Var pred = model.forward_labels(tape, vars, tape.constant(x_t), ts, labels);
  return mean_row_sq_error(pred, tape.constant(eps)).value()(0, 0);
}

Matrix ddpm_step_at(const Matrix& x_t, const Matrix& eps, double alpha, double alpha_bar, double sigma,
                    RngStream& rng) {
  if (!x_t.same_shape(eps)) throw DimensionError("ddpm_step: shapes differ");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double coef = alpha_bar < 1.0 ? (1.0 - alpha) / std::sqrt(1.0 - alpha_bar) : 0.0;
  Matrix out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = inv_sqrt_alpha * (x_t.data()[i] - coef * eps.data()[i]);
  if (sigma > 0.0)
    for (double& v : out.data()) v += sigma * rng.normal();
  return out;
}

Matrix ddpm_step(const Matrix& x_t, const Matrix& eps, std::size_t t, const NoiseSchedule& sched, RngStream& rng) {
  return ddpm_step_at(x_t, eps, sched.alpha(t), sched.alpha_bar(t), sched.sigma(t), rng);
}

}  // namespace chamferlab
