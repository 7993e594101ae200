#include "chamferlab/denoiser.hpp"

#include <cmath>

#include <json.hpp>

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"
#include "chamferlab/rng.hpp"

namespace chamferlab {

Matrix time_embedding(std::span<const std::size_t> t, std::size_t width, std::size_t steps) {
  const std::size_t half = width / 2;
  Matrix out(t.size(), width);
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double scaled = 1000.0 * static_cast<double>(t[r]) / static_cast<double>(steps);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out(r, i) = std::sin(scaled * freq);
      out(r, half + i) = std::cos(scaled * freq);
    }
  }
  return out;
}

DenoiserModel::DenoiserModel(const DenoiserArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.dim == 0 || arch.classes == 0 || arch.hidden_layers == 0 || arch.hidden_width == 0) {
    throw ConfigError("denoiser: dimensions must be positive");
  }
  RngStream rng(seed, 31);
  std::size_t in = arch.dim + arch.time_width + arch.class_width;
  for (std::size_t i = 0; i < arch.hidden_layers; ++i) {
    layers_.push_back(make_linear(in, arch.hidden_width, rng));
    in = arch.hidden_width;
  }
  // Zero output layer: an untrained model predicts ε̂ = 0.
  layers_.push_back(make_linear(in, arch.dim, rng, 0.0));
  class_table_ = gauss(rng, arch.classes + 1, arch.class_width);
}

void DenoiserModel::check_labels(std::span<const int> labels, std::size_t rows) const {
  if (labels.size() != rows) throw DimensionError("denoiser: label count does not match batch");
  for (int l : labels)
    if (l < 0 || l > null_token()) throw RangeError("denoiser: label " + std::to_string(l) + " out of range");
}

Matrix DenoiserModel::class_embedding(std::span<const int> labels) const {
  std::vector<std::size_t> rows;
  rows.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l > null_token()) throw RangeError("denoiser: label " + std::to_string(l) + " out of range");
    rows.push_back(static_cast<std::size_t>(l));
  }
  return class_table_.select_rows(rows);
}

DenoiserModel::Vars DenoiserModel::bind(Tape& tape, bool trainable) const {
  Vars v{bind_layers(tape, layers_, trainable), trainable ? tape.variable(class_table_) : tape.constant(class_table_)};
  return v;
}

Var DenoiserModel::forward(Tape& tape, const Vars& vars, Var x, std::span<const std::size_t> t, Var cond) const {
  if (x.value().cols() != arch_.dim) throw DimensionError("denoiser: input has " + x.value().shape_string());
  if (t.size() != x.value().rows()) throw DimensionError("denoiser: timestep count does not match batch");
  Var temb = tape.constant(time_embedding(t, arch_.time_width, arch_.steps));
  Var input = concat_cols(concat_cols(x, temb), cond);
  return mlp_forward(input, vars.mlp, false);
}

Var DenoiserModel::forward_labels(Tape& tape, const Vars& vars, Var x, std::span<const std::size_t> t,
                                  std::span<const int> labels) const {
  check_labels(labels, x.value().rows());
  std::vector<std::size_t> rows(labels.begin(), labels.end());
  return forward(tape, vars, x, t, gather_rows(vars.class_table, rows));
}

Matrix DenoiserModel::predict(const Matrix& x, std::size_t t, std::span<const int> labels) const {
  check_labels(labels, x.rows());
  return predict_with_embedding(x, t, class_embedding(labels));
}

Matrix DenoiserModel::predict_with_embedding(const Matrix& x, std::size_t t, const Matrix& cond) const {
  Tape tape;
  const Vars vars = bind(tape, false);
  const std::vector<std::size_t> ts(x.rows(), t);
  return forward(tape, vars, tape.constant(x), ts, tape.constant(cond)).value();
}

Matrix DenoiserModel::input_vjp(const Matrix& x, std::size_t t, const Matrix& cond, const Matrix& upstream) const {
  Tape tape;
  const Vars vars = bind(tape, false);
  const std::vector<std::size_t> ts(x.rows(), t);
  Var xv = tape.variable(x);
  Var out = forward(tape, vars, xv, ts, tape.constant(cond));
  Var scalar = weighted_sum(out, upstream);
  const Var inputs[] = {xv};
  return tape.grad(scalar, inputs)[0];
}

std::vector<Matrix*> DenoiserModel::parameters() {
  std::vector<Matrix*> p;
  for (Linear& l : layers_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  p.push_back(&class_table_);
  return p;
}

std::vector<const Matrix*> DenoiserModel::parameters() const {
  std::vector<const Matrix*> p;
  for (const Linear& l : layers_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  p.push_back(&class_table_);
  return p;
}

std::uint64_t DenoiserModel::checksum() const { return chamferlab::checksum(parameters()); }

void DenoiserModel::save(const std::filesystem::path& dir, const NoiseSchedule& sched) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "chamferlab-denoiser";
  m["dim"] = arch_.dim;
  m["classes"] = arch_.classes;
  m["hidden_width"] = arch_.hidden_width;
  m["hidden_layers"] = arch_.hidden_layers;
  m["time_width"] = arch_.time_width;
  m["class_width"] = arch_.class_width;
  m["T"] = arch_.steps;
  m["schedule_kind"] = sched.kind() == ScheduleKind::Cosine ? "cosine" : "linear";
  m["betas"] = sched.betas();
  const auto params = parameters();
  std::vector<std::string> files;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = "param_" + std::to_string(i) + ".chlm";
    write_chlm(dir / name, *params[i]);
    files.push_back(name);
  }
  m["parameters"] = files;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& dir, NoiseSchedule* sched) {
  const auto m = nlohmann::json::parse(read_text(dir / "manifest.json"));
  if (m.value("format", std::string()) != "chamferlab-denoiser") throw FormatError("not a denoiser checkpoint: " + dir.string());
  DenoiserArch arch;
  arch.dim = m.at("dim");
  arch.classes = m.at("classes");
  arch.hidden_width = m.at("hidden_width");
  arch.hidden_layers = m.at("hidden_layers");
  arch.time_width = m.at("time_width");
  arch.class_width = m.at("class_width");
  arch.steps = m.at("T");
  DenoiserModel model(arch, 0);
  const auto files = m.at("parameters").get<std::vector<std::string>>();
  auto params = model.parameters();
  if (files.size() != params.size()) throw FormatError("denoiser checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix p = read_chlm(dir / files[i]);
    if (!p.same_shape(*params[i])) throw FormatError("denoiser checkpoint: shape mismatch in " + files[i]);
    *params[i] = std::move(p);
  }
  if (sched != nullptr) {
    const auto kind = m.at("schedule_kind").get<std::string>() == "cosine" ? ScheduleKind::Cosine : ScheduleKind::Linear;
    *sched = NoiseSchedule(m.at("betas").get<std::vector<double>>(), kind);
  }
  return model;
}

}  // namespace chamferlab
