#include "chamferlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"

namespace chamferlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---- serialisation ----------------------------------------------------------

namespace {

std::string schedule_kind_name(ScheduleKind k) { return k == ScheduleKind::Cosine ? "cosine" : "linear"; }

ScheduleKind schedule_kind_from_name(const std::string& s) {
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "linear") return ScheduleKind::Linear;
  throw ConfigError("schedule: unknown kind '" + s + "'");
}

std::string space_name(GuidanceSpace s) { return s == GuidanceSpace::Xt ? "xt" : "eps"; }

GuidanceSpace space_from_name(const std::string& s) {
  if (s == "xt") return GuidanceSpace::Xt;
  if (s == "eps") return GuidanceSpace::Eps;
  throw ConfigError("guidance: unknown space '" + s + "'");
}

ojson dataset_json(const DatasetSpec& s) { return ojson::parse(to_json(s).dump()); }

ojson finetune_json(const FinetuneSpec& f) {
  ojson j;
  j["mode"] = f.mode == FinetuneMode::Refl ? "refl" : "vanilla";
  j["k"] = f.k;
  if (f.mode == FinetuneMode::Refl) j["refl"] = to_json(f.refl);
  else j["train"] = ojson::parse(to_json(f.train).dump());
  return j;
}

FinetuneSpec finetune_from_json(const nlohmann::json& j) {
  FinetuneSpec f;
  const std::string mode = j.value("mode", std::string("refl"));
  if (mode == "refl") f.mode = FinetuneMode::Refl;
  else if (mode == "vanilla") f.mode = FinetuneMode::Vanilla;
  else throw ConfigError("finetune: unknown mode '" + mode + "'");
  f.k = j.value("k", f.k);
  if (f.k == 0) throw ConfigError("finetune: k must be >= 1");
  if (j.contains("refl")) f.refl = refl_config_from_json(j.at("refl"));
  if (j.contains("train")) f.train = train_config_from_json(j.at("train"));
  return f;
}

std::uint64_t hash_json(const std::string& stage, const ojson& j) {
  return Fnv1a().text(stage).text(j.dump()).digest();
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.precision = j.at("precision");
  r.recall = j.at("recall");
  r.density = j.at("density");
  r.coverage = j.at("coverage");
  r.f1_pc = j.at("f1_pc");
  r.frechet = j.at("frechet");
  r.chamfer = j.at("chamfer");
  r.knn_k = j.at("knn_k");
  r.n_real = j.at("n_real");
  r.n_gen = j.at("n_gen");
  return r;
}

}  // namespace

ojson to_json(const DenoiserArch& a) {
  ojson j;
  j["hidden_width"] = a.hidden_width;
  j["hidden_layers"] = a.hidden_layers;
  j["time_width"] = a.time_width;
  j["class_width"] = a.class_width;
  return j;
}

DenoiserArch denoiser_arch_from_json(const nlohmann::json& j) {
  DenoiserArch a;
  a.hidden_width = j.value("hidden_width", a.hidden_width);
  a.hidden_layers = j.value("hidden_layers", a.hidden_layers);
  a.time_width = j.value("time_width", a.time_width);
  a.class_width = j.value("class_width", a.class_width);
  a.dim = j.value("dim", a.dim);
  a.classes = j.value("classes", a.classes);
  if (a.hidden_width == 0 || a.hidden_layers == 0) throw ConfigError("arch: hidden sizes must be >= 1");
  return a;
}

ojson to_json(const ReflConfig& c) {
  ojson j;
  j["lambda"] = c.lambda;
  j["T"] = c.T;
  j["t1"] = c.t1;
  j["t2"] = c.t2;
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["batch_per_class"] = c.batch_per_class;
  j["omega"] = c.omega;
  j["optimizer"] = optimizer_name(c.optimizer);
  j["seed"] = c.seed;
  return j;
}

ojson to_json(const CadsParams& c) {
  return ojson{{"tau1", c.tau1}, {"tau2", c.tau2}, {"noise_scale", c.noise_scale}, {"psi", c.psi}};
}

CadsParams cads_from_json(const nlohmann::json& j) {
  CadsParams c;
  c.tau1 = j.value("tau1", c.tau1);
  c.tau2 = j.value("tau2", c.tau2);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  c.psi = j.value("psi", c.psi);
  c.validate();
  return c;
}

ojson to_json(const ScheduleSpec& s) {
  return ojson{{"steps", s.steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end},
               {"kind", schedule_kind_name(s.kind)}};
}

ScheduleSpec schedule_spec_from_json(const nlohmann::json& j) {
  ScheduleSpec s;
  s.steps = j.value("steps", s.steps);
  s.beta_start = j.value("beta_start", s.beta_start);
  s.beta_end = j.value("beta_end", s.beta_end);
  s.kind = schedule_kind_from_name(j.value("kind", schedule_kind_name(s.kind)));
  s.build();  // validates
  return s;
}

ojson to_json(const ProjectorSpec& p) {
  ojson j;
  j["kind"] = projector_kind_name(p.kind);
  if (p.kind == ProjectorKind::RandomLinear) {
    j["out_dim"] = p.out_dim;
    j["seed"] = p.seed;
  }
  j["l2_normalize"] = p.l2_normalize;
  return j;
}

ProjectorSpec projector_spec_from_json(const nlohmann::json& j) {
  ProjectorSpec p;
  const std::string kind = j.value("kind", std::string("identity"));
  if (kind == "identity") p.kind = ProjectorKind::Identity;
  else if (kind == "random-linear") p.kind = ProjectorKind::RandomLinear;
  else throw ConfigError("projector: unsupported kind '" + kind + "'");
  p.out_dim = j.value("out_dim", p.out_dim);
  p.seed = j.value("seed", p.seed);
  p.l2_normalize = j.value("l2_normalize", p.l2_normalize);
  if (p.kind == ProjectorKind::RandomLinear && p.out_dim == 0) throw ConfigError("projector: out_dim must be >= 1");
  return p;
}

Projector ProjectorSpec::build(std::size_t dim) const {
  if (kind == ProjectorKind::RandomLinear) return Projector::random_linear(dim, out_dim, seed, l2_normalize);
  return Projector::identity(dim, l2_normalize);
}

ojson to_json(const GuidanceSpec& g) {
  ojson j;
  j["gamma"] = g.gamma;
  j["g_freq"] = g.g_freq;
  j["k"] = g.k;
  j["grad_mode"] = grad_mode_name(g.grad_mode);
  j["space"] = space_name(g.space);
  if (g.window) j["window"] = {g.window->first, g.window->second};
  j["per_class"] = g.per_class;
  return j;
}

GuidanceSpec guidance_spec_from_json(const nlohmann::json& j) {
  GuidanceSpec g;
  g.gamma = j.value("gamma", g.gamma);
  g.g_freq = j.value("g_freq", g.g_freq);
  g.k = j.value("k", g.k);
  g.grad_mode = grad_mode_from_name(j.value("grad_mode", grad_mode_name(g.grad_mode)));
  g.space = space_from_name(j.value("space", space_name(g.space)));
  if (j.contains("window")) {
    const auto& w = j.at("window");
    if (!w.is_array() || w.size() != 2) throw ConfigError("guidance: window must be [lo, hi]");
    g.window = std::make_pair(w.at(0).get<std::size_t>(), w.at(1).get<std::size_t>());
    if (g.window->first > g.window->second) throw ConfigError("guidance: window lower bound exceeds upper bound");
  }
  g.per_class = j.value("per_class", g.per_class);
  if (g.g_freq == 0) throw ConfigError("guidance: g_freq must be >= 1");
  if (g.k == 0) throw ConfigError("guidance: k must be >= 1");
  if (!(g.gamma >= 0.0)) throw ConfigError("guidance: gamma must be >= 0");
  return g;
}

ojson to_json(const SamplingSpec& s) {
  ojson j;
  j["name"] = s.name;
  j["omega"] = s.omega;
  if (s.guidance) j["guidance"] = to_json(*s.guidance);
  if (s.cads) j["cads"] = to_json(*s.cads);
  if (s.finetune) j["finetune"] = finetune_json(*s.finetune);
  j["seeds"] = s.seeds;
  return j;
}

SamplingSpec sampling_spec_from_json(const nlohmann::json& j) {
  SamplingSpec s;
  s.name = j.at("name").get<std::string>();
  s.omega = j.value("omega", s.omega);
  if (j.contains("guidance")) s.guidance = guidance_spec_from_json(j.at("guidance"));
  if (j.contains("cads")) s.cads = cads_from_json(j.at("cads"));
  if (j.contains("finetune")) s.finetune = finetune_from_json(j.at("finetune"));
  s.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
  return s;
}

void Experiment::validate() const {
  std::set<std::string> names;
  for (const auto& c : configs) {
    if (c.name.empty()) throw ConfigError("experiment: config with empty name");
    if (c.name.find_first_of(",\n\"/") != std::string::npos) {
      throw ConfigError("experiment: config name '" + c.name + "' contains a reserved character");
    }
    if (!names.insert(c.name).second) throw ConfigError("experiment: duplicate config name '" + c.name + "'");
    if (c.seeds.empty()) throw ConfigError("experiment: config '" + c.name + "' has no seeds");
  }
  dataset.validate();
  if (samples_per_class <= eval_k) throw ConfigError("experiment: samples_per_class must exceed eval k");
  if (validation_per_class <= eval_k) throw ConfigError("experiment: validation_per_class must exceed eval k");
  if (sample_batch == 0) throw ConfigError("experiment: sample batch must be >= 1");
}

ojson to_json(const Experiment& e) {
  ojson j;
  j["schema"] = kExperimentSchema;
  j["name"] = e.name;
  j["dataset"] = dataset_json(e.dataset);
  j["validation_per_class"] = e.validation_per_class;
  j["schedule"] = to_json(e.schedule);
  j["model"] = {{"arch", to_json(e.arch)}, {"train", ojson::parse(to_json(e.train).dump())}};
  j["projector"] = to_json(e.projector);
  j["eval"] = {{"k", e.eval_k}, {"samples_per_class", e.samples_per_class}, {"batch", e.sample_batch}};
  j["configs"] = ojson::array();
  for (const auto& c : e.configs) j["configs"].push_back(to_json(c));
  j["output"] = e.output.string();
  return j;
}

Experiment experiment_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  const int schema = j.value("schema", 0);
  if (schema != kExperimentSchema) {
    throw ConfigError("experiment: unsupported schema " + std::to_string(schema) + " (expected 1)");
  }
  Experiment e;
  e.name = j.value("name", std::string("experiment"));
  if (j.contains("dataset_spec")) {
    const fs::path p = base_dir / j.at("dataset_spec").get<std::string>();
    if (!fs::exists(p)) throw ConfigError("experiment: dataset spec file not found: " + p.string());
    e.dataset = dataset_spec_from_json(nlohmann::json::parse(read_text(p)));
  } else if (j.contains("dataset")) {
    e.dataset = dataset_spec_from_json(j.at("dataset"));
  } else {
    throw ConfigError("experiment: needs 'dataset' or 'dataset_spec'");
  }
  e.validation_per_class = j.value("validation_per_class", e.validation_per_class);
  if (j.contains("schedule")) e.schedule = schedule_spec_from_json(j.at("schedule"));
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("arch")) e.arch = denoiser_arch_from_json(m.at("arch"));
    if (m.contains("train")) e.train = train_config_from_json(m.at("train"));
  }
  e.arch.dim = e.dataset.dim;
  e.arch.classes = e.dataset.classes;
  e.arch.steps = e.schedule.steps;
  if (j.contains("projector")) e.projector = projector_spec_from_json(j.at("projector"));
  if (j.contains("eval")) {
    const auto& ev = j.at("eval");
    e.eval_k = ev.value("k", e.eval_k);
    e.samples_per_class = ev.value("samples_per_class", e.samples_per_class);
    e.sample_batch = ev.value("batch", e.sample_batch);
  }
  for (const auto& c : j.value("configs", nlohmann::json::array())) e.configs.push_back(sampling_spec_from_json(c));
  e.output = base_dir / j.value("output", std::string("out"));
  e.validate();
  return e;
}

Experiment load_experiment(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("experiment file not found: " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(file));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("experiment: " + file.string() + ": " + ex.what());
  }
  return experiment_from_json(j, file.parent_path());
}

void save_experiment(const fs::path& file, const Experiment& e) { write_text(file, to_json(e).dump(2) + "\n"); }

// ---- sweep ------------------------------------------------------------------

SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "omega") return SweepAxis::Omega;
  if (name == "gamma") return SweepAxis::Gamma;
  if (name == "k") return SweepAxis::K;
  throw ConfigError("sweep: unknown axis '" + name + "' (omega|gamma|k)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Omega: return "omega";
    case SweepAxis::Gamma: return "gamma";
    case SweepAxis::K: return "k";
  }
  return "?";
}

std::string format_value(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Experiment sweep(const Experiment& e, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep: no values for axis " + sweep_axis_name(axis));
  Experiment out = e;
  out.configs.clear();
  for (const auto& base : e.configs) {
    for (double v : values) {
      SamplingSpec c = base;
      c.name = base.name + "__" + sweep_axis_name(axis) + "=" + format_value(v);
      switch (axis) {
        case SweepAxis::Omega:
          c.omega = v;
          break;
        case SweepAxis::Gamma:
          if (!(v >= 0.0)) throw ConfigError("sweep: gamma must be >= 0");
          if (!c.guidance) c.guidance = GuidanceSpec{};
          c.guidance->gamma = v;
          break;
        case SweepAxis::K:
          if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("sweep: k must be a positive integer");
          if (c.finetune) c.finetune->k = std::size_t(v);
          if (c.guidance || !c.finetune) {
            if (!c.guidance) c.guidance = GuidanceSpec{};
            c.guidance->k = std::size_t(v);
          }
          break;
      }
      out.configs.push_back(std::move(c));
    }
  }
  out.validate();
  return out;
}

GuidanceConfig make_guidance(const GuidanceSpec& spec, double omega, const Projector& projector,
                             const ExemplarSet& exemplars) {
  GuidanceConfig g;
  g.gamma = spec.gamma;
  g.g_freq = spec.g_freq;
  g.omega = omega;
  g.grad_mode = spec.grad_mode;
  g.space = spec.space;
  g.projector = projector;
  g.exemplars = project(projector, exemplars.points, FeatureSource::Real);
  g.exemplar_labels = exemplars.class_labels;
  g.window = spec.window;
  g.per_class = spec.per_class;
  g.validate();
  return g;
}

// ---- stage cache ------------------------------------------------------------

struct StageCache::State {
  std::mutex mutex;
  std::map<std::string, std::shared_future<void>> inflight;
  std::map<std::string, bool> seen;  // entry name → was already on disk
};

StageCache::StageCache(fs::path dir) : dir_(std::move(dir)), state_(std::make_shared<State>()) {
  fs::create_directories(dir_);
}

fs::path StageCache::get(const std::string& stage, std::uint64_t key,
                         const std::function<void(const fs::path&)>& compute) {
  const std::string name = stage + "-" + hex64(key);
  const fs::path entry = dir_ / name;
  std::promise<void> promise;
  {
    std::unique_lock lock(state_->mutex);
    if (auto it = state_->inflight.find(name); it != state_->inflight.end()) {
      auto fut = it->second;
      lock.unlock();
      fut.get();
      return entry;
    }
    const bool on_disk = fs::exists(entry / "done");
    state_->seen.emplace(name, on_disk);
    if (on_disk) return entry;
    state_->inflight.emplace(name, promise.get_future().share());
  }
  auto finish = [&] {
    std::lock_guard lock(state_->mutex);
    state_->inflight.erase(name);
  };
  try {
    const fs::path tmp = dir_ / (".tmp-" + name);
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    compute(tmp);
    write_text(tmp / "done", name + "\n");
    fs::remove_all(entry);
    fs::rename(tmp, entry);
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
  promise.set_value();
  finish();
  return entry;
}

std::size_t StageCache::hits() const {
  std::lock_guard lock(state_->mutex);
  return std::size_t(std::count_if(state_->seen.begin(), state_->seen.end(), [](const auto& p) { return p.second; }));
}

std::size_t StageCache::misses() const {
  std::lock_guard lock(state_->mutex);
  return std::size_t(std::count_if(state_->seen.begin(), state_->seen.end(), [](const auto& p) { return !p.second; }));
}

fs::path default_cache_dir(const fs::path& output) {
  if (const char* env = std::getenv("CHAMFERLAB_CACHE"); env && *env) return env;
  return output / "cache";
}

// ---- runner -----------------------------------------------------------------

Runner::Runner(Experiment e, StageCache& cache)
    : exp_(std::move(e)), cache_(cache), sched_(exp_.schedule.build()), mutex_(std::make_unique<std::mutex>()) {
  exp_.arch.dim = exp_.dataset.dim;
  exp_.arch.classes = exp_.dataset.classes;
  exp_.arch.steps = exp_.schedule.steps;
}

Projector Runner::projector() const { return exp_.projector.build(exp_.dataset.dim); }

std::uint64_t Runner::dataset_key() const { return hash_json("dataset", dataset_json(exp_.dataset)); }

const LabeledSet& Runner::dataset() {
  std::lock_guard lock(*mutex_);
  if (!dataset_) {
    const fs::path dir =
        cache_.get("dataset", dataset_key(), [&](const fs::path& out) { save_labeled_set(out / "data", generate(exp_.dataset)); });
    dataset_ = load_labeled_set(dir / "data");
  }
  return *dataset_;
}

SplitResult Runner::split(std::uint64_t seed, std::size_t k) {
  return chamferlab::split(dataset(), k, SeedPlan::split(seed), exp_.validation_per_class);
}

std::uint64_t Runner::model_key(std::uint64_t seed) const {
  TrainConfig tc = exp_.train;
  tc.seed = SeedPlan::train(seed);
  ojson j;
  j["dataset"] = hex64(dataset_key());
  j["validation_per_class"] = exp_.validation_per_class;
  j["split_seed"] = SeedPlan::split(seed);
  j["schedule"] = to_json(exp_.schedule);
  j["arch"] = to_json(exp_.arch);
  j["train"] = ojson::parse(to_json(tc).dump());
  j["init_seed"] = SeedPlan::model_init(seed);
  return hash_json("model", j);
}

DenoiserModel Runner::base_model(std::uint64_t seed) {
  const fs::path dir = cache_.get("model", model_key(seed), [&](const fs::path& out) {
    TrainConfig tc = exp_.train;
    tc.seed = SeedPlan::train(seed);
    const SplitResult sp = split(seed, 1);
    const TrainResult tr = train(DenoiserModel(exp_.arch, SeedPlan::model_init(seed)), sp.train, sched_, tc);
    tr.model.save(out / "model", sched_);
  });
  return DenoiserModel::load(dir / "model");
}

std::uint64_t Runner::tuned_key(const SamplingSpec& cfg, std::uint64_t seed) const {
  if (!cfg.finetune) return model_key(seed);
  ojson j;
  j["model"] = hex64(model_key(seed));
  j["finetune"] = finetune_json(*cfg.finetune);
  j["projector"] = to_json(exp_.projector);
  j["seed"] = SeedPlan::finetune(seed);
  return hash_json("finetune", j);
}

DenoiserModel Runner::model_for(const SamplingSpec& cfg, std::uint64_t seed) {
  const DenoiserModel base = base_model(seed);
  if (!cfg.finetune) return base;
  const FinetuneSpec& ft = *cfg.finetune;
  const fs::path dir = cache_.get("finetune", tuned_key(cfg, seed), [&](const fs::path& out) {
    const ExemplarSet ex = split(seed, ft.k).exemplars;
    DenoiserModel tuned;
    if (ft.mode == FinetuneMode::Refl) {
      ReflConfig rc = ft.refl;
      rc.seed = SeedPlan::finetune(seed);
      rc.T = sched_.steps();
      tuned = refl_chamfer_finetune(base, ex, projector(), sched_, rc).model;
    } else {
      TrainConfig tc = ft.train;
      tc.seed = SeedPlan::finetune(seed);
      tuned = vanilla_finetune(base, ex, exp_.dataset.classes, sched_, tc);
    }
    tuned.save(out / "model", sched_);
  });
  return DenoiserModel::load(dir / "model");
}

SamplingConfig Runner::sampling_config(const SamplingSpec& cfg, std::uint64_t seed) {
  SamplingConfig sc;
  sc.omega = cfg.omega;
  sc.cads = cfg.cads;
  if (cfg.guidance) sc.guidance = make_guidance(*cfg.guidance, cfg.omega, projector(), split(seed, cfg.guidance->k).exemplars);
  return sc;
}

std::uint64_t Runner::sample_key(const SamplingSpec& cfg, std::uint64_t seed) const {
  ojson spec = to_json(cfg);
  spec.erase("name");
  spec.erase("seeds");
  ojson j;
  j["model"] = hex64(tuned_key(cfg, seed));
  j["sampling"] = spec;
  j["projector"] = to_json(exp_.projector);
  j["samples_per_class"] = exp_.samples_per_class;
  j["batch"] = exp_.sample_batch;
  j["seed"] = SeedPlan::sample(seed);
  return hash_json("samples", j);
}

LabeledSet Runner::samples(const SamplingSpec& cfg, std::uint64_t seed) {
  const fs::path dir = cache_.get("samples", sample_key(cfg, seed), [&](const fs::path& out) {
    const DenoiserModel model = model_for(cfg, seed);
    const LabeledSet gen = generate_per_class(model, sched_, sampling_config(cfg, seed), exp_.samples_per_class,
                                              exp_.sample_batch, SeedPlan::sample(seed));
    save_labeled_set(out / "samples", gen);
  });
  return load_labeled_set(dir / "samples");
}

MetricsReport Runner::metrics(const SamplingSpec& cfg, std::uint64_t seed) {
  ojson j;
  j["samples"] = hex64(sample_key(cfg, seed));
  j["k"] = exp_.eval_k;
  j["validation_per_class"] = exp_.validation_per_class;
  j["split_seed"] = SeedPlan::split(seed);
  const fs::path dir = cache_.get("eval", hash_json("eval", j), [&](const fs::path& out) {
    const Projector p = projector();
    const FeatureSet real = project(p, split(seed, 1).validation.points, FeatureSource::Real);
    const FeatureSet gen = project(p, samples(cfg, seed).points);
    write_text(out / "metrics.json", to_json(evaluate(real, gen, exp_.eval_k)).dump(2) + "\n");
  });
  return metrics_from_json(nlohmann::json::parse(read_text(dir / "metrics.json")));
}

// ---- results ----------------------------------------------------------------

namespace {

constexpr const char* kColumns[] = {"config", "seed",    "status",  "precision", "recall", "density", "coverage",
                                    "f1_pc",  "frechet", "chamfer", "knn_k",     "n_real", "n_gen"};

std::string num(double v) { return format_value(v); }

std::string clean(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

std::string row_fields(const ResultRow& r) {
  std::string out = r.config + "," + std::to_string(r.seed) + "," + clean(r.status);
  if (r.status == "ok") {
    const MetricsReport& m = r.metrics;
    for (double v : {m.precision, m.recall, m.density, m.coverage, m.f1_pc, m.frechet, m.chamfer}) out += "," + num(v);
    out += "," + std::to_string(m.knn_k) + "," + std::to_string(m.n_real) + "," + std::to_string(m.n_gen);
  } else {
    out += std::string(10, ',');
  }
  return out;
}

std::string stable_header() {
  std::string h;
  for (const char* c : kColumns) h += (h.empty() ? "" : ",") + std::string(c);
  return h;
}

}  // namespace

std::string results_header() { return stable_header() + ",wall_time_s\n"; }

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = results_header();
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_time);
    out += row_fields(r) + "," + buf + "\n";
  }
  return out;
}

std::uint64_t results_digest(const std::vector<ResultRow>& rows) {
  Fnv1a h;
  h.text(stable_header()).text("\n");
  for (const auto& r : rows) h.text(row_fields(r)).text("\n");
  return h.digest();
}

bool RunSummary::ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.status == "ok"; });
}

// ---- plots ------------------------------------------------------------------

namespace {

struct Frame {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  static constexpr double kW = 480, kH = 480, kPad = 40;
  double px(double x) const { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); }
  double py(double y) const { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); }
  void widen() {
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
    x0 -= mx, x1 += mx, y0 -= my, y1 += my;
  }
};

std::string svg_open(const std::string& title) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n"
                "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                Frame::kW, Frame::kH, Frame::kW, Frame::kH);
  std::string out = buf;
  std::string t;
  for (char c : title) t += c == '<' ? std::string("&lt;") : c == '&' ? std::string("&amp;") : std::string(1, c);
  out += "<text x=\"" + num(Frame::kPad) + "\" y=\"24\" font-family=\"monospace\" font-size=\"13\">" + t + "</text>\n";
  return out;
}

std::string axes(const Frame& f) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"#888\"/>\n",
                Frame::kPad, Frame::kPad, Frame::kW - 2 * Frame::kPad, Frame::kH - 2 * Frame::kPad);
  std::string out = buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-family=\"monospace\" font-size=\"10\">%.3g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">%.3g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">%.3g</text>\n",
                Frame::kPad, Frame::kH - Frame::kPad + 14, f.x0, Frame::kW - Frame::kPad, Frame::kH - Frame::kPad + 14,
                f.x1, Frame::kPad - 4, Frame::kH - Frame::kPad, f.y0);
  return out + buf;
}

}  // namespace

std::string svg_scatter(const std::string& title, const std::vector<std::pair<Matrix, std::string>>& layers) {
  Frame f{1e300, -1e300, 1e300, -1e300};
  for (const auto& [m, colour] : layers)
    for (std::size_t i = 0; i < m.rows(); ++i) {
      f.x0 = std::min(f.x0, m(i, 0)), f.x1 = std::max(f.x1, m(i, 0));
      f.y0 = std::min(f.y0, m(i, 1)), f.y1 = std::max(f.y1, m(i, 1));
    }
  if (f.x0 > f.x1) f = Frame{};
  f.widen();
  std::string out = svg_open(title) + axes(f);
  char buf[128];
  for (const auto& [m, colour] : layers) {
    out += "<g fill=\"" + colour + "\">\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.6\"/>\n", f.px(m(i, 0)), f.py(m(i, 1)));
      out += buf;
    }
    out += "</g>\n";
  }
  return out + "</svg>\n";
}

std::string svg_lines(const std::string& title, const std::string& x_label,
                      const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  Frame f{1e300, -1e300, 1e300, -1e300};
  for (const auto& [name, pts] : series)
    for (const auto& [x, y] : pts) {
      f.x0 = std::min(f.x0, x), f.x1 = std::max(f.x1, x);
      f.y0 = std::min(f.y0, y), f.y1 = std::max(f.y1, y);
    }
  if (f.x0 > f.x1) f = Frame{};
  f.widen();
  std::string out = svg_open(title) + axes(f);
  out += "<text x=\"" + num(Frame::kW / 2) + "\" y=\"" + num(Frame::kH - 8) +
         "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" + x_label + "</text>\n";
  char buf[160];
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % 6];
    std::string pts;
    for (const auto& [x, y] : series[s].second) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", f.px(x), f.py(y));
      pts += buf;
    }
    out += std::string("<polyline fill=\"none\" stroke=\"") + colour + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-family=\"monospace\" font-size=\"10\" fill=\"%s\">",
                  Frame::kPad + 6, Frame::kPad + 14 + 12 * double(s), colour);
    out += buf + series[s].first + "</text>\n";
  }
  return out + "</svg>\n";
}

// ---- run --------------------------------------------------------------------

namespace {

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  for (auto& t : pool) t.join();
}

std::string file_stem(const std::string& config) {
  std::string s;
  for (char c : config) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_') ? c : '_';
  return s;
}

// Config name with any "__k=<v>" segment removed: the series a k-sweep point belongs to.
std::string k_series(const std::string& name) {
  std::string out;
  std::size_t pos = 0;
  bool first = true;
  while (true) {
    const std::size_t next = name.find("__", pos);
    const std::string part = name.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (first || part.rfind("k=", 0) != 0) out += (first ? "" : "__") + part;
    first = false;
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  return out;
}

}  // namespace

RunSummary run(const Experiment& e, const RunOptions& options) {
  e.validate();
  StageCache cache(options.cache_dir ? *options.cache_dir : default_cache_dir(e.output));
  Runner runner(e, cache);
  RunSummary summary;

  struct Task {
    std::size_t config;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  std::set<std::uint64_t> seeds;
  for (std::size_t c = 0; c < e.configs.size(); ++c)
    for (std::uint64_t s : e.configs[c].seeds) {
      tasks.push_back({c, s});
      seeds.insert(s);
    }

  // Base models first so concurrent configs never wait on a shared training run.
  const std::vector<std::uint64_t> seed_list(seeds.begin(), seeds.end());
  std::vector<std::string> seed_errors(seed_list.size());
  if (!tasks.empty()) {
    try {
      runner.dataset();
    } catch (const std::exception&) {
      // Reported per row below.
    }
  }
  parallel_for(seed_list.size(), options.jobs, [&](std::size_t i) {
    try {
      runner.base_model(seed_list[i]);
    } catch (const std::exception&) {
    }
  });

  summary.rows.resize(tasks.size());
  parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultRow& row = summary.rows[i];
    row.config = e.configs[tasks[i].config].name;
    row.seed = tasks[i].seed;
    try {
      // Visit every stage so a rerun reports the same stage set, all hits.
      const SamplingSpec& cfg = e.configs[tasks[i].config];
      runner.model_for(cfg, tasks[i].seed);
      runner.samples(cfg, tasks[i].seed);
      row.metrics = runner.metrics(cfg, tasks[i].seed);
    } catch (const std::exception& ex) {
      row.status = std::string("error: ") + ex.what();
    }
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  summary.cache_hits = cache.hits();
  summary.stages = cache.hits() + cache.misses();
  if (!options.write_artifacts) return summary;

  fs::create_directories(e.output);
  ojson artifacts;
  write_text(e.output / "results.csv", results_csv(summary.rows));
  artifacts["results"] = "results.csv";
  summary.artifacts.push_back(e.output / "results.csv");

  // One scatter per config from its first successful seed.
  ojson scatter = ojson::object();
  if (e.dataset.dim == 2) {
    for (std::size_t c = 0; c < e.configs.size(); ++c) {
      const auto& cfg = e.configs[c];
      auto it = std::find_if(summary.rows.begin(), summary.rows.end(),
                             [&](const ResultRow& r) { return r.config == cfg.name && r.status == "ok"; });
      if (it == summary.rows.end()) continue;
      const SplitResult sp = runner.split(it->seed, cfg.guidance ? cfg.guidance->k : 1);
      std::vector<std::pair<Matrix, std::string>> layers{{sp.validation.points, "#c8c8c8"},
                                                         {runner.samples(cfg, it->seed).points, "#1f77b4"}};
      if (cfg.guidance) layers.emplace_back(sp.exemplars.points, "#d62728");
      const std::string file = "scatter_" + file_stem(cfg.name) + ".svg";
      write_text(e.output / file, svg_scatter(cfg.name + " seed " + std::to_string(it->seed), layers));
      scatter[cfg.name] = file;
      summary.artifacts.push_back(e.output / file);
    }
  }
  artifacts["scatter"] = scatter;

  // k-sweep: mean metrics per (series, k) over successful seeds.
  std::map<std::pair<std::string, std::size_t>, std::vector<const ResultRow*>> by_k;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& cfg = e.configs[tasks[i].config];
    if (summary.rows[i].status != "ok") continue;
    std::size_t k = 0;
    if (cfg.guidance) k = cfg.guidance->k;
    else if (cfg.finetune) k = cfg.finetune->k;
    else continue;
    by_k[{k_series(cfg.name), k}].push_back(&summary.rows[i]);
  }
  std::string ksweep = "series,k,n,precision,coverage,f1_pc\n";
  std::map<std::string, std::vector<std::pair<double, double>>> lines;
  for (const auto& [key, rows] : by_k) {
    double p = 0, c = 0, f1 = 0;
    for (const ResultRow* r : rows) p += r->metrics.precision, c += r->metrics.coverage, f1 += r->metrics.f1_pc;
    const double n = double(rows.size());
    ksweep += key.first + "," + std::to_string(key.second) + "," + std::to_string(rows.size()) + "," + num(p / n) +
              "," + num(c / n) + "," + num(f1 / n) + "\n";
    lines[key.first].emplace_back(double(key.second), c / n);
  }
  write_text(e.output / "ksweep.csv", ksweep);
  artifacts["ksweep_data"] = "ksweep.csv";
  summary.artifacts.push_back(e.output / "ksweep.csv");
  write_text(e.output / "ksweep.svg",
             svg_lines("coverage vs k", "k", {lines.begin(), lines.end()}));
  artifacts["ksweep_plot"] = "ksweep.svg";
  summary.artifacts.push_back(e.output / "ksweep.svg");

  ojson report;
  report["schema"] = kExperimentSchema;
  report["experiment"] = e.name;
  report["experiment_digest"] = hex64(hash_json("experiment", [&] {
    ojson j = to_json(e);
    j.erase("output");
    return j;
  }()));
  report["results_digest"] = hex64(results_digest(summary.rows));
  report["artifacts"] = artifacts;
  report["configs"] = ojson::array();
  for (const auto& c : e.configs) report["configs"].push_back(to_json(c));
  report["rows"] = ojson::array();
  for (const auto& r : summary.rows) {
    ojson j;
    j["config"] = r.config;
    j["seed"] = r.seed;
    j["status"] = r.status;
    if (r.status == "ok") j["metrics"] = to_json(r.metrics);
    report["rows"].push_back(j);
  }
  write_text(e.output / "report.json", report.dump(2) + "\n");
  summary.artifacts.push_back(e.output / "report.json");
  return summary;
}

Generator sampler_generator(DenoiserModel model, NoiseSchedule sched, SamplingConfig config, std::size_t batch) {
  return [model = std::move(model), sched = std::move(sched), config = std::move(config), batch](std::size_t n,
                                                                                              std::uint64_t seed) {
    const std::size_t classes = model.arch().classes;
    if (n % classes != 0) throw ConfigError("generator: budget must be a multiple of the class count");
    return generate_per_class(model, sched, config, n / classes, batch, seed);
  };
}

}  // namespace chamferlab
