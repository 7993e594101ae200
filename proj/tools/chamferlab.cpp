// chamferlab command-line front end. Every subcommand reads and writes the
// file formats of the library modules; see README.md for examples.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "chamferlab/costmodel.hpp"
#include "chamferlab/datagen.hpp"
#include "chamferlab/errors.hpp"
#include "chamferlab/experiment.hpp"
#include "chamferlab/finetune.hpp"
#include "chamferlab/io.hpp"
#include "chamferlab/metrics.hpp"
#include "chamferlab/utility.hpp"

using namespace chamferlab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("file not found: " + file.string());
  try {
    return json::parse(read_text(file));
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const nlohmann::ordered_json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  write_text(file, j.dump(2) + "\n");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Exemplar files are labelled sets stored class-major with k rows per class.
ExemplarSet load_exemplars(const fs::path& base) {
  const LabeledSet set = load_labeled_set(base);
  ExemplarSet ex;
  ex.k = set.num_classes ? set.size() / set.num_classes : 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.class_labels[i] != static_cast<int>(i / std::max<std::size_t>(ex.k, 1))) {
      throw FormatError("exemplars: " + base.string() + " is not class-major with equal counts");
    }
  }
  ex.points = set.points;
  ex.class_labels = set.class_labels;
  return ex;
}

Projector load_projector(const std::string& arg, std::size_t dim) {
  if (arg.empty() || arg == "identity") return Projector::identity(dim);
  const json j = read_json(arg);
  if (j.contains("format")) return Projector::load(arg);
  return projector_spec_from_json(j).build(dim);
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad value '" + item + "'");
    }
  }
  return out;
}

SamplingConfig sampling_from(double omega, const std::string& guidance_file, const std::string& exemplars_file,
                             const std::string& cads_file, const std::string& projector_arg, std::size_t dim) {
  SamplingConfig sc;
  sc.omega = omega;
  if (!guidance_file.empty()) {
    if (exemplars_file.empty()) throw ConfigError("guidance needs --exemplars");
    sc.guidance = make_guidance(guidance_spec_from_json(read_json(guidance_file)), omega,
                                load_projector(projector_arg, dim), load_exemplars(exemplars_file));
  }
  if (!cads_file.empty()) sc.cads = cads_from_json(read_json(cads_file));
  return sc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chamferlab: toy Chamfer-guided diffusion lab"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a dataset and optionally split it");
  std::string spec_file, out;
  std::size_t split_k = 0, validation = kDefaultValidationPerClass;
  std::uint64_t split_seed = 0;
  gen->add_option("--dataset-spec", spec_file, "dataset spec (JSON)")->required();
  gen->add_option("--out", out, "output base path")->required();
  gen->add_option("--k", split_k, "exemplars per class; also writes .train/.validation/.exemplars");
  gen->add_option("--split-seed", split_seed);
  gen->add_option("--validation", validation, "validation points per class");
  gen->callback([&] {
    const LabeledSet set = generate(dataset_spec_from_json(read_json(spec_file)));
    ensure_parent(out);
    save_labeled_set(out, set);
    if (split_k > 0) {
      const SplitResult sp = split(set, split_k, split_seed, validation);
      save_labeled_set(out + ".train", sp.train);
      save_labeled_set(out + ".validation", sp.validation);
      save_labeled_set(out + ".exemplars", sp.exemplars.as_labeled(set.num_classes));
    }
  });

  // train
  auto* tr = app.add_subcommand("train", "train the conditional denoiser");
  std::string data, config, model_dir;
  std::uint64_t seed = 0;
  tr->add_option("--data", data, "labelled set base path")->required();
  tr->add_option("--config", config, "JSON with optional arch, train, schedule objects");
  tr->add_option("--seed", seed, "initialisation seed");
  tr->add_option("--out", out, "model directory")->required();
  tr->callback([&] {
    const LabeledSet set = load_labeled_set(data);
    const json j = config.empty() ? json::object() : read_json(config);
    DenoiserArch arch = j.contains("arch") ? denoiser_arch_from_json(j.at("arch")) : DenoiserArch{};
    const ScheduleSpec ss = j.contains("schedule") ? schedule_spec_from_json(j.at("schedule")) : ScheduleSpec{};
    const TrainConfig tc = j.contains("train") ? train_config_from_json(j.at("train")) : TrainConfig{};
    arch.dim = set.dim();
    arch.classes = set.num_classes;
    arch.steps = ss.steps;
    const NoiseSchedule sched = ss.build();
    const TrainResult r = train(DenoiserModel(arch, seed), set, sched, tc);
    r.model.save(out, sched);
    std::string curve = "step,loss\n";
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
      curve += std::to_string(i) + "," + format_value(r.loss_curve[i]) + "\n";
    write_text(fs::path(out) / "loss.csv", curve);
  });

  // sample
  auto* sm = app.add_subcommand("sample", "draw class-balanced samples");
  std::size_t per_class = 256, batch = 256;
  double omega = 1.0;
  std::string guidance_file, exemplars_file, cads_file, projector_arg;
  sm->add_option("--model", model_dir, "model directory")->required();
  sm->add_option("--per-class", per_class);
  sm->add_option("--batch", batch);
  sm->add_option("--omega", omega, "CFG scale");
  sm->add_option("--guidance", guidance_file, "guidance spec (JSON)");
  sm->add_option("--exemplars", exemplars_file, "exemplar set base path");
  sm->add_option("--cads", cads_file, "CADS parameters (JSON)");
  sm->add_option("--projector", projector_arg, "projector file or spec; identity by default");
  sm->add_option("--seed", seed);
  sm->add_option("--out", out, "output base path")->required();
  sm->callback([&] {
    NoiseSchedule sched;
    const DenoiserModel model = DenoiserModel::load(model_dir, &sched);
    const SamplingConfig sc =
        sampling_from(omega, guidance_file, exemplars_file, cads_file, projector_arg, model.arch().dim);
    ensure_parent(out);
    save_labeled_set(out, generate_per_class(model, sched, sc, per_class, batch, seed));
  });

  // project
  auto* pr = app.add_subcommand("project", "map points into a feature space");
  std::string in, source = "generated";
  pr->add_option("--in", in, "labelled set base path")->required();
  pr->add_option("--projector", projector_arg, "projector file or spec; identity by default");
  pr->add_option("--source", source)->check(CLI::IsMember({"real", "generated"}));
  pr->add_option("--out", out, "feature set base path")->required();
  pr->callback([&] {
    const LabeledSet set = load_labeled_set(in);
    const Projector p = load_projector(projector_arg, set.dim());
    ensure_parent(out);
    save_feature_set(out, project(p, set.points, source == "real" ? FeatureSource::Real : FeatureSource::Generated));
  });

  // eval
  auto* ev = app.add_subcommand("eval", "precision/recall/density/coverage, F1, Fréchet and Chamfer");
  std::string real_file, gen_file;
  std::size_t metric_k = kDefaultMetricK;
  ev->add_option("--real", real_file, "real feature set base path")->required();
  ev->add_option("--gen", gen_file, "generated feature set base path")->required();
  ev->add_option("--k", metric_k);
  ev->add_option("--out", out, "report path (JSON)")->required();
  ev->callback([&] { write_json(out, to_json(evaluate(load_feature_set(real_file), load_feature_set(gen_file), metric_k))); });

  // finetune
  auto* ft = app.add_subcommand("finetune", "vanilla or Chamfer-reward fine-tuning");
  std::string mode;
  ft->add_option("--mode", mode)->required()->check(CLI::IsMember({"vanilla", "refl"}));
  ft->add_option("--model", model_dir, "model directory")->required();
  ft->add_option("--exemplars", exemplars_file, "exemplar set base path")->required();
  ft->add_option("--config", config, "TrainConfig (vanilla) or ReflConfig (refl) JSON")->required();
  ft->add_option("--projector", projector_arg, "projector file or spec; identity by default");
  ft->add_option("--out", out, "model directory")->required();
  ft->callback([&] {
    NoiseSchedule sched;
    const DenoiserModel model = DenoiserModel::load(model_dir, &sched);
    const ExemplarSet ex = load_exemplars(exemplars_file);
    const json j = read_json(config);
    if (mode == "vanilla") {
      vanilla_finetune(model, ex, model.arch().classes, sched, train_config_from_json(j)).save(out, sched);
    } else {
      const auto r = refl_chamfer_finetune(model, ex, load_projector(projector_arg, model.arch().dim), sched,
                                           refl_config_from_json(j));
      r.model.save(out, sched);
      std::string curve = "step,loss\n";
      for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
        curve += std::to_string(i) + "," + format_value(r.loss_curve[i]) + "\n";
      write_text(fs::path(out) / "loss.csv", curve);
    }
  });

  // utility
  auto* ut = app.add_subcommand("utility", "downstream classifier accuracy on synthetic data");
  std::size_t n_synth = 0, n_real = 0;
  std::string seeds = "0";
  ut->add_option("--gen-config", config, "generator config (JSON)")->required();
  ut->add_option("--n-synth", n_synth);
  ut->add_option("--n-real", n_real);
  ut->add_option("--seeds", seeds, "comma-separated seeds");
  ut->add_option("--out", out, "table path (CSV)")->required();
  ut->callback([&] {
    const json j = read_json(config);
    const fs::path base = fs::path(config).parent_path();
    const DatasetSpec spec = j.contains("dataset_spec")
                                 ? dataset_spec_from_json(read_json(base / j.at("dataset_spec").get<std::string>()))
                                 : dataset_spec_from_json(j.at("dataset"));
    const UtilityData data = utility_data(spec, j.value("validation_per_class", std::size_t{200}));
    ClassifierSpec cs;
    if (j.contains("classifier")) {
      const auto& c = j.at("classifier");
      cs.hidden_width = c.value("hidden_width", cs.hidden_width);
      cs.hidden_layers = c.value("hidden_layers", cs.hidden_layers);
      cs.steps = c.value("steps", cs.steps);
      cs.batch_size = c.value("batch_size", cs.batch_size);
      cs.learning_rate = c.value("learning_rate", cs.learning_rate);
    }
    Generator g;
    if (j.value("oracle", false)) {
      g = oracle_generator(spec);
    } else {
      NoiseSchedule sched;
      const fs::path model_path = base / j.at("model").get<std::string>();
      DenoiserModel model = DenoiserModel::load(model_path, &sched);
      const json& s = j.value("sampling", json::object());
      SamplingConfig sc;
      sc.omega = s.value("omega", 1.0);
      if (s.contains("guidance")) {
        sc.guidance = make_guidance(guidance_spec_from_json(s.at("guidance")), sc.omega, Projector::identity(spec.dim),
                                    load_exemplars(base / j.at("exemplars").get<std::string>()));
      }
      if (s.contains("cads")) sc.cads = cads_from_json(s.at("cads"));
      g = sampler_generator(std::move(model), std::move(sched), std::move(sc), j.value("batch", std::size_t{256}));
    }
    const auto runs = utility_experiment(g, n_synth, n_real, data, cs, parse_seeds(seeds));
    ensure_parent(out);
    write_text(out, utility_csv(runs));
  });

  // flops
  auto* fl = app.add_subcommand("flops", "FLOP accounting for a cost spec");
  fl->add_option("--spec", spec_file, "cost spec (JSON)")->required();
  fl->add_option("--out", out, "report path (JSON)")->required();
  fl->callback([&] { write_json(out, to_json(total_flops(load_cost_spec(spec_file)))); });

  // run
  auto* rn = app.add_subcommand("run", "run an experiment file");
  std::string exp_file, out_dir, cache_dir;
  std::size_t jobs = 1;
  rn->add_option("--exp", exp_file, "experiment file")->required();
  rn->add_option("--out", out_dir, "output directory (overrides the experiment's)");
  rn->add_option("--cache", cache_dir, "stage cache directory (overrides CHAMFERLAB_CACHE)");
  rn->add_option("--jobs", jobs, "concurrent configs")->check(CLI::PositiveNumber);
  rn->callback([&] {
    Experiment e = load_experiment(exp_file);
    if (!out_dir.empty()) e.output = out_dir;
    RunOptions opt;
    opt.jobs = jobs;
    if (!cache_dir.empty()) opt.cache_dir = cache_dir;
    const RunSummary s = run(e, opt);
    std::size_t failed = 0;
    for (const auto& r : s.rows) {
      if (r.status != "ok") {
        ++failed;
        std::cerr << r.config << " seed " << r.seed << ": " << r.status << "\n";
      }
    }
    std::printf("rows %zu, failed %zu, stages %zu, cache hits %zu\n", s.rows.size(), failed, s.stages, s.cache_hits);
    if (failed) exit_code = 2;
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "expand an experiment along one axis");
  std::string axis, values;
  sw->add_option("--exp", exp_file, "experiment file")->required();
  sw->add_option("--axis", axis, "omega | gamma | k")->required();
  sw->add_option("--values", values, "comma-separated values")->required();
  sw->add_option("--out", out, "expanded experiment file")->required();
  sw->callback([&] {
    Experiment e = load_experiment(exp_file);
    Experiment x = sweep(e, sweep_axis_from_name(axis), parse_values(values));
    // Keep the output directory relative to the new file.
    x.output = fs::relative(fs::absolute(e.output), fs::absolute(fs::path(out)).parent_path());
    ensure_parent(out);
    save_experiment(out, x);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
