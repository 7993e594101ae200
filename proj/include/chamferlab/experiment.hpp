#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chamferlab/chamfer.hpp"
#include "chamferlab/datagen.hpp"
#include "chamferlab/denoiser.hpp"
#include "chamferlab/diffusion.hpp"
#include "chamferlab/finetune.hpp"
#include "chamferlab/metrics.hpp"
#include "chamferlab/sampler.hpp"
#include "chamferlab/utility.hpp"

namespace chamferlab {

inline constexpr int kExperimentSchema = 1;

struct ScheduleSpec {
  std::size_t steps = kDefaultSteps;
  double beta_start = 1e-4;
  double beta_end = 0.999;
  ScheduleKind kind = ScheduleKind::Cosine;

  NoiseSchedule build() const { return make_schedule(steps, beta_start, beta_end, kind); }
};

// Projector used for guidance, fine-tuning rewards and metrics.
struct ProjectorSpec {
  ProjectorKind kind = ProjectorKind::Identity;
  std::size_t out_dim = 0;  // random_linear only
  std::uint64_t seed = 0;
  bool l2_normalize = false;

  Projector build(std::size_t dim) const;
};

struct GuidanceSpec {
  double gamma = 10.0;
  std::size_t g_freq = 5;
  std::size_t k = 32;
  GradMode grad_mode = GradMode::StopGrad;
  GuidanceSpace space = GuidanceSpace::Xt;
  std::optional<std::pair<std::size_t, std::size_t>> window;
  bool per_class = false;
};

enum class FinetuneMode { Vanilla, Refl };

struct FinetuneSpec {
  FinetuneMode mode = FinetuneMode::Refl;
  std::size_t k = 32;
  ReflConfig refl;    // mode refl
  TrainConfig train;  // mode vanilla
};

struct SamplingSpec {
  std::string name;
  double omega = 1.0;
  std::optional<GuidanceSpec> guidance;
  std::optional<CadsParams> cads;
  std::optional<FinetuneSpec> finetune;
  std::vector<std::uint64_t> seeds;
};

// Replicate seed s drives every stage through fixed offsets, so two configs
// that share s share the split and the trained model.
struct SeedPlan {
  static std::uint64_t split(std::uint64_t s) { return 100 + s; }
  static std::uint64_t train(std::uint64_t s) { return 200 + s; }
  static std::uint64_t model_init(std::uint64_t s) { return 300 + s; }
  static std::uint64_t sample(std::uint64_t s) { return 400 + s; }
  static std::uint64_t finetune(std::uint64_t s) { return 500 + s; }
};

struct Experiment {
  std::string name;
  DatasetSpec dataset;
  std::size_t validation_per_class = kDefaultValidationPerClass;
  ScheduleSpec schedule;
  DenoiserArch arch;  // dim and classes are taken from the dataset
  TrainConfig train;  // seed is replaced per replicate
  ProjectorSpec projector;
  std::size_t eval_k = kDefaultMetricK;
  std::size_t samples_per_class = 256;
  std::size_t sample_batch = 256;
  std::vector<SamplingSpec> configs;
  std::filesystem::path output = "out";

  void validate() const;
};

nlohmann::ordered_json to_json(const Experiment& e);
nlohmann::ordered_json to_json(const GuidanceSpec& g);
nlohmann::ordered_json to_json(const SamplingSpec& s);
nlohmann::ordered_json to_json(const DenoiserArch& a);
nlohmann::ordered_json to_json(const ReflConfig& c);
nlohmann::ordered_json to_json(const CadsParams& c);
nlohmann::ordered_json to_json(const ScheduleSpec& s);
nlohmann::ordered_json to_json(const ProjectorSpec& p);

DenoiserArch denoiser_arch_from_json(const nlohmann::json& j);
GuidanceSpec guidance_spec_from_json(const nlohmann::json& j);
CadsParams cads_from_json(const nlohmann::json& j);
ScheduleSpec schedule_spec_from_json(const nlohmann::json& j);
ProjectorSpec projector_spec_from_json(const nlohmann::json& j);
SamplingSpec sampling_spec_from_json(const nlohmann::json& j);

// `base_dir` resolves relative paths (dataset_spec, output).
Experiment experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Experiment load_experiment(const std::filesystem::path& file);
void save_experiment(const std::filesystem::path& file, const Experiment& e);

enum class SweepAxis { Omega, Gamma, K };
SweepAxis sweep_axis_from_name(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);
// Every config × every value, named <base>__<axis>=<value>.
Experiment sweep(const Experiment& e, SweepAxis axis, const std::vector<double>& values);
std::string format_value(double v);

// Turns a guidance spec into a sampler config for the given exemplars.
GuidanceConfig make_guidance(const GuidanceSpec& spec, double omega, const Projector& projector,
                             const ExemplarSet& exemplars);

// Content-addressed stage outputs: <dir>/<stage>-<key>/ with a `done`
// marker written last. Thread safe; concurrent requests for one key compute once.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path dir);
  const std::filesystem::path& dir() const { return dir_; }
  // Runs `compute(tmp_dir)` unless the entry exists; returns the entry directory.
  std::filesystem::path get(const std::string& stage, std::uint64_t key,
                            const std::function<void(const std::filesystem::path&)>& compute);
  std::size_t hits() const;
  std::size_t misses() const;

 private:
  struct State;
  std::filesystem::path dir_;
  std::shared_ptr<State> state_;
};

// Cache dir from CHAMFERLAB_CACHE, else <output>/cache.
std::filesystem::path default_cache_dir(const std::filesystem::path& output);

struct ResultRow {
  std::string config;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or the error message
  MetricsReport metrics;
  double wall_time = 0.0;     // seconds, excluded from the results digest
};

std::string results_header();
std::string results_csv(const std::vector<ResultRow>& rows);
// FNV digest of results.csv with the wall-time column dropped.
std::uint64_t results_digest(const std::vector<ResultRow>& rows);

struct RunOptions {
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> cache_dir;
  bool write_artifacts = true;
};

struct RunSummary {
  std::vector<ResultRow> rows;
  std::size_t stages = 0;
  std::size_t cache_hits = 0;
  bool ok() const;
  std::vector<std::filesystem::path> artifacts;
};

// Stage-level access, used by run() and by callers that need the
// intermediate objects (trained models, samples).
class Runner {
 public:
  Runner(Experiment e, StageCache& cache);

  const Experiment& experiment() const { return exp_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const LabeledSet& dataset();
  SplitResult split(std::uint64_t seed, std::size_t k);
  DenoiserModel base_model(std::uint64_t seed);
  DenoiserModel model_for(const SamplingSpec& cfg, std::uint64_t seed);
  LabeledSet samples(const SamplingSpec& cfg, std::uint64_t seed);
  MetricsReport metrics(const SamplingSpec& cfg, std::uint64_t seed);
  // Sampler configuration for a spec and replicate (exemplars included).
  SamplingConfig sampling_config(const SamplingSpec& cfg, std::uint64_t seed);
  Projector projector() const;

 private:
  std::uint64_t dataset_key() const;
  std::uint64_t model_key(std::uint64_t seed) const;
  std::uint64_t tuned_key(const SamplingSpec& cfg, std::uint64_t seed) const;
  std::uint64_t sample_key(const SamplingSpec& cfg, std::uint64_t seed) const;

  Experiment exp_;
  StageCache& cache_;
  NoiseSchedule sched_;
  std::optional<LabeledSet> dataset_;
  std::unique_ptr<std::mutex> mutex_;
};

RunSummary run(const Experiment& e, const RunOptions& options = {});

// Class-balanced draws from a diffusion model: n / classes per class.
Generator sampler_generator(DenoiserModel model, NoiseSchedule sched, SamplingConfig config, std::size_t batch);

// Hand-written SVG primitives.
std::string svg_scatter(const std::string& title, const std::vector<std::pair<Matrix, std::string>>& layers);
std::string svg_lines(const std::string& title, const std::string& x_label,
                      const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series);

}  // namespace chamferlab
