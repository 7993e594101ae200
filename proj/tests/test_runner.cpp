#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <set>
#include <thread>
#include <unistd.h>

#include "chamferlab/errors.hpp"
#include "chamferlab/experiment.hpp"
#include "chamferlab/io.hpp"

using namespace chamferlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("chamferlab_runner_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Experiment tiny(const fs::path& out) {
  Experiment e;
  e.name = "tiny";
  e.dataset.classes = 2;
  e.dataset.modes = 2;
  e.dataset.points_per_class = 120;
  e.dataset.seed = 4;
  e.validation_per_class = 40;
  e.arch.hidden_width = 16;
  e.arch.hidden_layers = 2;
  e.train.steps = 100;
  e.train.batch_size = 32;
  e.eval_k = 3;
  e.samples_per_class = 24;
  e.sample_batch = 24;
  e.output = out;
  SamplingSpec plain;
  plain.name = "plain";
  plain.seeds = {0, 1};
  SamplingSpec guided;
  guided.name = "guided";
  guided.guidance = GuidanceSpec{};
  guided.guidance->k = 4;
  guided.guidance->gamma = 1.0;
  guided.guidance->window = std::make_pair<std::size_t, std::size_t>(1, 35);
  guided.seeds = {0};
  e.configs = {plain, guided};
  return e;
}

std::string without_wall_time(const std::string& csv) {
  std::string out, line;
  std::stringstream ss(csv);
  while (std::getline(ss, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST(Sweep, SingleValueSuffixesName) {
  const Experiment x = sweep(tiny("out"), SweepAxis::Omega, {2.0});
  ASSERT_EQ(x.configs.size(), 2u);
  EXPECT_EQ(x.configs[0].name, "plain__omega=2");
  EXPECT_EQ(x.configs[0].omega, 2.0);
  EXPECT_EQ(x.configs[1].name, "guided__omega=2");
}

TEST(Sweep, KValuesGiveOneConfigEach) {
  Experiment e = tiny("out");
  e.configs.erase(e.configs.begin());
  const Experiment x = sweep(e, SweepAxis::K, {2, 32});
  ASSERT_EQ(x.configs.size(), 2u);
  EXPECT_EQ(x.configs[0].name, "guided__k=2");
  EXPECT_EQ(x.configs[1].guidance->k, 32u);
}

TEST(Sweep, OmegaTableValues) {
  Experiment e = tiny("out");
  e.configs.resize(1);
  const Experiment x = sweep(e, SweepAxis::Omega, {1, 2, 7.5});
  ASSERT_EQ(x.configs.size(), 3u);
  EXPECT_EQ(x.configs[2].name, "plain__omega=7.5");
}

TEST(Sweep, GammaAddsGuidanceWhenMissing) {
  Experiment e = tiny("out");
  e.configs.resize(1);
  const Experiment x = sweep(e, SweepAxis::Gamma, {0.5});
  ASSERT_TRUE(x.configs[0].guidance.has_value());
  EXPECT_EQ(x.configs[0].guidance->gamma, 0.5);
}

TEST(Sweep, Errors) {
  EXPECT_THROW(sweep(tiny("out"), SweepAxis::K, {}), ConfigError);
  EXPECT_THROW(sweep(tiny("out"), SweepAxis::K, {2.5}), ConfigError);
  EXPECT_THROW(sweep_axis_from_name("beta"), ConfigError);
  // Chained sweeps compose names.
  const Experiment x = sweep(sweep(tiny("out"), SweepAxis::Omega, {1}), SweepAxis::Gamma, {3});
  EXPECT_EQ(x.configs[0].name, "plain__omega=1__gamma=3");
}

TEST(ExperimentFile, RoundTrip) {
  const fs::path dir = scratch("roundtrip");
  const Experiment e = tiny(dir / "out");
  save_experiment(dir / "a.exp", e);
  const Experiment back = load_experiment(dir / "a.exp");
  EXPECT_EQ(to_json(back).dump(), to_json(e).dump());
  fs::remove_all(dir);
}

TEST(ExperimentFile, Validation) {
  const fs::path dir = scratch("validation");
  nlohmann::json j = nlohmann::json::parse(to_json(tiny("out")).dump());
  j["schema"] = 2;
  EXPECT_THROW(experiment_from_json(j, dir), ConfigError);
  j["schema"] = 1;
  j["configs"][1]["name"] = "plain";
  EXPECT_THROW(experiment_from_json(j, dir), ConfigError);
  j["configs"][1]["name"] = "g";
  j.erase("dataset");
  j["dataset_spec"] = "missing.json";
  EXPECT_THROW(experiment_from_json(j, dir), ConfigError);
  write_text(dir / "spec.json", to_json(tiny("out").dataset).dump());
  j["dataset_spec"] = "spec.json";
  EXPECT_EQ(experiment_from_json(j, dir).dataset.points_per_class, 120u);
  fs::remove_all(dir);
}

TEST(StageCacheTest, ComputesOncePerKey) {
  const fs::path dir = scratch("cache");
  StageCache cache(dir);
  std::atomic<int> calls{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&] {
      cache.get("stage", 42, [&](const fs::path& out) {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        write_text(out / "x", "1");
      });
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(read_text(dir / ("stage-" + hex64(42)) / "x"), "1");
  StageCache again(dir);
  again.get("stage", 42, [&](const fs::path&) { ++calls; });
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(again.hits(), 1u);
  EXPECT_EQ(again.misses(), 0u);
  fs::remove_all(dir);
}

TEST(StageCacheTest, FailedComputeLeavesNoEntry) {
  const fs::path dir = scratch("cachefail");
  StageCache cache(dir);
  EXPECT_THROW(cache.get("s", 1, [](const fs::path&) { throw TrainingError("boom"); }), TrainingError);
  EXPECT_FALSE(fs::exists(dir / ("s-" + hex64(1))));
  int calls = 0;
  cache.get("s", 1, [&](const fs::path&) { ++calls; });
  EXPECT_EQ(calls, 1);
  fs::remove_all(dir);
}

TEST(Run, EmptyConfigListWritesHeaderOnly) {
  const fs::path dir = scratch("empty");
  Experiment e = tiny(dir / "out");
  e.configs.clear();
  const RunSummary s = run(e, {1, dir / "cache", true});
  EXPECT_TRUE(s.ok());
  EXPECT_EQ(read_text(dir / "out" / "results.csv"), results_header());
  fs::remove_all(dir);
}

TEST(Run, RerunIsAllCacheHitsAndIdentical) {
  const fs::path dir = scratch("rerun");
  const Experiment e = tiny(dir / "out");
  const RunSummary first = run(e, {1, dir / "cache", true});
  ASSERT_TRUE(first.ok()) << first.rows[0].status;
  EXPECT_EQ(first.rows.size(), 3u);
  EXPECT_LT(first.cache_hits, first.stages);
  const std::string csv1 = read_text(dir / "out" / "results.csv");
  const std::string report1 = read_text(dir / "out" / "report.json");

  const RunSummary second = run(e, {1, dir / "cache", true});
  EXPECT_EQ(second.cache_hits, second.stages);
  EXPECT_EQ(second.stages, first.stages);
  EXPECT_EQ(without_wall_time(read_text(dir / "out" / "results.csv")), without_wall_time(csv1));
  EXPECT_EQ(read_text(dir / "out" / "report.json"), report1);
  EXPECT_EQ(results_digest(first.rows), results_digest(second.rows));
  fs::remove_all(dir);
}

TEST(Run, ColdRecomputationAndJobsAreDeterministic) {
  const fs::path dir = scratch("cold");
  const RunSummary a = run(tiny(dir / "a"), {1, dir / "cache_a", true});
  const RunSummary b = run(tiny(dir / "b"), {3, dir / "cache_b", true});
  EXPECT_EQ(results_digest(a.rows), results_digest(b.rows));
  EXPECT_EQ(without_wall_time(read_text(dir / "a" / "results.csv")),
            without_wall_time(read_text(dir / "b" / "results.csv")));
  for (const char* f : {"scatter_plain.svg", "scatter_guided.svg", "ksweep.csv", "ksweep.svg"})
    EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "b" / f)) << f;
  fs::remove_all(dir);
}

TEST(Run, FailedRowIsRecordedAndOthersContinue) {
  const fs::path dir = scratch("fail");
  Experiment e = tiny(dir / "out");
  e.configs[1].guidance->k = 500;  // more exemplars than the train split holds
  const RunSummary s = run(e, {1, dir / "cache", true});
  EXPECT_FALSE(s.ok());
  EXPECT_EQ(s.rows[0].status, "ok");
  EXPECT_NE(s.rows[2].status.find("class 0"), std::string::npos) << s.rows[2].status;
  const std::string csv = read_text(dir / "out" / "results.csv");
  EXPECT_NE(csv.find("guided,0,error:"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Run, EveryOutputIsReferencedFromReport) {
  const fs::path dir = scratch("orphans");
  Experiment e = sweep(tiny(dir / "out"), SweepAxis::K, {2, 4});
  run(e, {1, dir / "cache", true});
  const std::string report = read_text(dir / "out" / "report.json");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "out")) {
    const std::string name = entry.path().filename().string();
    if (name == "report.json") continue;
    ++files;
    EXPECT_NE(report.find("\"" + name + "\""), std::string::npos) << name;
  }
  EXPECT_EQ(files, 1u + 4u + 2u);  // results, 4 scatters, k-sweep data and plot
  const std::string ksweep = read_text(dir / "out" / "ksweep.csv");
  EXPECT_NE(ksweep.find("guided,2,1,"), std::string::npos) << ksweep;
  EXPECT_NE(ksweep.find("guided,4,1,"), std::string::npos) << ksweep;
  EXPECT_NE(ksweep.find("plain,4,2,"), std::string::npos) << ksweep;
  fs::remove_all(dir);
}

TEST(Run, SharedModelAcrossConfigs) {
  const fs::path dir = scratch("shared");
  StageCache cache(dir / "cache");
  Runner r(tiny(dir / "out"), cache);
  const auto& cfgs = r.experiment().configs;
  EXPECT_EQ(r.model_for(cfgs[0], 0).checksum(), r.model_for(cfgs[1], 0).checksum());
  EXPECT_NE(r.base_model(0).checksum(), r.base_model(1).checksum());
  // γ = 0 guidance reproduces the unguided samples.
  SamplingSpec zero = cfgs[1];
  zero.guidance->gamma = 0.0;
  EXPECT_EQ(r.samples(zero, 0).points, r.samples(cfgs[0], 0).points);
  fs::remove_all(dir);
}

TEST(Results, StableColumns) {
  EXPECT_EQ(results_header(),
            "config,seed,status,precision,recall,density,coverage,f1_pc,frechet,chamfer,knn_k,n_real,n_gen,"
            "wall_time_s\n");
  ResultRow r;
  r.config = "c";
  r.metrics.precision = 0.5;
  r.wall_time = 1.0;
  ResultRow slow = r;
  slow.wall_time = 99.0;
  EXPECT_EQ(results_digest({r}), results_digest({slow}));
  EXPECT_NE(results_csv({r}), results_csv({slow}));
}

TEST(FormatValue, ShortestRoundTrip) {
  EXPECT_EQ(format_value(2.0), "2");
  EXPECT_EQ(format_value(7.5), "7.5");
  EXPECT_EQ(format_value(0.1), "0.1");
}
