#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "chamferlab/io.hpp"

using chamferlab::read_text;
using chamferlab::write_text;
namespace fs = std::filesystem;

namespace {

const fs::path kBin = CHAMFERLAB_BIN;

fs::path presets() {
  const char* dir = std::getenv("CHAMFERLAB_PRESETS");
  return dir ? dir : "presets";
}

int cli(const std::string& args) {
  const std::string cmd = "'" + kBin.string() + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Shared scratch tree: one small dataset, model and exemplar set.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("chamferlab_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text(dir / "spec.json",
               R"({"classes": 2, "modes": 2, "points_per_class": 150, "seed": 3, "center_scale": 6, "min_separation": 3})");
    write_text(dir / "train.json",
               R"({"arch": {"hidden_width": 16, "hidden_layers": 2}, "train": {"steps": 80, "batch_size": 32, "seed": 1}})");
    write_text(dir / "guidance.json", R"({"gamma": 1.0, "g_freq": 5, "k": 4, "space": "xt", "window": [1, 35]})");
    write_text(dir / "refl.json", R"({"lambda": 1e-3, "steps": 3, "batch_per_class": 4, "learning_rate": 1e-3, "seed": 2})");
    ASSERT_EQ(cli("gen-data --dataset-spec " + (dir / "spec.json").string() + " --out " + (dir / "data").string() +
                  " --k 4 --split-seed 7 --validation 50"),
              0);
    ASSERT_EQ(cli("train --data " + (dir / "data.train").string() + " --config " + (dir / "train.json").string() +
                  " --seed 5 --out " + (dir / "model").string()),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string p(const std::string& name) { return (dir / name).string(); }
};

fs::path Cli::dir;

std::string strip_wall_time(const std::string& csv) {
  std::string out, line;
  std::stringstream ss(csv);
  while (std::getline(ss, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_F(Cli, GenDataIsByteReproducible) {
  ASSERT_EQ(cli("gen-data --dataset-spec " + p("spec.json") + " --out " + p("again") + " --k 4 --split-seed 7 --validation 50"), 0);
  for (const char* ext : {".chlm", ".labels.csv", ".json"}) {
    EXPECT_EQ(read_text(p(std::string("data") + ext)), read_text(p(std::string("again") + ext))) << ext;
    EXPECT_EQ(read_text(p(std::string("data.exemplars") + ext)), read_text(p(std::string("again.exemplars") + ext)));
  }
}

TEST_F(Cli, TrainIsByteReproducible) {
  ASSERT_EQ(cli("train --data " + p("data.train") + " --config " + p("train.json") + " --seed 5 --out " + p("model2")), 0);
  for (const auto& entry : fs::directory_iterator(p("model")))
    EXPECT_EQ(read_text(entry.path()), read_text(dir / "model2" / entry.path().filename())) << entry.path();
}

TEST_F(Cli, SampleProjectEvalAreByteReproducible) {
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    ASSERT_EQ(cli("sample --model " + p("model") + " --per-class 30 --batch 16 --omega 1 --guidance " + p("guidance.json") +
                  " --exemplars " + p("data.exemplars") + " --seed 9 --out " + p("gen_" + t)),
              0);
    ASSERT_EQ(cli("project --in " + p("gen_" + t) + " --out " + p("genf_" + t)), 0);
    ASSERT_EQ(cli("project --in " + p("data.validation") + " --source real --out " + p("realf_" + t)), 0);
    ASSERT_EQ(cli("eval --real " + p("realf_" + t) + " --gen " + p("genf_" + t) + " --k 3 --out " + p("eval_" + t + ".json")), 0);
  }
  EXPECT_EQ(read_text(p("gen_a.chlm")), read_text(p("gen_b.chlm")));
  EXPECT_EQ(read_text(p("genf_a.chlm")), read_text(p("genf_b.chlm")));
  EXPECT_EQ(read_text(p("eval_a.json")), read_text(p("eval_b.json")));
  const auto report = nlohmann::json::parse(read_text(p("eval_a.json")));
  EXPECT_EQ(report.at("n_gen"), 60);
  EXPECT_EQ(report.at("n_real"), 100);
}

TEST_F(Cli, DifferentSeedsDiffer) {
  ASSERT_EQ(cli("sample --model " + p("model") + " --per-class 10 --seed 1 --out " + p("s1")), 0);
  ASSERT_EQ(cli("sample --model " + p("model") + " --per-class 10 --seed 2 --out " + p("s2")), 0);
  EXPECT_NE(read_text(p("s1.chlm")), read_text(p("s2.chlm")));
}

TEST_F(Cli, FinetuneIsByteReproducible) {
  for (const char* out : {"ft_a", "ft_b"})
    ASSERT_EQ(cli("finetune --mode refl --model " + p("model") + " --exemplars " + p("data.exemplars") + " --config " +
                  p("refl.json") + " --out " + p(out)),
              0);
  for (const auto& entry : fs::directory_iterator(p("ft_a")))
    EXPECT_EQ(read_text(entry.path()), read_text(dir / "ft_b" / entry.path().filename())) << entry.path();
  EXPECT_NE(cli("finetune --mode lora --model " + p("model") + " --exemplars " + p("data.exemplars") + " --config " +
                p("refl.json") + " --out " + p("ft_c")),
            0);
}

TEST_F(Cli, UtilityIsByteReproducible) {
  write_text(dir / "gen.json", R"({"dataset_spec": "spec.json", "validation_per_class": 40, "oracle": true,
                                   "classifier": {"steps": 50}})");
  for (const char* out : {"u_a.csv", "u_b.csv"})
    ASSERT_EQ(cli("utility --gen-config " + p("gen.json") + " --n-synth 100 --n-real 0 --seeds 1,2 --out " + p(out)), 0);
  const std::string csv = read_text(p("u_a.csv"));
  EXPECT_EQ(csv, read_text(p("u_b.csv")));
  EXPECT_EQ(csv.substr(0, 24), "seed,mix,acc_id,acc_ood\n");
}

TEST_F(Cli, FlopsPreset) {
  ASSERT_EQ(cli("flops --spec " + (presets() / "ldm15.cost").string() + " --out " + p("flops.json")), 0);
  const auto j = nlohmann::json::parse(read_text(p("flops.json")));
  EXPECT_NEAR(j.at("cfg_total").get<double>(), 66e12, 1e3);
  EXPECT_NEAR(j.at("guided_total").get<double>(), 56.4e12, 1e3);
  ASSERT_EQ(cli("flops --spec " + (presets() / "ldm15.cost").string() + " --out " + p("flops2.json")), 0);
  EXPECT_EQ(read_text(p("flops.json")), read_text(p("flops2.json")));
}

TEST_F(Cli, SweepAndRun) {
  const std::string exp = R"({
    "schema": 1, "name": "cli",
    "dataset_spec": "spec.json",
    "validation_per_class": 50,
    "model": {"arch": {"hidden_width": 16, "hidden_layers": 2}, "train": {"steps": 60, "batch_size": 32}},
    "eval": {"k": 3, "samples_per_class": 20, "batch": 20},
    "configs": [{"name": "g", "guidance": {"gamma": 1.0, "k": 2, "window": [1, 35]}, "seeds": [0]}],
    "output": "run_out"
  })";
  write_text(dir / "base.exp", exp);
  ASSERT_EQ(cli("sweep --exp " + p("base.exp") + " --axis k --values 2,4 --out " + p("swept.exp")), 0);
  const auto swept = nlohmann::json::parse(read_text(p("swept.exp")));
  ASSERT_EQ(swept.at("configs").size(), 2u);
  EXPECT_EQ(swept.at("configs")[0].at("name"), "g__k=2");
  EXPECT_EQ(swept.at("configs")[1].at("name"), "g__k=4");
  EXPECT_EQ(swept.at("schema"), 1);
  EXPECT_NE(cli("sweep --exp " + p("base.exp") + " --axis k --values , --out " + p("bad.exp")), 0);

  ASSERT_EQ(cli("run --exp " + p("swept.exp") + " --out " + p("r1") + " --cache " + p("c1")), 0);
  ASSERT_EQ(cli("run --exp " + p("swept.exp") + " --out " + p("r2") + " --cache " + p("c2") + " --jobs 2"), 0);
  EXPECT_EQ(strip_wall_time(read_text(p("r1/results.csv"))), strip_wall_time(read_text(p("r2/results.csv"))));
  EXPECT_EQ(read_text(p("r1/report.json")), read_text(p("r2/report.json")));
  EXPECT_EQ(read_text(p("r1/scatter_g__k_2.svg")), read_text(p("r2/scatter_g__k_2.svg")));
}

TEST_F(Cli, RunCacheFromEnvironment) {
  write_text(dir / "env.exp", R"({"schema": 1, "dataset_spec": "spec.json", "validation_per_class": 50,
    "model": {"arch": {"hidden_width": 8, "hidden_layers": 1}, "train": {"steps": 20, "batch_size": 16}},
    "eval": {"k": 3, "samples_per_class": 10, "batch": 10},
    "configs": [{"name": "plain", "seeds": [0]}], "output": "env_out"})");
  const std::string cmd = "CHAMFERLAB_CACHE='" + p("envcache") + "' '" + kBin.string() + "' run --exp " + p("env.exp") +
                          " > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(p("envcache")));
  EXPECT_FALSE(fs::exists(p("env_out/cache")));
  EXPECT_TRUE(fs::exists(p("env_out/results.csv")));
}

TEST_F(Cli, FailedRowExitsWithTwo) {
  write_text(dir / "fail.exp", R"({"schema": 1, "dataset_spec": "spec.json", "validation_per_class": 50,
    "model": {"arch": {"hidden_width": 8, "hidden_layers": 1}, "train": {"steps": 20, "batch_size": 16}},
    "eval": {"k": 3, "samples_per_class": 10, "batch": 10},
    "configs": [{"name": "plain", "seeds": [0]}, {"name": "toomany", "guidance": {"k": 1000}, "seeds": [0]}],
    "output": "fail_out"})");
  EXPECT_EQ(cli("run --exp " + p("fail.exp") + " --cache " + p("failcache")), 2);
  const std::string csv = read_text(p("fail_out/results.csv"));
  EXPECT_NE(csv.find("plain,0,ok,"), std::string::npos);
  EXPECT_NE(csv.find("toomany,0,error:"), std::string::npos);
}

TEST_F(Cli, EmptyConfigListSucceedsWithHeaderOnly) {
  write_text(dir / "empty.exp", R"({"schema": 1, "dataset_spec": "spec.json", "configs": [], "output": "empty_out"})");
  ASSERT_EQ(cli("run --exp " + p("empty.exp") + " --cache " + p("emptycache")), 0);
  const std::string csv = read_text(p("empty_out/results.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST_F(Cli, BadInputsFail) {
  EXPECT_EQ(cli("gen-data --dataset-spec " + p("nope.json") + " --out " + p("x")), 1);
  write_text(dir / "badspec.json", R"({"modes": 0})");
  EXPECT_EQ(cli("gen-data --dataset-spec " + p("badspec.json") + " --out " + p("x")), 1);
  write_text(dir / "schema2.exp", R"({"schema": 2, "dataset_spec": "spec.json", "configs": []})");
  EXPECT_EQ(cli("run --exp " + p("schema2.exp")), 1);
  EXPECT_NE(cli("frobnicate"), 0);
}
