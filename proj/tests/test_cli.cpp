#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "scl/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / "scl_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    // Child processes inherit a private dataset cache.
    setenv("SCL_CACHE_DIR", (p / "cache").c_str(), 1);
    return p;
  }();
  return d;
}

nlohmann::json tiny_config() {
  return {{"datasets",
           {{{"synth",
              {{"task_id", "tiny"},
               {"num_demos_train", 2},
               {"num_demos_test", 1},
               {"frames_per_demo", {6, 8}},
               {"image_size", {32, 40}}}}}}},
          {"archs", {"FCN", "T_FCN"}},
          {"model", {{"backbone", {{"channels", {4}}, {"stride", 8}, {"feature_dim", 4}}}, {"heads", {{"hidden", 4}}}}},
          {"train", {{"epochs", 2}, {"batch_size", 8}}},
          {"eval", {{"measure_time", false}}},
          {"ablation", {{"counts", {1, 2}}, {"seeds", {0}}}}};
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SCL_CLI_PATH) + " " + args + " >" + (workdir() / "last.log").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RunConfig, EmptyDocumentIsValid) {
  const auto c = scl::run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.arch, scl::ArchId::kFcn);
  EXPECT_EQ(c.archs.size(), 2u);
  EXPECT_EQ(scl::to_json(scl::run_config_from_json(scl::to_json(c))), scl::to_json(c));
}

TEST(RunConfig, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(scl::run_config_from_json({{"epochs", 1}}), scl::ConfigError);
  EXPECT_THROW(scl::run_config_from_json({{"model", {{"backbone", {{"depth", 3}}}}}}), scl::ConfigError);
  EXPECT_THROW(scl::run_config_from_json({{"eval", {{"thresh", 0.5}}}}), scl::ConfigError);
  EXPECT_THROW(scl::run_config_from_json({{"arch", "RESNET"}}), scl::ConfigError);
  EXPECT_THROW(scl::run_config_from_json({{"schema_version", 9}}), scl::ConfigError);
}

TEST(RunConfig, SeedReachesGeneratorAndTrainer) {
  auto j = tiny_config();
  j["seed"] = 17;
  const auto c = scl::run_config_from_json(j);
  EXPECT_EQ(c.train.seed, 17u);
  EXPECT_EQ(c.datasets[0].synth->seed, 17u);
}

TEST(RunConfig, RelativeManifestResolvesAgainstConfigFile) {
  const auto c = scl::run_config_from_json({{"datasets", {{{"manifest", "data/k1"}}}}}, "/cfg");
  EXPECT_EQ(*c.datasets[0].manifest, fs::path("/cfg/data/k1"));
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --config " + (workdir() / "missing.json").string()), 2);
  EXPECT_EQ(run("train --config " + write_config("bad.json", {{"trian", {}}}).string()), 2);
}

TEST(Cli, TrainIsBitwiseReproducibleAndEvalWritesValidMetrics) {
  const auto cfg = write_config("tiny.json", tiny_config()).string();
  const fs::path a = workdir() / "run_a", b = workdir() / "run_b";
  ASSERT_EQ(run("--config " + cfg + " --out " + a.string() + " train"), 0) << slurp(workdir() / "last.log");
  ASSERT_EQ(run("--config " + cfg + " --out " + b.string() + " train"), 0);
  EXPECT_EQ(slurp(a / "curves.csv"), slurp(b / "curves.csv"));
  EXPECT_TRUE(fs::exists(a / "checkpoint" / "model.json"));
  EXPECT_TRUE(fs::exists(a / "curves.png"));

  EXPECT_EQ(run("--config " + cfg + " --out " + a.string() + " train"), 2);
  EXPECT_EQ(run("--config " + cfg + " --out " + a.string() + " --force train"), 0);

  const fs::path e = workdir() / "eval";
  ASSERT_EQ(run("--config " + cfg + " --out " + e.string() + " eval --checkpoint " + a.string()), 0)
      << slurp(workdir() / "last.log");
  const auto metrics = nlohmann::json::parse(slurp(e / "metrics.json"));
  EXPECT_TRUE(scl::validate_metrics_json(metrics).empty());
  EXPECT_EQ(metrics.at("arch_id"), "FCN");
}

TEST(Cli, SeedOverrideChangesTheRun) {
  const auto cfg = write_config("tiny.json", tiny_config()).string();
  const fs::path a = workdir() / "seed_a", b = workdir() / "seed_b";
  ASSERT_EQ(run("--config " + cfg + " --seed 1 --out " + a.string() + " train"), 0);
  ASSERT_EQ(run("--config " + cfg + " --seed 2 --out " + b.string() + " train"), 0);
  EXPECT_NE(slurp(a / "curves.csv"), slurp(b / "curves.csv"));
}

TEST(Cli, CompareAndAblateWriteTables) {
  const auto cfg = write_config("tiny.json", tiny_config()).string();
  const fs::path c = workdir() / "compare";
  ASSERT_EQ(run("--config " + cfg + " --out " + c.string() + " compare"), 0) << slurp(workdir() / "last.log");
  const std::string md = slurp(c / "comparison.md");
  EXPECT_NE(md.find("| FCN |"), std::string::npos);
  EXPECT_NE(md.find("| T_FCN |"), std::string::npos);
  EXPECT_TRUE(fs::exists(c / "comparison.csv"));

  const fs::path ab = workdir() / "ablation";
  ASSERT_EQ(run("--config " + cfg + " --out " + ab.string() + " ablate"), 0) << slurp(workdir() / "last.log");
  std::ifstream is(ab / "ablation.csv");
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);

  auto big = tiny_config();
  big["ablation"]["counts"] = {5};
  EXPECT_EQ(run("--config " + write_config("big.json", big).string() + " --out " + (workdir() / "ab2").string() + " ablate"), 2);
}

TEST(Cli, SynthWritesLoadableDataset) {
  const auto cfg = write_config("tiny.json", tiny_config()).string();
  const fs::path d = workdir() / "synth";
  ASSERT_EQ(run("--config " + cfg + " --out " + d.string() + " synth"), 0);
  const auto ds = scl::load_manifest(d);
  EXPECT_EQ(ds.train_demos.size(), 2u);
  EXPECT_EQ(ds.test_demos.size(), 1u);
}
