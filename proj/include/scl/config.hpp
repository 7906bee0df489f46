#ifndef SCL_CONFIG_HPP
#define SCL_CONFIG_HPP

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/evaluation.hpp"
#include "scl/manifest.hpp"
#include "scl/synthgen.hpp"

namespace scl {

inline constexpr int kRunConfigSchemaVersion = 1;

/// Where a task's data comes from: an on-disk manifest or the synthetic generator.
struct DatasetSource {
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthConfig> synth;
};

struct AblationOptions {
  std::vector<std::size_t> counts{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

/// Everything a command needs. Every section has defaults, so `{}` is a valid document.
struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  std::vector<DatasetSource> datasets{DatasetSource{std::nullopt, SynthConfig{}}};
  ArchId arch = ArchId::kFcn;
  std::vector<ArchId> archs{ArchId::kFcn, ArchId::kTFcn};
  BackboneConfig backbone;
  HeadConfig heads;
  SeqConfig seq;
  TrainConfig train;
  EvalOptions eval;
  AblationOptions ablation;
  std::optional<std::filesystem::path> output_dir;
  std::uint64_t seed = 0;

  /// Propagates the run seed into the synthetic generator and the trainer.
  void apply_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    for (auto& d : datasets) {
      if (d.synth) d.synth->seed = s;
    }
  }
};

inline nlohmann::json to_json(const DatasetSource& d) {
  if (d.manifest) return {{"manifest", d.manifest->string()}};
  return {{"synth", to_json(*d.synth)}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : c.datasets) ds.push_back(to_json(d));
  nlohmann::json archs = nlohmann::json::array();
  for (ArchId a : c.archs) archs.push_back(to_string(a));
  nlohmann::json j = {{"schema_version", c.schema_version},
                      {"datasets", ds},
                      {"arch", to_string(c.arch)},
                      {"archs", archs},
                      {"model", {{"backbone", to_json(c.backbone)}, {"heads", to_json(c.heads)}, {"sequence", to_json(c.seq)}}},
                      {"train", to_json(c.train)},
                      {"eval",
                       {{"threshold", c.eval.threshold},
                        {"measure_time", c.eval.measure_time},
                        {"timing_repetitions", c.eval.timing_repetitions}}},
                      {"ablation", {{"counts", c.ablation.counts}, {"seeds", c.ablation.seeds}}},
                      {"seed", c.seed}};
  if (c.output_dir) j["output_dir"] = c.output_dir->string();
  return j;
}

/// Parses and validates a run configuration. Unknown keys anywhere are rejected.
/// Relative manifest paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  detail::reject_unknown(j,
                         {"schema_version", "datasets", "arch", "archs", "model", "train", "eval", "ablation", "output_dir",
                          "seed"},
                         "config");
  RunConfig c;
  try {
    c.schema_version = j.value("schema_version", kRunConfigSchemaVersion);
    if (c.schema_version != kRunConfigSchemaVersion) {
      throw ConfigError("config.schema_version " + std::to_string(c.schema_version) + " is not supported (expected " +
                        std::to_string(kRunConfigSchemaVersion) + ")");
    }
    if (j.contains("datasets")) {
      const auto& ds = j.at("datasets");
      if (!ds.is_array() || ds.empty()) throw ConfigError("config.datasets must be a non-empty array");
      c.datasets.clear();
      for (const auto& e : ds) {
        detail::reject_unknown(e, {"manifest", "synth"}, "config.datasets[]");
        if (e.contains("manifest") == e.contains("synth")) {
          throw ConfigError("config.datasets[]: give exactly one of 'manifest' or 'synth'");
        }
        DatasetSource s;
        if (e.contains("manifest")) {
          std::filesystem::path p = e.at("manifest").get<std::string>();
          s.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        } else {
          s.synth = synth_config_from_json(e.at("synth"));
        }
        c.datasets.push_back(std::move(s));
      }
    }
    if (j.contains("arch")) c.arch = parse_arch(j.at("arch").get<std::string>());
    if (j.contains("archs")) {
      c.archs.clear();
      for (const auto& a : j.at("archs")) c.archs.push_back(parse_arch(a.get<std::string>()));
      if (c.archs.empty()) throw ConfigError("config.archs must list at least one architecture");
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::reject_unknown(m, {"backbone", "heads", "sequence"}, "config.model");
      if (m.contains("backbone")) c.backbone = backbone_config_from_json(m.at("backbone"));
      if (m.contains("heads")) c.heads = head_config_from_json(m.at("heads"));
      if (m.contains("sequence")) c.seq = seq_config_from_json(m.at("sequence"));
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::reject_unknown(e, {"threshold", "measure_time", "timing_repetitions"}, "config.eval");
      c.eval.threshold = e.value("threshold", c.eval.threshold);
      c.eval.measure_time = e.value("measure_time", c.eval.measure_time);
      c.eval.timing_repetitions = e.value("timing_repetitions", c.eval.timing_repetitions);
      if (!(c.eval.threshold > 0.0 && c.eval.threshold < 1.0)) throw ConfigError("config.eval.threshold must be in (0,1)");
      if (c.eval.timing_repetitions < 3) throw ConfigError("config.eval.timing_repetitions must be >= 3");
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      detail::reject_unknown(a, {"counts", "seeds"}, "config.ablation");
      c.ablation.counts = a.value("counts", c.ablation.counts);
      c.ablation.seeds = a.value("seeds", c.ablation.seeds);
      if (c.ablation.counts.empty() || c.ablation.seeds.empty()) throw ConfigError("config.ablation needs counts and seeds");
      for (auto k : c.ablation.counts) {
        if (k == 0) throw ConfigError("config.ablation.counts must be positive");
      }
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = detail::read_json_file(path);
  } catch (const IngestionError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/// Dataset cache root: $SCL_CACHE_DIR when set, otherwise `fallback`.
inline std::filesystem::path cache_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("SCL_CACHE_DIR"); env && *env) return env;
  return fallback;
}

/// Loads a dataset source. Synthetic data is written to the cache once, keyed by a hash
/// of its resolved config, and always read back through the manifest loader.
inline TaskDataset resolve_dataset(const DatasetSource& src, const std::filesystem::path& cache) {
  if (src.manifest) return load_manifest(*src.manifest);
  const std::string key = to_json(*src.synth).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : key) h = (h ^ ch) * 1099511628211ULL;
  char name[32];
  std::snprintf(name, sizeof name, "synth_%016llx", static_cast<unsigned long long>(h));
  const std::filesystem::path dir = cache / name;
  if (!std::filesystem::exists(dir / kManifestName)) {
    const std::filesystem::path tmp = cache / (std::string(name) + ".tmp");
    std::filesystem::remove_all(tmp);
    write_dataset(generate(*src.synth), tmp);
    std::filesystem::remove_all(dir);
    std::filesystem::rename(tmp, dir);
  }
  return load_manifest(dir);
}

}  // namespace scl

#endif  // SCL_CONFIG_HPP
