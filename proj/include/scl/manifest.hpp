#ifndef SCL_MANIFEST_HPP
#define SCL_MANIFEST_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/dataset.hpp"

namespace scl {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "dataset.json";
inline constexpr const char* kDefaultFramePattern = "frame_%05d.png";
inline constexpr const char* kGeometryName = "geometry.json";

/// Expands a printf-style pattern with exactly one %d / %0Nd conversion.
inline std::string format_frame_name(const std::string& pattern, std::size_t index) {
  static const std::regex conv("%(0?[0-9]*)d");
  std::smatch m;
  if (!std::regex_search(pattern, m, conv)) throw IngestionError("frame_pattern '" + pattern + "' has no %d conversion");
  std::string rest = m.suffix().str();
  if (std::regex_search(rest, conv)) throw IngestionError("frame_pattern '" + pattern + "' has more than one conversion");
  char buf[64];
  const std::string spec = "%" + m[1].str() + "zu";
  std::snprintf(buf, sizeof buf, spec.c_str(), index);
  return m.prefix().str() + buf + rest;
}

namespace detail {

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <class V>
V require_field(const nlohmann::json& obj, const char* key, const fs::path& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw IngestionError(where.string() + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw IngestionError(where.string() + ": field '" + key + "' has the wrong type");
  }
}

inline std::vector<FrameGeometry> read_geometry(const fs::path& path, std::size_t expected) {
  const auto j = read_json_file(path);
  const TaskRule rule = parse_task_rule(require_field<std::string>(j, "rule", path));
  const auto& frames = j.at("frames");
  if (!frames.is_array() || frames.size() != expected) {
    throw IngestionError(path.string() + ": geometry entries do not match frame count");
  }
  std::vector<FrameGeometry> out;
  for (const auto& f : frames) out.push_back({rule, box_from_json(f.at("object")), box_from_json(f.at("goal"))});
  return out;
}

inline void write_geometry(const fs::path& path, const Demonstration& d) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : d.frames) frames.push_back({{"object", to_json(f.geometry->object)}, {"goal", to_json(f.geometry->goal)}});
  nlohmann::json j = {{"rule", to_string(d.frames.front().geometry->rule)}, {"frames", frames}};
  std::ofstream(path) << j.dump(1) << '\n';
}

inline Demonstration load_demo_entry(const nlohmann::json& e, const fs::path& root, const fs::path& manifest,
                                     const std::string& task_id, const std::string& split) {
  const auto demo_id = require_field<std::string>(e, "demo_id", manifest);
  const fs::path where = manifest.string() + " [" + split + "/" + demo_id + "]";
  const auto frame_dir = root / require_field<std::string>(e, "frame_dir", where);
  const auto pattern = e.contains("frame_pattern") ? require_field<std::string>(e, "frame_pattern", where)
                                                   : std::string(kDefaultFramePattern);
  const auto num_frames = require_field<long>(e, "num_frames", where);
  const auto onset = require_field<long>(e, "success_onset", where);
  const Domain domain = parse_domain(require_field<std::string>(e, "domain", where));
  const Domain expected = split == "train" ? Domain::kSource : Domain::kTarget;
  if (domain != expected) {
    throw IngestionError(where.string() + ": " + split + " demonstrations must be tagged '" + to_string(expected) + "'");
  }
  if (num_frames < 2) throw IngestionError(where.string() + ": num_frames must be >= 2");
  if (onset < 0 || onset > num_frames) {
    throw IngestionError(where.string() + ": success_onset " + std::to_string(onset) + " outside [0, num_frames]");
  }
  if (!fs::is_directory(frame_dir)) throw IngestionError(where.string() + ": frame_dir " + frame_dir.string() + " not found");
  std::vector<Frame> frames(static_cast<std::size_t>(num_frames));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const fs::path p = frame_dir / format_frame_name(pattern, i);
    if (!fs::exists(p)) throw IngestionError(where.string() + ": missing frame " + p.string());
    frames[i].pixels = read_png(p);
    if (frames[i].pixels.channels != 3) throw IngestionError(p.string() + ": expected RGB frame");
  }
  const fs::path extra = frame_dir / format_frame_name(pattern, frames.size());
  if (fs::exists(extra)) {
    throw IngestionError(where.string() + ": frame count mismatch, found " + extra.string() + " beyond num_frames");
  }
  if (fs::exists(frame_dir / kGeometryName)) {
    const auto geo = read_geometry(frame_dir / kGeometryName, frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i].geometry = geo[i];
  }
  return label_frames(std::move(frames), static_cast<std::size_t>(onset), demo_id, task_id, domain);
}

inline void check_declared_counts(const TaskDataset& ds, const fs::path& manifest) {
  if (!ds.metadata.contains("declared_counts")) return;
  const auto& dc = ds.metadata["declared_counts"];
  auto check = [&](const char* split, const std::vector<Demonstration>& demos) {
    if (!dc.contains(split)) return;
    const ClassCounts c = class_counts(demos);
    const auto ns = dc[split].value("ns", -1L), s = dc[split].value("s", -1L);
    if (ns != static_cast<long>(c.non_success) || s != static_cast<long>(c.success)) {
      throw IngestionError(manifest.string() + ": declared " + split + " counts " + std::to_string(ns) + "/" +
                           std::to_string(s) + " but frames give " + std::to_string(c.non_success) + "/" +
                           std::to_string(c.success));
    }
  };
  check("train", ds.train_demos);
  check("test", ds.test_demos);
}

}  // namespace detail

/// Loads and validates a task directory holding dataset.json.
inline TaskDataset load_manifest(const fs::path& path) {
  const fs::path root = fs::is_directory(path) ? path : path.parent_path();
  const fs::path manifest = fs::is_directory(path) ? path / kManifestName : path;
  if (!fs::exists(manifest)) throw IngestionError("no " + std::string(kManifestName) + " in " + root.string());
  const auto j = detail::read_json_file(manifest);
  TaskDataset ds;
  ds.task_id = detail::require_field<std::string>(j, "task_id", manifest);
  const double rate = detail::require_field<double>(j, "sampling_rate_hz", manifest);
  if (j.contains("metadata")) ds.metadata = j["metadata"];
  ds.metadata["sampling_rate_hz"] = rate;
  if (!j.contains("splits") || !j["splits"].is_object()) throw IngestionError(manifest.string() + ": missing 'splits'");
  std::set<std::string> ids;
  for (const char* split : {"train", "test"}) {
    if (!j["splits"].contains(split) || !j["splits"][split].is_array()) {
      throw IngestionError(manifest.string() + ": missing split '" + split + "'");
    }
    auto& target = std::string(split) == "train" ? ds.train_demos : ds.test_demos;
    for (const auto& e : j["splits"][split]) {
      target.push_back(detail::load_demo_entry(e, root, manifest, ds.task_id, split));
      if (!ids.insert(target.back().demo_id).second) {
        throw IngestionError(manifest.string() + ": demo_id '" + target.back().demo_id + "' appears more than once");
      }
    }
  }
  if (ds.train_demos.empty()) throw IngestionError(manifest.string() + ": no training demonstrations");
  detail::check_declared_counts(ds, manifest);
  return ds;
}

/// Writes frames (PNG), optional geometry sidecars and dataset.json under `root`.
inline void write_dataset(const TaskDataset& ds, const fs::path& root, double sampling_rate_hz = 10.0, int png_level = 6) {
  fs::create_directories(root);
  nlohmann::json splits = {{"train", nlohmann::json::array()}, {"test", nlohmann::json::array()}};
  auto emit = [&](const char* split, const std::vector<Demonstration>& demos) {
    for (const auto& d : demos) {
      const fs::path rel = fs::path("frames") / split / d.demo_id;
      fs::create_directories(root / rel);
      for (std::size_t i = 0; i < d.length(); ++i) {
        write_png(root / rel / format_frame_name(kDefaultFramePattern, i), d.frames[i].pixels, png_level);
      }
      if (!d.frames.empty() && d.frames.front().geometry) detail::write_geometry(root / rel / kGeometryName, d);
      splits[split].push_back({{"demo_id", d.demo_id},
                               {"frame_dir", rel.generic_string()},
                               {"frame_pattern", kDefaultFramePattern},
                               {"num_frames", d.length()},
                               {"success_onset", d.success_onset},
                               {"domain", to_string(d.domain)}});
    }
  };
  emit("train", ds.train_demos);
  emit("test", ds.test_demos);
  nlohmann::json meta = ds.metadata;
  meta.erase("sampling_rate_hz");
  nlohmann::json j = {{"task_id", ds.task_id}, {"sampling_rate_hz", sampling_rate_hz}, {"splits", splits}, {"metadata", meta}};
  std::ofstream(root / kManifestName) << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Converters for the two source layouts
// ---------------------------------------------------------------------------

inline constexpr std::size_t kKitchenHeight = 240;
inline constexpr std::size_t kKitchenWidth = 320;

namespace detail {

struct PendingDemo {
  std::string demo_id;
  std::vector<fs::path> frames;
  std::size_t onset = 0;
};

inline nlohmann::json emit_converted(const std::vector<PendingDemo>& demos, const char* split, const fs::path& out_root) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& d : demos) {
    const fs::path rel = fs::path("frames") / split / d.demo_id;
    fs::create_directories(out_root / rel);
    for (std::size_t i = 0; i < d.frames.size(); ++i) {
      fs::copy_file(d.frames[i], out_root / rel / format_frame_name(kDefaultFramePattern, i),
                    fs::copy_options::overwrite_existing);
    }
    entries.push_back({{"demo_id", d.demo_id},
                       {"frame_dir", rel.generic_string()},
                       {"frame_pattern", kDefaultFramePattern},
                       {"num_frames", d.frames.size()},
                       {"success_onset", d.onset},
                       {"domain", std::string(split) == "train" ? "source" : "target"}});
  }
  return entries;
}

inline void write_converted_manifest(const fs::path& out_root, const std::string& task_id, double rate,
                                     const nlohmann::json& train, const nlohmann::json& test, const nlohmann::json& meta) {
  nlohmann::json j = {{"task_id", task_id},
                      {"sampling_rate_hz", rate},
                      {"splits", {{"train", train}, {"test", test}}},
                      {"metadata", meta}};
  std::ofstream(out_root / kManifestName) << j.dump(2) << '\n';
}

}  // namespace detail

/// Kitchen layout: `<src>/{train,test}/<demo>_<frame>_<NS|S>.png`, frames 320x240 RGB.
inline void convert_kitchen_layout(const fs::path& src, const fs::path& out_root, const std::string& task_id,
                                   const nlohmann::json& metadata = nlohmann::json::object(), double rate = 10.0) {
  static const std::regex name(R"(^(.+)_([0-9]+)_(NS|S)\.png$)");
  nlohmann::json splits[2];
  const char* names[2] = {"train", "test"};
  for (int s = 0; s < 2; ++s) {
    const fs::path dir = src / names[s];
    if (!fs::is_directory(dir)) throw IngestionError("kitchen layout: missing directory " + dir.string());
    std::map<std::string, std::map<long, std::pair<fs::path, bool>>> demos;
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::smatch m;
      const std::string fname = entry.path().filename().string();
      if (!std::regex_match(fname, m, name)) continue;
      demos[m[1]][std::stol(m[2])] = {entry.path(), m[3] == "S"};
    }
    if (demos.empty()) throw IngestionError("kitchen layout: no frames in " + dir.string());
    std::vector<detail::PendingDemo> pending;
    for (const auto& [demo_id, frames] : demos) {
      detail::PendingDemo d{demo_id, {}, frames.size()};
      long expect = frames.begin()->first;
      bool seen_success = false;
      for (const auto& [idx, info] : frames) {
        if (idx != expect++) throw IngestionError("kitchen layout: gap in frame numbering of " + (dir / demo_id).string());
        const RawImage img = read_png(info.first);
        if (img.height != kKitchenHeight || img.width != kKitchenWidth) {
          throw IngestionError(info.first.string() + ": kitchen frames must be 320x240, got " +
                               std::to_string(img.width) + "x" + std::to_string(img.height));
        }
        if (info.second && !seen_success) {
          d.onset = d.frames.size();
          seen_success = true;
        } else if (!info.second && seen_success) {
          throw IngestionError(info.first.string() + ": non-success frame after success onset");
        }
        d.frames.push_back(info.first);
      }
      pending.push_back(std::move(d));
    }
    splits[s] = detail::emit_converted(pending, names[s], out_root);
  }
  detail::write_converted_manifest(out_root, task_id, rate, splits[0], splits[1], metadata);
}

/// MIME layout: `<src>/{train,test}/<demo>/` with frames `*.png` (sorted by name) and
/// a `success_onset.txt` holding the first success index.
inline void convert_mime_layout(const fs::path& src, const fs::path& out_root, const std::string& task_id,
                                const nlohmann::json& metadata = nlohmann::json::object(), double rate = 10.0) {
  nlohmann::json splits[2];
  const char* names[2] = {"train", "test"};
  for (int s = 0; s < 2; ++s) {
    const fs::path dir = src / names[s];
    if (!fs::is_directory(dir)) throw IngestionError("mime layout: missing directory " + dir.string());
    std::vector<fs::path> demo_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) demo_dirs.push_back(entry.path());
    }
    if (demo_dirs.empty()) throw IngestionError("mime layout: no demonstrations in " + dir.string());
    std::sort(demo_dirs.begin(), demo_dirs.end());
    std::vector<detail::PendingDemo> pending;
    for (const auto& dd : demo_dirs) {
      detail::PendingDemo d{std::string(names[s]) + "_" + dd.filename().string(), {}, 0};
      for (const auto& entry : fs::directory_iterator(dd)) {
        if (entry.path().extension() == ".png") d.frames.push_back(entry.path());
      }
      std::sort(d.frames.begin(), d.frames.end());
      std::ifstream onset_file(dd / "success_onset.txt");
      long onset = -1;
      if (!(onset_file >> onset)) throw IngestionError("mime layout: missing or unreadable " + (dd / "success_onset.txt").string());
      if (d.frames.size() < 2 || onset < 0 || onset > static_cast<long>(d.frames.size())) {
        throw IngestionError("mime layout: invalid onset/frame count in " + dd.string());
      }
      d.onset = static_cast<std::size_t>(onset);
      pending.push_back(std::move(d));
    }
    splits[s] = detail::emit_converted(pending, names[s], out_root);
  }
  detail::write_converted_manifest(out_root, task_id, rate, splits[0], splits[1], metadata);
}

}  // namespace scl

#endif  // SCL_MANIFEST_HPP
