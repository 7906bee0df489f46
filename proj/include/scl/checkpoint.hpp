#ifndef SCL_CHECKPOINT_HPP
#define SCL_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/models.hpp"

namespace scl {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'L', 'P'};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}
inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

template <class V>
void write_le(std::ostream& os, V v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V read_le(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError("checkpoint: truncated params.bin");
  return to_le(v);
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + p.string());
  os << s;
}

}  // namespace detail

/// Writes params.bin (magic, version, count, little-endian float32 values),
/// params_index.json (name -> offset/shape) and model.json.
template <class T>
void save_checkpoint(const ModelHandle<T>& m, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto* p : m.params().all()) {
    index.push_back({{"name", p->name}, {"offset", offset}, {"shape", p->value.shape()}});
    offset += p->value.size();
  }
  {
    std::ofstream os(dir / "params.bin", std::ios::binary);
    if (!os) throw IngestionError("cannot write " + (dir / "params.bin").string());
    os.write(kCheckpointMagic, 4);
    detail::write_le(os, kCheckpointVersion);
    detail::write_le(os, offset);
    for (const auto* p : m.params().all()) {
      for (T v : p->value.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::write_le(os, bits);
      }
    }
  }
  detail::write_text(dir / "params_index.json",
                     nlohmann::json{{"format_version", kCheckpointVersion}, {"count", offset}, {"params", index}}.dump(2));
  nlohmann::json model{{"format_version", kCheckpointVersion},
                       {"arch_id", to_string(m.arch())},
                       {"seed", m.config.seed},
                       {"config", to_json(m.config)},
                       {"use_target_encoder", m.use_target_encoder},
                       {"parameters", m.parameter_report()}};
  detail::write_text(dir / "model.json", model.dump(2));
}

/// Rebuilds the architecture recorded in model.json and loads its parameters.
template <class T = float>
ModelHandle<T> load_checkpoint(const fs::path& dir, std::shared_ptr<const ExternalExtractor> ext = nullptr) {
  if (!fs::exists(dir / "model.json") || !fs::exists(dir / "params.bin")) {
    throw IngestionError("no checkpoint at " + dir.string() + " (expected model.json and params.bin)");
  }
  nlohmann::json model, index;
  try {
    std::ifstream mj(dir / "model.json");
    model = nlohmann::json::parse(mj);
    std::ifstream ij(dir / "params_index.json");
    index = nlohmann::json::parse(ij);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + dir.string() + ": " + e.what());
  }
  if (model.value("format_version", 0u) != kCheckpointVersion) {
    throw FormatError("checkpoint " + dir.string() + ": unsupported format_version");
  }
  ModelHandle<T> m = build_model<T>(model_config_from_json(model.at("config")));
  if (ext) attach_extractor(m, std::move(ext));
  m.use_target_encoder = model.value("use_target_encoder", false);

  std::ifstream is(dir / "params.bin", std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad params.bin magic");
  if (detail::read_le<std::uint32_t>(is) != kCheckpointVersion) throw FormatError("checkpoint: params.bin version mismatch");
  const auto count = detail::read_le<std::uint64_t>(is);
  std::vector<float> flat(count);
  for (auto& f : flat) {
    const auto bits = detail::read_le<std::uint32_t>(is);
    std::memcpy(&f, &bits, 4);
  }
  std::size_t matched = 0;
  for (const auto& e : index.at("params")) {
    auto* p = m.params().find(e.at("name").get<std::string>());
    if (!p) throw FormatError("checkpoint: unknown parameter " + e.at("name").get<std::string>());
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != p->value.shape()) throw ShapeError("checkpoint: shape mismatch for " + p->name);
    const auto off = e.at("offset").get<std::uint64_t>();
    if (off + p->value.size() > count) throw FormatError("checkpoint: offset out of range for " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<T>(flat[off + i]);
    ++matched;
  }
  if (matched != m.params().all().size()) throw FormatError("checkpoint: parameter set does not match the architecture");
  return m;
}

}  // namespace scl

#endif  // SCL_CHECKPOINT_HPP
