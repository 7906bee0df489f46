// Writes the reduced-scale Kitchen-layout and MIME-layout ingestion fixtures.
// Usage: scl_make_fixtures <out_dir>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/image.hpp"

namespace fs = std::filesystem;

namespace {

/// A square sliding across a tinted background; position encodes progress.
scl::RawImage frame(std::size_t h, std::size_t w, std::size_t t, std::size_t j, int tint) {
  scl::RawImage img(h, w, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(40 + tint);
      img.at(y, x, 1) = static_cast<std::uint8_t>(60 + (y * 80) / h);
      img.at(y, x, 2) = static_cast<std::uint8_t>(90 + (x * 60) / w);
    }
  const std::size_t side = h / 5, x0 = (w - side) * t / (j - 1), y0 = h / 2 - side / 2;
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x) {
      img.at(y, x, 0) = 220;
      img.at(y, x, 1) = 46;
      img.at(y, x, 2) = 38;
    }
  return img;
}

struct DemoSpec {
  std::size_t ns, s;
};

nlohmann::json counts(const std::vector<DemoSpec>& demos) {
  std::size_t ns = 0, s = 0;
  for (const auto& d : demos) ns += d.ns, s += d.s;
  return {{"ns", ns}, {"s", s}};
}

void kitchen(const fs::path& root) {
  const std::vector<DemoSpec> train{{16, 3}, {16, 3}, {16, 2}, {16, 2}}, test{{2, 2}, {2, 2}};
  for (const auto& [split, demos] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    fs::create_directories(root / split);
    for (std::size_t d = 0; d < demos->size(); ++d) {
      const std::size_t j = (*demos)[d].ns + (*demos)[d].s;
      for (std::size_t t = 0; t < j; ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "%s%zu_%03zu_%s.png", split, d, t, t < (*demos)[d].ns ? "NS" : "S");
        scl::write_png(root / split / name, frame(240, 320, t, j, static_cast<int>(d * 20)), 9);
      }
    }
  }
  const nlohmann::json j = {
      {"task_id", "K1"},
      {"layout", "kitchen"},
      {"scale", "1/20 of the reference counts, rounded to the nearest frame"},
      {"reference_counts", {{"train", {{"ns", 1281}, {"s", 194}}}, {"test", {{"ns", 74}, {"s", 85}}}}},
      {"declared_counts", {{"train", counts(train)}, {"test", counts(test)}}}};
  std::ofstream(root / "fixture.json") << j.dump(2) << '\n';
}

void mime(const fs::path& root) {
  const std::vector<DemoSpec> train{{15, 2}, {15, 2}, {14, 1}}, test{{14, 2}, {14, 2}, {13, 1}};
  for (const auto& [split, demos] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    for (std::size_t d = 0; d < demos->size(); ++d) {
      const fs::path dir = root / split / ("demo" + std::to_string(d));
      fs::create_directories(dir);
      const std::size_t j = (*demos)[d].ns + (*demos)[d].s;
      for (std::size_t t = 0; t < j; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", t);
        scl::write_png(dir / name, frame(48, 64, t, j, static_cast<int>(d * 30)), 9);
      }
      std::ofstream(dir / "success_onset.txt") << (*demos)[d].ns << '\n';
    }
  }
  const nlohmann::json j = {
      {"task_id", "M1"},
      {"layout", "mime"},
      {"scale", "1/20 of the reference counts, rounded to the nearest frame"},
      {"reference_counts", {{"train", {{"ns", 888}, {"s", 103}}}, {"test", {{"ns", 828}, {"s", 96}}}}},
      {"declared_counts", {{"train", counts(train)}, {"test", counts(test)}}}};
  std::ofstream(root / "fixture.json") << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: scl_make_fixtures <out_dir>\n";
    return 2;
  }
  kitchen(fs::path(argv[1]) / "kitchen_k1");
  mime(fs::path(argv[1]) / "mime_m1");
}
