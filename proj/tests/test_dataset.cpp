#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "scl/manifest.hpp"
#include "scl/synthgen.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<scl::Frame> blank_frames(std::size_t j, std::size_t h = 8, std::size_t w = 8) {
  std::vector<scl::Frame> f(j);
  for (std::size_t i = 0; i < j; ++i) f[i].pixels = scl::RawImage(h, w, 3, static_cast<std::uint8_t>(i));
  return f;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json fixture_meta(const fs::path& dir) {
  std::ifstream is(dir / "fixture.json");
  return nlohmann::json::parse(is);
}

}  // namespace

TEST(LabelFrames, OnsetRule) {
  EXPECT_EQ(scl::label_frames(blank_frames(5), 3).labels, (std::vector<int>{0, 0, 0, 1, 1}));
  EXPECT_EQ(scl::label_frames(blank_frames(4), 0).labels, (std::vector<int>{1, 1, 1, 1}));
  EXPECT_EQ(scl::label_frames(blank_frames(4), 4).labels, (std::vector<int>{0, 0, 0, 0}));
}

TEST(LabelFrames, OutOfRangeOnsetNamesDemo) {
  try {
    scl::label_frames(blank_frames(4), 5, "pick_07");
    FAIL() << "expected ValidationError";
  } catch (const scl::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("pick_07"), std::string::npos);
  }
  EXPECT_THROW(scl::label_frames(blank_frames(1), 0), scl::ValidationError);
}

TEST(TimingTargets, ExactValues) {
  EXPECT_EQ(scl::timing_targets(7)[3], 0.5);
  EXPECT_EQ(scl::timing_targets(2), (std::vector<double>{0.0, 1.0}));
  EXPECT_DOUBLE_EQ(scl::timing_targets(11)[4], 0.4);
  EXPECT_THROW(scl::timing_targets(1), scl::ValidationError);
}

TEST(TimingTargets, EvenlySpacedWithEndpoints) {
  for (std::size_t j = 2; j <= 50; ++j) {
    const auto y = scl::timing_targets(j);
    ASSERT_EQ(y.size(), j);
    EXPECT_EQ(y.front(), 0.0);
    EXPECT_EQ(y.back(), 1.0);
    for (std::size_t t = 1; t < j; ++t) EXPECT_NEAR(y[t] - y[t - 1], 1.0 / static_cast<double>(j - 1), 1e-12);
  }
}

TEST(Preprocess, ZeroAndConstantImages) {
  const auto z = scl::preprocess_frame(scl::RawImage(240, 320, 3, 0));
  EXPECT_EQ(z.height, 160u);
  EXPECT_EQ(z.width, 160u);
  EXPECT_TRUE(std::all_of(z.pixels.begin(), z.pixels.end(), [](float v) { return v == 0.0f; }));
  const auto c = scl::preprocess_frame(scl::RawImage(240, 320, 3, 255));
  EXPECT_TRUE(std::all_of(c.pixels.begin(), c.pixels.end(), [](float v) { return v == 1.0f; }));
}

TEST(Preprocess, IdentityResizeAndIdempotence) {
  scl::RawImage raw(160, 160, 3);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) raw.pixels[i] = static_cast<std::uint8_t>(i * 7 % 256);
  const auto once = scl::preprocess_frame(raw);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) ASSERT_EQ(once.pixels[i], static_cast<float>(raw.pixels[i]) / 255.0f);
  EXPECT_EQ(scl::preprocess_frame(once).pixels, once.pixels);
}

TEST(Preprocess, RejectsNonRgb) { EXPECT_THROW(scl::preprocess_frame(scl::RawImage(10, 10, 1)), scl::FormatError); }

TEST(Split, CardinalityAndDeterminism) {
  auto [tr, va] = scl::split_indices(10, 0.8, 0);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(va.size(), 2u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(scl::split_indices(10, 0.8, 0), scl::split_indices(10, 0.8, 0));
  auto [tr2, va2] = scl::split_indices(1475, 0.8, 3);
  EXPECT_EQ(tr2.size(), 1180u);
  EXPECT_EQ(va2.size(), 295u);
  EXPECT_THROW(scl::split_indices(1, 0.8, 0), scl::InsufficientDataError);
}

TEST(Windows, CoverageAndPadding) {
  const auto d12 = scl::label_frames(blank_frames(12), 6);
  const auto w12 = scl::make_windows(d12, 10);
  ASSERT_EQ(w12.size(), 12u);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(w12[k].frame_index.back(), k);
  EXPECT_EQ(std::count(w12[0].pad_mask.begin(), w12[0].pad_mask.end(), 1), 9);
  EXPECT_EQ(std::count(w12[9].pad_mask.begin(), w12[9].pad_mask.end(), 1), 0);

  const auto w3 = scl::make_windows(scl::label_frames(blank_frames(3), 1), 10);
  ASSERT_EQ(w3.size(), 3u);
  for (const auto& w : w3) EXPECT_EQ(w.frame_index.front(), 0u);

  const auto w1 = scl::make_windows(d12, 1);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(w1[k].labels, std::vector<int>{d12.labels[k]});
  EXPECT_THROW(scl::make_windows(d12, 0), scl::ValidationError);
}

TEST(Manifest, SynthRoundTripPreservesChecksums) {
  scl::SynthConfig sc;
  sc.num_demos_train = 2;
  sc.num_demos_test = 1;
  sc.frames_min = 5;
  sc.frames_max = 7;
  const auto ds = scl::generate(sc);
  const fs::path dir = temp_dir("roundtrip");
  scl::write_dataset(ds, dir);
  const auto back = scl::load_manifest(dir);
  ASSERT_EQ(back.train_demos.size(), 2u);
  ASSERT_EQ(back.test_demos.size(), 1u);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_EQ(back.train_demos[d].labels, ds.train_demos[d].labels);
    for (std::size_t i = 0; i < ds.train_demos[d].length(); ++i) {
      EXPECT_EQ(scl::frame_checksum(back.train_demos[d].frames[i].pixels), scl::frame_checksum(ds.train_demos[d].frames[i].pixels));
    }
  }
  EXPECT_EQ(back.test_demos[0].domain, scl::Domain::kTarget);
}

TEST(Manifest, EmptyDirectoryIsAnError) { EXPECT_THROW(scl::load_manifest(temp_dir("empty")), scl::IngestionError); }

TEST(Manifest, MissingFrameNamesPath) {
  scl::SynthConfig sc;
  sc.num_demos_train = 1;
  sc.num_demos_test = 0;
  sc.frames_min = sc.frames_max = 4;
  const fs::path dir = temp_dir("missing");
  scl::write_dataset(scl::generate(sc), dir);
  fs::remove(dir / "frames/train/train_0/frame_00002.png");
  try {
    scl::load_manifest(dir);
    FAIL() << "expected IngestionError";
  } catch (const scl::IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("frame_00002.png"), std::string::npos);
  }
}

TEST(Manifest, KitchenFixtureDeclaredCounts) {
  const fs::path src = fs::path(SCL_SOURCE_DIR) / "tests/fixtures/kitchen_k1";
  const auto meta = fixture_meta(src);
  const fs::path out = temp_dir("kitchen");
  scl::convert_kitchen_layout(src, out, "K1", {{"declared_counts", meta["declared_counts"]}});
  const auto ds = scl::load_manifest(out);
  const auto tr = scl::class_counts(ds.train_demos), te = scl::class_counts(ds.test_demos);
  EXPECT_EQ(tr.non_success, 64u);
  EXPECT_EQ(tr.success, 10u);
  EXPECT_EQ(te.non_success, 4u);
  EXPECT_EQ(te.success, 4u);
}

TEST(Manifest, MimeFixtureDeclaredCounts) {
  const fs::path src = fs::path(SCL_SOURCE_DIR) / "tests/fixtures/mime_m1";
  const auto meta = fixture_meta(src);
  const fs::path out = temp_dir("mime");
  scl::convert_mime_layout(src, out, "M1", {{"declared_counts", meta["declared_counts"]}});
  const auto ds = scl::load_manifest(out);
  const auto tr = scl::class_counts(ds.train_demos), te = scl::class_counts(ds.test_demos);
  EXPECT_EQ(tr.non_success, 44u);
  EXPECT_EQ(tr.success, 5u);
  EXPECT_EQ(te.non_success, 41u);
  EXPECT_EQ(te.success, 5u);
}

TEST(Manifest, DeclaredCountMismatchRejected) {
  const fs::path src = fs::path(SCL_SOURCE_DIR) / "tests/fixtures/mime_m1";
  const fs::path out = temp_dir("mime_bad");
  const nlohmann::json wrong = {{"train", {{"ns", 888}, {"s", 103}}}};
  scl::convert_mime_layout(src, out, "M1", {{"declared_counts", wrong}});
  EXPECT_THROW(scl::load_manifest(out), scl::IngestionError);
}
