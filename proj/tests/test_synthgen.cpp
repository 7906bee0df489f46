#include <algorithm>
#include <array>

#include <gtest/gtest.h>

#include "scl/synthgen.hpp"

namespace {

scl::SynthConfig small_config(scl::TaskRule rule = scl::TaskRule::kReachTarget) {
  scl::SynthConfig c;
  c.num_demos_train = 3;
  c.num_demos_test = 3;
  c.frames_min = 20;
  c.frames_max = 30;
  c.task_rule = rule;
  return c;
}

/// Mean RGB of a frame: the trivial colour-histogram feature.
std::array<double, 3> mean_rgb(const scl::RawImage& img) {
  std::array<double, 3> m{0, 0, 0};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m[i % 3] += img.pixels[i];
  for (auto& v : m) v /= static_cast<double>(img.pixels.size() / 3);
  return m;
}

}  // namespace

TEST(Synthgen, ContractCountsAndMonotoneLabels) {
  scl::SynthConfig c;
  c.frames_min = 30;
  c.frames_max = 60;
  const auto ds = scl::generate(c);
  ASSERT_EQ(ds.train_demos.size(), 5u);
  ASSERT_EQ(ds.test_demos.size(), 5u);
  for (const auto* split : {&ds.train_demos, &ds.test_demos}) {
    for (const auto& d : *split) {
      EXPECT_GE(d.length(), 30u);
      EXPECT_LE(d.length(), 60u);
      EXPECT_TRUE(std::is_sorted(d.labels.begin(), d.labels.end()));
    }
  }
}

TEST(Synthgen, DeterministicPerSeed) {
  const auto a = scl::generate(small_config()), b = scl::generate(small_config());
  for (std::size_t d = 0; d < a.train_demos.size(); ++d) {
    for (std::size_t i = 0; i < a.train_demos[d].length(); ++i) {
      ASSERT_EQ(a.train_demos[d].frames[i].pixels.pixels, b.train_demos[d].frames[i].pixels.pixels);
    }
  }
  auto other = small_config();
  other.seed = 1;
  EXPECT_NE(scl::generate(other).train_demos[0].frames[0].pixels.pixels, a.train_demos[0].frames[0].pixels.pixels);
}

TEST(Synthgen, OracleAgreesWithLabelsForEveryRule) {
  for (auto rule : {scl::TaskRule::kReachTarget, scl::TaskRule::kStackBlocks, scl::TaskRule::kCoverRegion}) {
    const auto ds = scl::generate(small_config(rule));
    for (const auto* split : {&ds.train_demos, &ds.test_demos}) {
      for (const auto& d : *split) {
        for (std::size_t i = 0; i < d.length(); ++i) ASSERT_EQ(scl::oracle_predict(d.frames[i], rule), d.labels[i]);
      }
    }
  }
}

TEST(Synthgen, OracleNeedsGeometry) {
  scl::Frame f;
  f.pixels = scl::RawImage(4, 4, 3);
  EXPECT_THROW(scl::oracle_predict(f, scl::TaskRule::kReachTarget), scl::ValidationError);
}

TEST(Synthgen, SuccessTailFraction) {
  scl::SynthConfig c = small_config();
  c.num_demos_train = 10;
  const auto ds = scl::generate(c);
  for (const auto& d : ds.train_demos) {
    const double frac = static_cast<double>(d.success_count()) / static_cast<double>(d.length());
    EXPECT_NEAR(frac, c.success_tail_fraction, 0.1) << d.demo_id;
  }
}

TEST(Synthgen, ShiftIsSeparableByColourHistogram) {
  const auto ds = scl::generate(small_config());
  // Nearest-centroid on mean colour, centroids from the first demo of each domain.
  auto centroid = [](const scl::Demonstration& d) {
    std::array<double, 3> c{0, 0, 0};
    for (const auto& f : d.frames) {
      const auto m = mean_rgb(f.pixels);
      for (int k = 0; k < 3; ++k) c[k] += m[k] / static_cast<double>(d.length());
    }
    return c;
  };
  const auto cs = centroid(ds.train_demos[0]), ct = centroid(ds.test_demos[0]);
  auto dist = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]);
  };
  std::size_t correct = 0, total = 0;
  for (const auto* split : {&ds.train_demos, &ds.test_demos}) {
    for (const auto& d : *split) {
      for (const auto& f : d.frames) {
        const auto m = mean_rgb(f.pixels);
        const bool says_target = dist(m, ct) < dist(m, cs);
        correct += says_target == (d.domain == scl::Domain::kTarget) ? 1 : 0;
        ++total;
      }
    }
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

TEST(Synthgen, ConfigValidation) {
  auto c = small_config();
  c.frames_min = 1;
  EXPECT_THROW(scl::generate(c), scl::ConfigError);
  c = small_config();
  c.shift.background_palette_target = c.shift.background_palette_source;
  EXPECT_THROW(scl::generate(c), scl::ConfigError);
  EXPECT_THROW(scl::synth_config_from_json({{"task_rule", "juggle"}}), scl::ConfigError);
  EXPECT_THROW(scl::synth_config_from_json({{"colour", 1}}), scl::ConfigError);
}

TEST(Synthgen, ConfigJsonRoundTrip) {
  auto c = small_config(scl::TaskRule::kCoverRegion);
  c.shift.distractor_count_target = 5;
  const auto back = scl::synth_config_from_json(scl::to_json(c));
  EXPECT_EQ(scl::to_json(back), scl::to_json(c));
}

TEST(Synthgen, TargetDemosCarryTargetTag) {
  const auto ds = scl::generate(small_config());
  for (const auto& d : ds.train_demos) EXPECT_EQ(d.domain, scl::Domain::kSource);
  for (const auto& d : ds.test_demos) EXPECT_EQ(d.domain, scl::Domain::kTarget);
}
