#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "scl/evaluation.hpp"
#include "scl/synthgen.hpp"

namespace fs = std::filesystem;

namespace {

struct Case {
  std::vector<double> probs;
  std::vector<int> labels;
};

Case random_case(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Case c;
  for (std::size_t i = 0; i < n; ++i) {
    // Coarse scores create ties and exact threshold hits.
    c.probs.push_back(coarse ? std::round(u(rng) * 4.0) / 4.0 : u(rng));
    c.labels.push_back(u(rng) < 0.4 ? 1 : 0);
  }
  c.labels[0] = 1;
  c.labels[1] = 0;
  return c;
}

scl::ModelHandle<float> tiny_model(scl::ArchId a) {
  scl::BackboneConfig b;
  b.channels = {4};
  b.stride = 8;
  b.feature_dim = 4;
  scl::HeadConfig h;
  h.hidden = 4;
  scl::SeqConfig s;
  s.rnn_hidden = s.attention_dim = s.d_model = s.ffn_dim = 4;
  s.heads = 1;
  s.layers = 1;
  return scl::build_model<float>(a, b, h, 1, s);
}

std::vector<scl::PreparedDemo> tiny_demos(int train, int test, bool want_test = false) {
  scl::SynthConfig sc;
  sc.num_demos_train = train;
  sc.num_demos_test = test;
  sc.frames_min = 6;
  sc.frames_max = 8;
  sc.image_height = 32;
  sc.image_width = 32;
  const auto ds = scl::generate(sc);
  return scl::prepare_demos(want_test ? ds.test_demos : ds.train_demos);
}

}  // namespace

TEST(Metrics, ConfusionExamples) {
  const auto c = scl::confusion({0.9, 0.1}, {1, 0});
  EXPECT_EQ(c, (scl::ConfusionCounts{1, 1, 0, 0}));
  const auto ties = scl::confusion({0.5, 0.5, 0.5}, {1, 0, 0});
  EXPECT_EQ(ties.tp, 1u);
  EXPECT_EQ(ties.fp, 2u);
  EXPECT_THROW(scl::confusion({}, {}), scl::ValidationError);
  EXPECT_THROW(scl::confusion({0.5}, {1, 0}), scl::ShapeError);
  EXPECT_THROW(scl::confusion({0.5}, {1}, 1.0), scl::ValidationError);
}

TEST(Metrics, MatchBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_case(rng, 1 + static_cast<std::size_t>(trial % 40) + 2, trial % 2 == 0);
    const auto got = scl::confusion(c.probs, c.labels);
    const auto want = oracle::confusion(c.probs, c.labels, 0.5);
    ASSERT_EQ(got.tp, want.tp);
    ASSERT_EQ(got.tn, want.tn);
    ASSERT_EQ(got.fp, want.fp);
    ASSERT_EQ(got.fn, want.fn);
    const auto m = scl::basic_metrics(got);
    const auto r = oracle::rates(want);
    EXPECT_EQ(m.acc, r.acc);
    EXPECT_EQ(m.precision, r.precision);
    EXPECT_EQ(m.recall, r.recall);
    EXPECT_EQ(m.f1, r.f1);
    EXPECT_EQ(m.tnr, r.tnr);
  }
}

TEST(Metrics, ConventionsAndPublishedRates) {
  const auto perfect = scl::basic_metrics({1, 1, 0, 0});
  EXPECT_EQ(perfect.acc, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_EQ(perfect.tnr, 1.0);
  const auto none = scl::basic_metrics({0, 3, 0, 2});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  const auto k1 = scl::basic_metrics({911, 975, 25, 89});
  EXPECT_DOUBLE_EQ(k1.tpr, 0.911);
  EXPECT_DOUBLE_EQ(k1.tnr, 0.975);
  EXPECT_THROW(scl::basic_metrics({}), scl::ValidationError);
}

TEST(Auc, ExamplesAndOracle) {
  EXPECT_EQ(scl::auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(scl::auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}), 0.5);
  EXPECT_THROW(scl::auc({0.3, 0.4}, {1, 1}), scl::ValidationError);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_case(rng, 50, trial % 2 == 0);
    EXPECT_NEAR(scl::auc(c.probs, c.labels), oracle::auc(c.probs, c.labels), 1e-12);
  }
}

TEST(Auc, MonotoneInvarianceAndComplement) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_case(rng, 40, trial % 2 == 1);
    std::vector<double> warped, flipped_scores;
    std::vector<int> flipped;
    for (double p : c.probs) warped.push_back(std::exp(3.0 * p) - 7.0);
    for (std::size_t i = 0; i < c.probs.size(); ++i) {
      flipped.push_back(1 - c.labels[i]);
      flipped_scores.push_back(-c.probs[i]);
    }
    const double a = scl::auc(c.probs, c.labels);
    EXPECT_EQ(scl::auc(warped, c.labels), a);
    EXPECT_NEAR(a + scl::auc(c.probs, flipped), 1.0, 1e-12);
    EXPECT_EQ(scl::auc(flipped_scores, flipped), a);
  }
}

TEST(Pearson, ExamplesAndOracle) {
  const std::vector<double> x{1, 2, 4, 7};
  EXPECT_NEAR(scl::pearson(x, x), 1.0, 1e-15);
  EXPECT_NEAR(scl::pearson(x, {-1, -2, -4, -7}), -1.0, 1e-15);
  EXPECT_THROW(scl::pearson({1, 1, 1}, {1, 2, 3}), scl::ValidationError);
  EXPECT_THROW(scl::pearson({1}, {1}), scl::ValidationError);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(20), b(20);
    for (std::size_t i = 0; i < 20; ++i) {
      a[i] = nd(rng);
      b[i] = 0.5 * a[i] + nd(rng);
    }
    EXPECT_NEAR(scl::pearson(a, b), oracle::pearson(a, b), 1e-12);
  }
}

TEST(Report, MacroIsMeanOfTasks) {
  std::map<std::string, scl::TaskMetrics> per;
  per["a"] = {0.8, 0.5, 0.4, 0.44, 0.4, 0.9, 0.7, 0.01, {2, 9, 2, 3}};
  per["b"] = {0.6, 0.3, 0.2, 0.24, 0.2, 0.7, std::nullopt, 0.03, {1, 7, 2, 4}};
  per["c"] = {0.9, 0.7, 0.6, 0.65, 0.6, 0.95, 0.9, 0.02, {6, 19, 1, 4}};
  const auto m = scl::macro_average(per);
  EXPECT_NEAR(m.acc, (0.8 + 0.6 + 0.9) / 3, 1e-12);
  EXPECT_NEAR(m.f1, (0.44 + 0.24 + 0.65) / 3, 1e-12);
  EXPECT_NEAR(m.test_time_per_image_s, 0.02, 1e-12);
  ASSERT_TRUE(m.auc.has_value());
  EXPECT_NEAR(*m.auc, 0.8, 1e-12);
}

TEST(Report, SchemaValidation) {
  scl::MetricsReport r;
  r.arch_id = "FCN";
  r.per_task["K1"] = scl::task_metrics({{"d", {0.9, 0.2, 0.6}, {1, 0, 0}, std::nullopt}});
  r.macro = scl::macro_average(r.per_task);
  auto j = scl::to_json(r);
  EXPECT_TRUE(scl::validate_metrics_json(j).empty());
  j["per_task"]["K1"]["auc"] = nullptr;
  EXPECT_TRUE(scl::validate_metrics_json(j).empty());
  j["per_task"]["K1"]["acc"] = 1.5;
  EXPECT_FALSE(scl::validate_metrics_json(j).empty());
  auto extra = scl::to_json(r);
  extra["surprise"] = 1;
  EXPECT_FALSE(scl::validate_metrics_json(extra).empty());
}

TEST(Report, SingleClassTaskHasNoAuc) {
  const auto t = scl::task_metrics({{"d", {0.2, 0.4}, {0, 0}, std::nullopt}});
  EXPECT_FALSE(t.auc.has_value());
  EXPECT_EQ(t.acc, 1.0);
}

TEST(Trace, LengthsAndLabelsMatchDemo) {
  const auto demos = tiny_demos(2, 0);
  for (auto a : {scl::ArchId::kFcn, scl::ArchId::kTFcn, scl::ArchId::kTransformer}) {
    const auto m = tiny_model(a);
    for (const auto& d : demos) {
      const auto t = scl::probability_trace(m, d);
      EXPECT_EQ(t.probs.size(), d.length());
      EXPECT_EQ(t.labels, d.labels);
      EXPECT_EQ(t.timing.has_value(), a == scl::ArchId::kTFcn);
    }
  }
}

TEST(Trace, CountsAgreeWithEvaluation) {
  const auto demos = tiny_demos(2, 0);
  const auto m = tiny_model(scl::ArchId::kFcn);
  const auto ev = scl::evaluate_task(m, demos, {0.5, false});
  scl::ConfusionCounts sum;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto t = scl::probability_trace(m, demos[i]);
    EXPECT_EQ(t.probs, ev.traces[i].probs);
    sum += scl::confusion(t.probs, t.labels);
  }
  EXPECT_EQ(sum, ev.metrics.counts);
}

TEST(Trace, CsvLayout) {
  const fs::path p = fs::temp_directory_path() / "scl_trace.csv";
  scl::write_trace_csv({"d", {0.25, 0.75}, {0, 1}, std::vector<double>{0.0, 1.0}}, p);
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "frame,prob,label,timing_pred");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 7), "0,0.25,");
}

TEST(Timing, MeasuresAndWarnsOnSmallSets) {
  const auto m = tiny_model(scl::ArchId::kFcn);
  const auto demos = tiny_demos(1, 0);
  const auto images = scl::demo_images(demos[0]);
  const auto r = scl::time_per_image(m, images, scl::TimingMode::kTest, 3);
  EXPECT_GT(r.seconds_per_image, 0.0);
  EXPECT_EQ(r.frames, demos[0].length());
  EXPECT_TRUE(r.warning.has_value());
  const auto tr = scl::time_per_image(m, images, scl::TimingMode::kTrain, 3);
  EXPECT_GT(tr.seconds_per_image, 0.0);
}

TEST(Ablation, RowsPerCountAndSeed) {
  const auto train = tiny_demos(3, 1);
  const auto test = tiny_demos(3, 1, true);
  scl::AblationSpec spec;
  spec.counts = {1, 3};
  spec.seeds = {0, 1};
  spec.backbone.channels = {4};
  spec.backbone.stride = 8;
  spec.backbone.feature_dim = 4;
  spec.heads.hidden = 4;
  spec.train.epochs = 1;
  spec.train.batch_size = 8;
  spec.jobs = 2;
  const auto rows = scl::ablate_demo_count(spec, train, test);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].demos, 1u);
  EXPECT_EQ(rows[3].demos, 3u);
  EXPECT_EQ(rows[3].seed, 1u);
  spec.jobs = 1;
  const auto serial = scl::ablate_demo_count(spec, train, test);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].acc, serial[i].acc);
  spec.counts = {4};
  EXPECT_THROW(scl::ablate_demo_count(spec, train, test), scl::InsufficientDataError);
}

TEST(Ablation, MedianOfEvenAndOddSets) {
  EXPECT_EQ(scl::median({3, 1, 2}), 2.0);
  EXPECT_EQ(scl::median({4, 1, 3, 2}), 2.5);
}
