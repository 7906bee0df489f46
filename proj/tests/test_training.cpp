#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "scl/synthgen.hpp"
#include "scl/training.hpp"

namespace fs = std::filesystem;

namespace {

scl::BackboneConfig small_backbone() {
  scl::BackboneConfig c;
  c.channels = {4, 8};
  c.stride = 4;
  c.feature_dim = 8;
  return c;
}

scl::HeadConfig small_heads() {
  scl::HeadConfig h;
  h.hidden = 8;
  return h;
}

scl::ModelHandle<float> small_model(scl::ArchId a, std::uint64_t seed = 0) {
  return scl::build_model<float>(a, small_backbone(), small_heads(), seed);
}

struct Data {
  std::vector<scl::PreparedDemo> source;
  std::vector<scl::PreparedDemo> target;
};

const Data& data() {
  static const Data d = [] {
    scl::SynthConfig sc;
    sc.num_demos_train = 2;
    sc.num_demos_test = 1;
    sc.frames_min = 8;
    sc.frames_max = 10;
    sc.image_height = 40;
    sc.image_width = 48;
    const auto ds = scl::generate(sc);
    return Data{scl::prepare_demos(ds.train_demos), scl::prepare_demos(ds.test_demos)};
  }();
  return d;
}

scl::TrainConfig quick(int epochs = 3) {
  scl::TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

std::vector<double> column(const scl::RunRecord& r, const std::string& name) {
  std::vector<double> out;
  for (const auto& e : r.curves) {
    if (name == "train_loss") out.push_back(e.train_loss);
    else if (name == "val_loss") out.push_back(e.val_loss);
    else if (name == "val_acc") out.push_back(e.val_acc);
    else out.push_back(e.component(name));
  }
  return out;
}

std::vector<float> flat_params(const scl::ModelHandle<float>& m, const std::string& prefix) {
  std::vector<float> out;
  for (const auto* p : m.params().all()) {
    if (p->name.rfind(prefix, 0) == 0) out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  }
  return out;
}

}  // namespace

TEST(Losses, ClassificationExamples) {
  EXPECT_NEAR(scl::classification_loss({0.5, 0.5}, {0, 1}), 0.693147, 1e-6);
  EXPECT_NEAR(scl::classification_loss({0.9, 0.2}, {1, 0}), 0.164252, 1e-6);
  EXPECT_EQ(scl::classification_loss({1.0, 0.0}, {1, 0}), 0.0);
  EXPECT_THROW(scl::classification_loss({0.5}, {0, 1}), scl::ShapeError);
}

TEST(Losses, TimingExamples) {
  EXPECT_EQ(scl::timing_loss({0.3, 0.6}, {0.3, 0.6}), 0.0);
  EXPECT_EQ(scl::timing_loss({0.0, 1.0}, {1.0, 0.0}), 1.0);
  EXPECT_EQ(scl::timing_loss({0.25}, {0.75}), 0.25);
  EXPECT_THROW(scl::timing_loss({0.1}, {}), scl::ShapeError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  scl::TrainConfig c;
  c.epochs = 7;
  c.grl_schedule = scl::GrlSchedule::kWarmup;
  c.early_stopping_patience = 3;
  c.adda.adversarial_epochs = 2;
  EXPECT_EQ(scl::to_json(scl::train_config_from_json(scl::to_json(c))), scl::to_json(c));
  EXPECT_THROW(scl::train_config_from_json({{"epoch", 3}}), scl::ConfigError);
  EXPECT_THROW(scl::train_config_from_json({{"batch_size", 0}}), scl::ConfigError);
}

TEST(Training, DeterministicPerSeed) {
  auto a = small_model(scl::ArchId::kFcn), b = small_model(scl::ArchId::kFcn);
  const auto ra = scl::train_supervised(a, data().source, quick()), rb = scl::train_supervised(b, data().source, quick());
  EXPECT_EQ(column(ra, "train_loss"), column(rb, "train_loss"));
  EXPECT_EQ(column(ra, "val_loss"), column(rb, "val_loss"));
  EXPECT_EQ(flat_params(a, ""), flat_params(b, ""));
}

TEST(Training, ZeroEpochsKeepsInitialWeights) {
  auto m = small_model(scl::ArchId::kFcn);
  const auto before = flat_params(m, "");
  const auto r = scl::train_supervised(m, data().source, quick(0));
  EXPECT_TRUE(r.curves.empty());
  EXPECT_EQ(flat_params(m, ""), before);
}

TEST(Training, TotalIsWeightedSumOfComponents) {
  auto m = small_model(scl::ArchId::kTFcn);
  auto cfg = quick();
  cfg.loss_weights.time = 0.5;
  const auto r = scl::train_multitask(m, data().source, cfg);
  for (const auto& e : r.curves) EXPECT_NEAR(e.train_loss, e.component("cls") + 0.5 * e.component("time"), 1e-6);
}

TEST(ReductionIdentity, ZeroTimingWeightIsSupervised) {
  auto fcn = small_model(scl::ArchId::kFcn), tfcn = small_model(scl::ArchId::kTFcn);
  auto cfg = quick();
  const auto r1 = scl::train_supervised(fcn, data().source, cfg);
  cfg.loss_weights.time = 0.0;
  const auto r2 = scl::train_multitask(tfcn, data().source, cfg);
  EXPECT_EQ(column(r1, "train_loss"), column(r2, "train_loss"));
  EXPECT_EQ(column(r1, "val_loss"), column(r2, "val_loss"));
  EXPECT_EQ(flat_params(fcn, "backbone"), flat_params(tfcn, "backbone"));
  EXPECT_EQ(flat_params(fcn, "classification"), flat_params(tfcn, "classification"));
}

TEST(ReductionIdentity, ZeroLambdaDannIsSupervised) {
  auto fcn = small_model(scl::ArchId::kFcn), dann = small_model(scl::ArchId::kDann);
  auto cfg = quick();
  const auto r1 = scl::train_supervised(fcn, data().source, cfg);
  cfg.grl_lambda = 0.0;
  const auto r2 = scl::train_dann(dann, data().source, scl::TargetFrames::strip_labels(data().target), cfg);
  EXPECT_EQ(column(r1, "cls"), column(r2, "cls"));
  EXPECT_EQ(column(r1, "val_loss"), column(r2, "val_loss"));
  EXPECT_EQ(flat_params(fcn, "backbone"), flat_params(dann, "backbone"));
}

TEST(ReductionIdentity, ZeroAdversarialEpochsKeepsSourceModel) {
  auto m = small_model(scl::ArchId::kAdda);
  auto cfg = quick();
  cfg.adda.adversarial_epochs = 0;
  scl::train_adda(m, data().source, scl::TargetFrames::strip_labels(data().target), cfg);
  EXPECT_EQ(flat_params(m, "backbone"), flat_params(m, "target_backbone"));
  scl::FrameBatch b;
  b.images = scl::Tensor<float>({data().target[0].length(), 3, scl::kModelInputSize, scl::kModelInputSize},
                                data().target[0].pixels);
  m.use_target_encoder = true;
  const auto adapted = scl::classify(m, b);
  m.use_target_encoder = false;
  EXPECT_EQ(adapted, scl::classify(m, b));
}

TEST(Dann, EmptyTargetIsRejected) {
  auto m = small_model(scl::ArchId::kDann);
  try {
    scl::train_dann(m, data().source, scl::TargetFrames{}, quick());
    FAIL() << "expected InsufficientDataError";
  } catch (const scl::InsufficientDataError& e) {
    EXPECT_NE(std::string(e.what()).find("unlabeled target"), std::string::npos);
  }
  auto fcn = small_model(scl::ArchId::kFcn);
  EXPECT_THROW(scl::train_dann(fcn, data().source, scl::TargetFrames::strip_labels(data().target), quick()),
               scl::CapabilityError);
}

TEST(Dann, IdenticalDomainsAreIndistinguishable) {
  auto m = small_model(scl::ArchId::kDann);
  const auto r = scl::train_dann(m, data().source, scl::TargetFrames::strip_labels(data().source), quick(12));
  double acc = 0;
  for (std::size_t k = r.curves.size() - 4; k < r.curves.size(); ++k) acc += r.curves[k].component("dom_acc") / 4.0;
  EXPECT_GE(acc, 0.45);
  EXPECT_LE(acc, 0.55);
}

TEST(Training, NonFiniteLossAbortsWithPosition) {
  auto m = small_model(scl::ArchId::kFcn);
  m.params().find("classification.out.bias")->value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    scl::train_supervised(m, data().source, quick());
    FAIL() << "expected NumericalError";
  } catch (const scl::NumericalError& e) {
    EXPECT_EQ(e.epoch(), 1u);
    EXPECT_EQ(e.batch(), 0u);
  }
}

TEST(Training, EmptyDatasetIsRejected) {
  auto m = small_model(scl::ArchId::kFcn);
  EXPECT_THROW(scl::train_supervised(m, {}, quick()), scl::InsufficientDataError);
}

TEST(Training, CurvesCsvLayout) {
  auto m = small_model(scl::ArchId::kTFcn);
  const auto r = scl::train_multitask(m, data().source, quick(2));
  const fs::path p = fs::temp_directory_path() / "scl_curves.csv";
  scl::write_curves_csv(r, p);
  std::ifstream is(p);
  std::string header, line;
  std::getline(is, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,train_acc,val_acc,cls,time");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_EQ(scl::to_json(r).at("epochs_run"), 2);
}
