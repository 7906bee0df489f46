#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "scl/checkpoint.hpp"
#include "scl/models.hpp"

namespace fs = std::filesystem;

namespace {

scl::BackboneConfig small_backbone() {
  scl::BackboneConfig c;
  c.channels = {4, 8};
  c.feature_dim = 16;
  c.input_size = 32;
  return c;
}

scl::HeadConfig small_heads(bool zero = false) {
  scl::HeadConfig h;
  h.hidden = 8;
  h.zero_init_output = zero;
  h.nasnet_layers = {8, 8, 8, 8, 8};
  h.extractor.channels = {4, 4};
  h.extractor.pool = 2;
  return h;
}

scl::SeqConfig small_seq() {
  scl::SeqConfig s;
  s.rnn_hidden = 8;
  s.attention_dim = 8;
  s.d_model = 8;
  s.ffn_dim = 8;
  s.heads = 2;
  s.layers = 1;
  s.window = 4;
  return s;
}

scl::FrameBatch random_batch(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  scl::FrameBatch b;
  b.images = scl::Tensor<float>({n, 3, side, side});
  for (auto& v : b.images.values()) v = u(rng);
  b.labels.assign(n, 0);
  b.timing_targets.assign(n, 0.0);
  b.domain_tags.assign(n, 0);
  return b;
}

scl::ModelHandle<float> small_model(scl::ArchId a, bool zero = false, std::uint64_t seed = 0) {
  return scl::build_model<float>(a, small_backbone(), small_heads(zero), seed, small_seq());
}

}  // namespace

TEST(Backbone, OutputShape) {
  scl::ParameterStore<float> store;
  scl::Rng rng(1);
  const auto bb = scl::FcnBackbone<float>::create(store, "bb", small_backbone(), rng);
  scl::Tape<float> tape(false);
  const auto out = bb(tape, tape.constant(random_batch(3, 32, 1).images));
  EXPECT_EQ(out.shape(), (scl::Shape{3, 16}));
}

TEST(Backbone, WrongInputNamesExpectedSize) {
  scl::ParameterStore<float> store;
  scl::Rng rng(1);
  const auto bb = scl::FcnBackbone<float>::create(store, "bb", scl::BackboneConfig{}, rng);
  scl::Tape<float> tape(false);
  try {
    bb(tape, tape.constant(scl::Tensor<float>({1, 3, 32, 32})));
    FAIL() << "expected ShapeError";
  } catch (const scl::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("160x160x3"), std::string::npos);
  }
}

TEST(Backbone, StandinExtractorIsDeterministicAndFrozen) {
  const auto a = small_model(scl::ArchId::kNasnet), b = small_model(scl::ArchId::kNasnet);
  const auto batch = random_batch(2, 32, 2);
  EXPECT_EQ(scl::infer_features(a, batch.images).vec(), scl::infer_features(b, batch.images).vec());
  for (const auto* p : a.extractor->parameters()) EXPECT_TRUE(p->frozen);
}

TEST(Backbone, ExternalExtractorRequiresAttachment) {
  auto heads = small_heads();
  heads.extractor.kind = "external";
  auto m = scl::build_model<float>(scl::ArchId::kNasnet, small_backbone(), heads, 0);
  EXPECT_THROW(scl::classify(m, random_batch(1, 32, 3)), scl::Error);
  auto ext = std::make_shared<scl::ExternalExtractor>();
  ext->name = "mean";
  ext->output_dim = 3;
  ext->extract = [](const scl::Tensor<float>& x) {
    const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    scl::Tensor<float> out({n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        float s = 0;
        for (std::size_t k = 0; k < hw; ++k) s += x[(i * 3 + c) * hw + k];
        out.at(i, c) = s / static_cast<float>(hw);
      }
    return out;
  };
  scl::attach_extractor(m, ext);
  EXPECT_EQ(scl::classify(m, random_batch(2, 32, 3)).size(), 2u);
}

TEST(Models, EveryArchitectureBuildsAndClassifies) {
  const auto batch = random_batch(5, 32, 4);
  for (auto a : scl::all_archs()) {
    const auto m = small_model(a);
    const auto p = scl::classify(m, batch);
    ASSERT_EQ(p.size(), 5u) << scl::to_string(a);
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(scl::parse_arch(scl::to_string(a)), a);
  }
  EXPECT_THROW(scl::parse_arch("RESNET"), scl::ConfigError);
}

TEST(Models, HeadSets) {
  using H = scl::HeadKind;
  EXPECT_EQ(scl::heads_for(scl::ArchId::kFcn), std::vector<H>{H::kClassification});
  EXPECT_EQ(scl::heads_for(scl::ArchId::kTFcn), (std::vector<H>{H::kClassification, H::kTiming}));
  EXPECT_EQ(scl::heads_for(scl::ArchId::kDann), (std::vector<H>{H::kClassification, H::kDomain}));
  EXPECT_EQ(scl::heads_for(scl::ArchId::kTFcnAdda), (std::vector<H>{H::kClassification, H::kTiming, H::kDomain}));
  for (auto a : scl::all_archs()) EXPECT_EQ(small_model(a).has_grl(), a == scl::ArchId::kDann);
}

TEST(Models, MissingHeadIsCapabilityError) {
  const auto batch = random_batch(2, 32, 5);
  EXPECT_THROW(scl::predict_timing(small_model(scl::ArchId::kFcn), batch), scl::CapabilityError);
  EXPECT_THROW(scl::discriminate_domain(small_model(scl::ArchId::kTFcn), batch), scl::CapabilityError);
  EXPECT_EQ(scl::predict_timing(small_model(scl::ArchId::kTFcnAdda), batch).size(), 2u);
}

TEST(Models, ZeroInitialisedHeadsGiveOneHalf) {
  const auto batch = random_batch(3, 32, 6);
  for (auto a : scl::all_archs()) {
    const auto m = small_model(a, true);
    for (double p : scl::classify(m, batch)) EXPECT_EQ(p, 0.5) << scl::to_string(a);
  }
}

TEST(Models, SharedComponentsInitialiseIdentically) {
  const auto fcn = small_model(scl::ArchId::kFcn, false, 9), dann = small_model(scl::ArchId::kDann, false, 9);
  EXPECT_EQ(fcn.params().find("backbone.block0.weight")->value.vec(), dann.params().find("backbone.block0.weight")->value.vec());
  EXPECT_EQ(fcn.params().find("classification.out.weight")->value.vec(),
            dann.params().find("classification.out.weight")->value.vec());
}

TEST(Models, LogitToProbStaysInsideUnitInterval) {
  EXPECT_EQ(scl::logit_to_prob(0.0), 0.5);
  EXPECT_GT(scl::logit_to_prob(-1000.0), 0.0);
  EXPECT_LT(scl::logit_to_prob(1000.0), 1.0);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  const auto batch = random_batch(4, 32, 7);
  for (auto a : {scl::ArchId::kFcn, scl::ArchId::kTransformer, scl::ArchId::kTFcnAdda, scl::ArchId::kNasnet}) {
    auto m = small_model(a, false, 3);
    if (a == scl::ArchId::kTFcnAdda) m.use_target_encoder = true;
    const fs::path dir = fs::temp_directory_path() / ("scl_ckpt_" + scl::to_string(a));
    fs::remove_all(dir);
    scl::save_checkpoint(m, dir);
    const auto back = scl::load_checkpoint<float>(dir);
    EXPECT_EQ(back.arch(), a);
    EXPECT_EQ(back.use_target_encoder, m.use_target_encoder);
    EXPECT_EQ(scl::classify(back, batch), scl::classify(m, batch)) << scl::to_string(a);
    EXPECT_EQ(back.parameter_report(), m.parameter_report());
  }
  EXPECT_THROW(scl::load_checkpoint<float>(fs::temp_directory_path() / "scl_no_such_ckpt"), scl::IngestionError);
}

TEST(Models, ParameterReportIsDeterministic) {
  const auto r = small_model(scl::ArchId::kDann).parameter_report();
  EXPECT_EQ(r, small_model(scl::ArchId::kDann, false, 42).parameter_report());
  EXPECT_EQ(r.at("arch_id"), "DANN");
  EXPECT_TRUE(r.at("components").contains("domain"));
  EXPECT_EQ(r.at("total").get<std::size_t>(), r.at("trainable").get<std::size_t>());
}
