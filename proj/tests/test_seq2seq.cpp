#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "scl/seq2seq.hpp"

namespace {

constexpr std::size_t kFeat = 6;

scl::SeqConfig seq_config(std::size_t heads = 2, std::size_t layers = 2) {
  scl::SeqConfig s;
  s.rnn_hidden = 8;
  s.attention_dim = 8;
  s.d_model = 8;
  s.ffn_dim = 16;
  s.heads = heads;
  s.layers = layers;
  return s;
}

scl::BackboneConfig tiny_backbone() {
  scl::BackboneConfig b;
  b.channels = {2};
  b.feature_dim = kFeat;
  b.input_size = 16;
  return b;
}

scl::ModelHandle<double> seq_model(scl::ArchId a, std::uint64_t seed = 0, bool zero = false,
                                   const scl::SeqConfig& s = seq_config()) {
  scl::HeadConfig h;
  h.zero_init_output = zero;
  return scl::build_model<double>(a, tiny_backbone(), h, seed, s);
}

scl::Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  scl::Tensor<double> t({r, c});
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

scl::SequenceSample<double> random_sample(std::size_t pads, std::mt19937_64& rng) {
  scl::SequenceSample<double> s;
  s.features = random_matrix(scl::kWindowLength, kFeat, rng);
  s.labels.assign(scl::kWindowLength, 0);
  s.pad_mask.assign(scl::kWindowLength, 0);
  for (std::size_t p = 0; p < pads; ++p) s.pad_mask[p] = 1;
  for (std::size_t p = 7; p < scl::kWindowLength; ++p) s.labels[p] = 1;
  return s;
}

/// Row-vector times transposed weight plus optional bias.
std::vector<double> affine(const scl::Linear<double>& l, const double* x) {
  const auto& w = l.weight->value;
  std::vector<double> y(w.dim(0));
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    double s = l.bias ? l.bias->value[o] : 0.0;
    for (std::size_t i = 0; i < w.dim(1); ++i) s += w.at(o, i) * x[i];
    y[o] = s;
  }
  return y;
}

}  // namespace

TEST(Seq2Seq, EncoderShapeAndDeterminism) {
  std::mt19937_64 rng(1);
  const auto m = seq_model(scl::ArchId::kAttnRnn);
  const auto s = random_sample(0, rng);
  const auto st = scl::encode(m, s);
  EXPECT_EQ(st.shape(), (scl::Shape{scl::kWindowLength, 8}));
  EXPECT_EQ(scl::encode(m, s).vec(), st.vec());
  auto bad = s;
  bad.features = random_matrix(5, kFeat, rng);
  EXPECT_THROW(scl::encode(m, bad), scl::ShapeError);
}

TEST(Seq2Seq, SingleUnmaskedKeyTakesAllWeight) {
  std::mt19937_64 rng(2);
  const auto m = seq_model(scl::ArchId::kAttnRnn);
  const auto keys = random_matrix(scl::kWindowLength, 8, rng);
  const auto q = random_matrix(1, 8, rng).reshaped({8});
  std::vector<std::uint8_t> mask(scl::kWindowLength, 1);
  mask[4] = 0;
  const auto r = scl::attend(m, q, keys, mask);
  for (std::size_t j = 0; j < scl::kWindowLength; ++j) EXPECT_EQ(r.weights[j], j == 4 ? 1.0 : 0.0);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(r.context[c], keys.at(4, c));
  std::fill(mask.begin(), mask.end(), 1);
  EXPECT_THROW(scl::attend(m, q, keys, mask), scl::ValidationError);
}

TEST(Seq2Seq, IdenticalKeysShareWeightEvenly) {
  std::mt19937_64 rng(3);
  const auto m = seq_model(scl::ArchId::kAttnRnn);
  const auto row = random_matrix(1, 8, rng);
  scl::Tensor<double> keys({2, 8});
  for (std::size_t c = 0; c < 8; ++c) keys.at(0, c) = keys.at(1, c) = row[c];
  const auto r = scl::attend(m, random_matrix(1, 8, rng).reshaped({8}), keys, {0, 0});
  EXPECT_EQ(r.weights, (std::vector<double>{0.5, 0.5}));
}

TEST(Seq2Seq, AdditiveAttentionMatchesBruteForce) {
  std::mt19937_64 rng(4);
  const auto m = seq_model(scl::ArchId::kAttnRnn);
  const auto& a = m.attn->attention;
  const auto keys = random_matrix(scl::kWindowLength, 8, rng);
  const auto q = random_matrix(1, 8, rng).reshaped({8});
  const auto r = scl::attend(m, q, keys, std::vector<std::uint8_t>(scl::kWindowLength, 0));
  const auto wq = affine(a.query, q.data());
  std::vector<double> scores(scl::kWindowLength);
  for (std::size_t j = 0; j < scl::kWindowLength; ++j) {
    auto e = affine(a.key, keys.data() + j * 8);
    for (std::size_t c = 0; c < e.size(); ++c) e[c] = std::tanh(e[c] + wq[c]);
    scores[j] = affine(a.score, e.data())[0];
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (auto& s : scores) z += (s = std::exp(s - mx));
  for (std::size_t c = 0; c < 8; ++c) {
    double ctx = 0;
    for (std::size_t j = 0; j < scl::kWindowLength; ++j) ctx += scores[j] / z * keys.at(j, c);
    EXPECT_NEAR(r.context[c], ctx, 1e-6);
  }
}

TEST(Seq2Seq, AttentionWeightsFormASimplex) {
  std::mt19937_64 rng(5);
  const auto m = seq_model(scl::ArchId::kAttnRnn);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<scl::Tensor<double>> w;
    scl::decode_sequence(m, random_sample(trial % scl::kWindowLength, rng), scl::DecodeMode::kAutoregressive, &w);
    for (const auto& step : w) {
      double sum = 0;
      for (double v : step.values()) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Seq2Seq, DecodeModesAndZeroInit) {
  std::mt19937_64 rng(6);
  const auto s = random_sample(2, rng);
  const auto z = seq_model(scl::ArchId::kAttnRnn, 0, true);
  for (auto mode : {"teacher_forcing", "autoregressive"}) {
    const auto p = scl::decode_sequence(z, s, mode);
    ASSERT_EQ(p.size(), scl::kWindowLength);
    for (double v : p) EXPECT_EQ(v, 0.5);
  }
  EXPECT_THROW(scl::decode_sequence(z, s, "beam"), scl::ValidationError);
  for (double v : scl::transformer_decode(seq_model(scl::ArchId::kTransformer, 0, true), s)) EXPECT_EQ(v, 0.5);
}

TEST(Seq2Seq, TransformerIsCausal) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto m = seq_model(scl::ArchId::kTransformer, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_sample(static_cast<std::size_t>(trial % 5), rng);
    const auto base = scl::transformer_decode(m, s);
    auto moved = s;
    const std::size_t pos = 7;
    for (std::size_t c = 0; c < kFeat; ++c) moved.features.at(pos, c) += nd(rng);
    const auto after = scl::transformer_decode(m, moved);
    for (std::size_t k = 0; k < pos; ++k) ASSERT_EQ(after[k], base[k]) << "trial " << trial << " position " << k;
  }
}

TEST(Seq2Seq, TransformerSelfAttentionMatchesHandComputation) {
  auto cfg = seq_config(1, 1);
  cfg.window = 2;
  const auto m = seq_model(scl::ArchId::kTransformer, 5, false, cfg);
  std::mt19937_64 rng(8);
  scl::SequenceSample<double> s;
  s.features = random_matrix(2, kFeat, rng);
  s.labels = {0, 1};
  s.pad_mask = {0, 0};
  std::vector<scl::Tensor<double>> w;
  scl::transformer_decode(m, s, &w);
  ASSERT_EQ(w.size(), 1u);

  const auto& t = *m.transformer;
  const auto pe = scl::positional_encoding<double>(2, 8);
  std::vector<std::vector<double>> x(2);
  for (std::size_t p = 0; p < 2; ++p) {
    x[p] = affine(t.input_proj, s.features.data() + p * kFeat);
    for (std::size_t c = 0; c < 8; ++c) x[p][c] += pe.at(p, c);
  }
  const auto q1 = affine(t.layers[0].self_attn.wq, x[1].data());
  double sc[2];
  for (std::size_t j = 0; j < 2; ++j) {
    const auto kj = affine(t.layers[0].self_attn.wk, x[j].data());
    sc[j] = std::inner_product(q1.begin(), q1.end(), kj.begin(), 0.0) / std::sqrt(8.0);
  }
  const double w0 = 1.0 / (1.0 + std::exp(sc[1] - sc[0]));
  // Layout [group, head, query, key] with one group and one head.
  EXPECT_EQ(w[0][0], 1.0);
  EXPECT_EQ(w[0][1], 0.0);
  EXPECT_NEAR(w[0][2], w0, 1e-6);
  EXPECT_NEAR(w[0][3], 1.0 - w0, 1e-6);
}

TEST(Seq2Seq, PaddedPositionsAreNeverAttended) {
  const auto allowed = scl::TransformerDecoder<double>::causal_mask(1, 4, {1, 1, 0, 0});
  // Rows are queries, columns keys.
  const std::vector<std::uint8_t> expect{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 1};
  EXPECT_EQ(allowed, expect);
}
