#ifndef SCL_SEQ2SEQ_HPP
#define SCL_SEQ2SEQ_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "scl/models.hpp"

namespace scl {

/// One history window of precomputed frame features.
template <class T>
struct SequenceSample {
  Tensor<T> features;  // [L, F]
  std::vector<int> labels;
  std::vector<std::uint8_t> pad_mask;  // 1 marks a left-padded position

  std::size_t length() const { return labels.size(); }
};

/// Window ending at frame `end` of a demonstration whose per-frame features are `feats` [j, F].
template <class T>
SequenceSample<T> make_sequence_sample(const Tensor<T>& feats, const std::vector<int>& labels, std::size_t end,
                                       std::size_t window = kWindowLength) {
  const FrameWindow w = window_ending_at(labels, end, window);
  const std::size_t f = feats.dim(1);
  SequenceSample<T> s;
  s.features = Tensor<T>({window, f});
  for (std::size_t p = 0; p < window; ++p)
    std::copy(feats.data() + w.frame_index[p] * f, feats.data() + (w.frame_index[p] + 1) * f, s.features.data() + p * f);
  s.labels = w.labels;
  s.pad_mask = w.pad_mask;
  return s;
}

namespace detail {

template <class T>
void check_sample(const ModelHandle<T>& m, const SequenceSample<T>& s) {
  const std::size_t len = m.config.seq.window;
  if (s.features.rank() != 2 || s.features.dim(0) != len || s.labels.size() != len || s.pad_mask.size() != len) {
    throw ShapeError("sequence sample must hold " + std::to_string(len) + " positions, got features " +
                     shape_str(s.features.shape()) + ", " + std::to_string(s.labels.size()) + " labels");
  }
  if (s.features.dim(1) != m.feature_dim()) {
    throw ShapeError("sequence sample feature width " + std::to_string(s.features.dim(1)) + " != model feature_dim " +
                     std::to_string(m.feature_dim()));
  }
}

inline std::vector<double> probs_of(const Tensor<double>& z) {
  std::vector<double> out;
  for (double v : z.values()) out.push_back(logit_to_prob(v));
  return out;
}

template <class T>
std::vector<double> probs_of(const Tensor<T>& z) {
  return probs_of(z.template cast<double>());
}

}  // namespace detail

/// Encoder states [L, H] of the attention encoder-decoder.
template <class T>
Tensor<T> encode(const ModelHandle<T>& m, const SequenceSample<T>& s) {
  if (!m.attn) throw CapabilityError(to_string(m.arch()) + " has no recurrent encoder");
  detail::check_sample(m, s);
  Tape<T> tape(false);
  return m.attn->encode(tape, tape.constant(s.features), 1, s.length()).states.value();
}

template <class T>
struct AttentionResult {
  Tensor<T> context;            // [K]
  std::vector<double> weights;  // [L]
};

/// Additive attention of one query [Q] over keys [L, K]; mask flags positions to ignore.
template <class T>
AttentionResult<T> attend(const AdditiveAttention<T>& scorer, const Tensor<T>& query, const Tensor<T>& keys,
                          const std::vector<std::uint8_t>& mask) {
  if (keys.rank() != 2 || mask.size() != keys.dim(0)) throw ShapeError("attend: mask length must equal key count");
  std::vector<std::uint8_t> allowed(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) allowed[i] = mask[i] ? 0 : 1;
  Tape<T> tape(false);
  Var<T> k = tape.constant(keys);
  auto r = scorer(tape, tape.constant(query.reshaped({1, query.size()})), scorer.project_keys(tape, k), k, allowed);
  AttentionResult<T> out;
  out.context = r.context.value().reshaped({keys.dim(1)});
  for (T w : r.weights.value().values()) out.weights.push_back(static_cast<double>(w));
  return out;
}

template <class T>
AttentionResult<T> attend(const ModelHandle<T>& m, const Tensor<T>& query, const Tensor<T>& keys,
                          const std::vector<std::uint8_t>& mask) {
  if (!m.attn) throw CapabilityError(to_string(m.arch()) + " has no additive attention");
  return attend(m.attn->attention, query, keys, mask);
}

/// Success probability at every window position. Teacher forcing feeds the sample's
/// labels; autoregressive decoding feeds thresholded predictions starting from label 0.
template <class T>
std::vector<double> decode_sequence(const ModelHandle<T>& m, const SequenceSample<T>& s, DecodeMode mode,
                                    std::vector<Tensor<T>>* weights_out = nullptr) {
  if (!m.attn) throw CapabilityError(to_string(m.arch()) + " has no recurrent decoder");
  detail::check_sample(m, s);
  Tape<T> tape(false);
  const auto enc = m.attn->encode(tape, tape.constant(s.features), 1, s.length());
  Var<T> z = m.attn->decode(tape, enc, 1, s.length(), s.pad_mask, mode, s.labels, weights_out);
  return detail::probs_of(z.value());
}

template <class T>
std::vector<double> decode_sequence(const ModelHandle<T>& m, const SequenceSample<T>& s, const std::string& mode) {
  return decode_sequence(m, s, parse_decode_mode(mode));
}

/// Causally masked transformer probabilities at every window position.
template <class T>
std::vector<double> transformer_decode(const ModelHandle<T>& m, const SequenceSample<T>& s,
                                       std::vector<Tensor<T>>* self_weights = nullptr) {
  if (!m.transformer) throw CapabilityError(to_string(m.arch()) + " has no transformer decoder");
  detail::check_sample(m, s);
  Tape<T> tape(false);
  Var<T> z = m.transformer->forward(tape, tape.constant(s.features), 1, s.length(), s.pad_mask, self_weights);
  return detail::probs_of(z.value());
}

}  // namespace scl

#endif  // SCL_SEQ2SEQ_HPP
