#ifndef SCL_SEQ_LAYERS_HPP
#define SCL_SEQ_LAYERS_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/core/nn.hpp"

namespace scl {

/// History length of every sequence sample.
inline constexpr std::size_t kWindowLength = 10;

struct SeqConfig {
  std::size_t window = kWindowLength;
  std::size_t rnn_hidden = 128;
  std::size_t attention_dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t ffn_dim = 256;

  friend bool operator==(const SeqConfig&, const SeqConfig&) = default;
};

inline nlohmann::json to_json(const SeqConfig& c) {
  return {{"window", c.window}, {"rnn_hidden", c.rnn_hidden}, {"attention_dim", c.attention_dim}, {"layers", c.layers},
          {"heads", c.heads}, {"d_model", c.d_model}, {"ffn_dim", c.ffn_dim}};
}

inline SeqConfig seq_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"window", "rnn_hidden", "attention_dim", "layers", "heads", "d_model", "ffn_dim"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("sequence: unknown key '" + k + "'");
  }
  SeqConfig c;
  c.window = j.value("window", c.window);
  c.rnn_hidden = j.value("rnn_hidden", c.rnn_hidden);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_model = j.value("d_model", c.d_model);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  if (c.window == 0 || c.rnn_hidden == 0 || c.attention_dim == 0 || c.layers == 0 || c.heads == 0 || c.d_model == 0 ||
      c.ffn_dim == 0) {
    throw ConfigError("sequence: all sizes must be positive");
  }
  if (c.d_model % c.heads) throw ConfigError("sequence: d_model must be divisible by heads");
  return c;
}

enum class DecodeMode { kTeacherForcing, kAutoregressive };

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "teacher_forcing") return DecodeMode::kTeacherForcing;
  if (s == "autoregressive") return DecodeMode::kAutoregressive;
  throw ValidationError("decode mode must be 'teacher_forcing' or 'autoregressive', got '" + s + "'");
}

/// Additive (Bahdanau) attention scorer: score(s, h) = v . tanh(W s + U h + b).
template <class T>
struct AdditiveAttention {
  Linear<T> query;  // W, no bias
  Linear<T> key;    // U, with bias
  Linear<T> score;  // v, no bias

  static AdditiveAttention create(ParameterStore<T>& store, const std::string& name, std::size_t query_dim,
                                  std::size_t key_dim, std::size_t attn_dim, Rng& rng) {
    AdditiveAttention a;
    a.query = Linear<T>::create(store, name + ".query", query_dim, attn_dim, rng, Init::kGlorot, false);
    a.key = Linear<T>::create(store, name + ".key", key_dim, attn_dim, rng, Init::kGlorot);
    a.score = Linear<T>::create(store, name + ".score", attn_dim, 1, rng, Init::kGlorot, false);
    return a;
  }

  /// Projects keys once per sequence: [G*L, K] -> [G*L, A].
  Var<T> project_keys(Tape<T>& tape, Var<T> keys) const { return key(tape, keys); }

  struct Result {
    Var<T> context;  // [G, K]
    Var<T> weights;  // [G, L]
  };

  /// query: [G, Q]; keys_proj: [G*L, A]; values: [G*L, K]; allowed: G*L flags.
  Result operator()(Tape<T>& tape, Var<T> q, Var<T> keys_proj, Var<T> values, const std::vector<std::uint8_t>& allowed) const {
    const std::size_t groups = q.dim(0);
    const std::size_t len = keys_proj.dim(0) / groups;
    Var<T> e = ops::tanh(ops::broadcast_add_groups(keys_proj, query(tape, q), len));
    Var<T> scores = ops::reshape(score(tape, e), {groups, len});
    Var<T> w = ops::masked_softmax(scores, allowed);
    return {ops::weighted_sum_groups(w, values), w};
  }
};

/// Recurrent encoder-decoder over feature windows with additive attention.
/// The decoder input at step i is [one-hot(previous label), context, encoder state i].
template <class T>
struct AttnEncoderDecoder {
  LstmCell<T> encoder;
  LstmCell<T> decoder;
  AdditiveAttention<T> attention;
  Linear<T> output;
  std::size_t hidden = 0;

  static AttnEncoderDecoder create(ParameterStore<T>& store, const std::string& name, std::size_t feature_dim,
                                   const SeqConfig& cfg, Rng& rng, bool zero_output) {
    AttnEncoderDecoder m;
    m.hidden = cfg.rnn_hidden;
    m.encoder = LstmCell<T>::create(store, name + ".encoder", feature_dim, cfg.rnn_hidden, rng);
    m.decoder = LstmCell<T>::create(store, name + ".decoder", 2 + 2 * cfg.rnn_hidden, cfg.rnn_hidden, rng);
    m.attention = AdditiveAttention<T>::create(store, name + ".attention", cfg.rnn_hidden, cfg.rnn_hidden, cfg.attention_dim, rng);
    m.output = Linear<T>::create(store, name + ".output", 2 * cfg.rnn_hidden, 1, rng, zero_output ? Init::kZero : Init::kGlorot);
    return m;
  }

  struct Encoded {
    Var<T> states;  // [G*L, H], group-major
    typename LstmCell<T>::State final;
  };

  /// feats: [G*L, F] group-major windows.
  Encoded encode(Tape<T>& tape, Var<T> feats, std::size_t groups, std::size_t len) const {
    auto s = encoder.zero_state(tape, groups);
    std::vector<Var<T>> steps;
    for (std::size_t l = 0; l < len; ++l) {
      std::vector<std::size_t> rows(groups);
      for (std::size_t g = 0; g < groups; ++g) rows[g] = g * len + l;
      s = encoder(tape, ops::gather_rows(feats, rows), s);
      steps.push_back(s.h);
    }
    // Steps are stacked time-major; reorder to group-major.
    std::vector<std::size_t> perm(groups * len);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t l = 0; l < len; ++l) perm[g * len + l] = l * groups + g;
    return {ops::gather_rows(ops::concat_rows(steps), perm), s};
  }

  /// Decodes every window position. `labels` (group-major, G*L) feed teacher forcing.
  /// Returns logits [G, L]; per-step attention weights go to `weights_out` when given.
  Var<T> decode(Tape<T>& tape, const Encoded& enc, std::size_t groups, std::size_t len,
                const std::vector<std::uint8_t>& pad_mask, DecodeMode mode, const std::vector<int>& labels,
                std::vector<Tensor<T>>* weights_out = nullptr) const {
    if (mode == DecodeMode::kTeacherForcing && labels.size() != groups * len) {
      throw ShapeError("teacher forcing needs " + std::to_string(groups * len) + " labels, got " + std::to_string(labels.size()));
    }
    std::vector<std::uint8_t> allowed(groups * len);
    for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = pad_mask[i] ? 0 : 1;
    // A window whose every position is padding cannot occur (the last position is always a real frame).
    Var<T> keys_proj = attention.project_keys(tape, enc.states);
    typename LstmCell<T>::State s = enc.final;
    std::vector<int> prev(groups, 0);
    std::vector<Var<T>> step_logits;
    for (std::size_t i = 0; i < len; ++i) {
      Tensor<T> onehot({groups, 2});
      for (std::size_t g = 0; g < groups; ++g) onehot[g * 2 + static_cast<std::size_t>(prev[g])] = T(1);
      auto att = attention(tape, s.h, keys_proj, enc.states, allowed);
      if (weights_out) weights_out->push_back(att.weights.value());
      std::vector<std::size_t> rows(groups);
      for (std::size_t g = 0; g < groups; ++g) rows[g] = g * len + i;
      Var<T> aligned = ops::gather_rows(enc.states, rows);
      s = decoder(tape, ops::concat_cols<T>({tape.constant(std::move(onehot)), att.context, aligned}), s);
      Var<T> logit = output(tape, ops::concat_cols<T>({s.h, att.context}));
      step_logits.push_back(logit);
      for (std::size_t g = 0; g < groups; ++g) {
        prev[g] = mode == DecodeMode::kTeacherForcing ? labels[g * len + i] : (logit.value()[g] >= T(0) ? 1 : 0);
      }
    }
    return ops::concat_cols(step_logits);
  }
};

/// Sinusoidal position table [len, d].
template <class T>
Tensor<T> positional_encoding(std::size_t len, std::size_t d) {
  Tensor<T> pe({len, d});
  for (std::size_t p = 0; p < len; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe[p * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(p * freq) : std::cos(p * freq));
    }
  return pe;
}

template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore<T>& store, const std::string& name, std::size_t d, std::size_t heads,
                                   Rng& rng) {
    MultiHeadAttention m;
    m.heads = heads;
    m.wq = Linear<T>::create(store, name + ".q", d, d, rng, Init::kGlorot);
    m.wk = Linear<T>::create(store, name + ".k", d, d, rng, Init::kGlorot);
    m.wv = Linear<T>::create(store, name + ".v", d, d, rng, Init::kGlorot);
    m.wo = Linear<T>::create(store, name + ".o", d, d, rng, Init::kGlorot);
    return m;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x, Var<T> memory, std::size_t groups, const std::vector<std::uint8_t>& allowed,
                    Tensor<T>* weights_out) const {
    Var<T> ctx = ops::dot_product_attention(wq(tape, x), wk(tape, memory), wv(tape, memory), groups, heads, allowed,
                                            weights_out);
    return wo(tape, ctx);
  }
};

template <class T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attn, cross_attn;
  LayerNorm<T> norm1, norm2, norm3;
  Linear<T> ffn1, ffn2;
};

/// Causal transformer decoder: masked self-attention plus masked cross-attention over the
/// projected feature window, post-norm residual blocks, one logit per position.
template <class T>
struct TransformerDecoder {
  Linear<T> input_proj;
  Linear<T> memory_proj;
  std::vector<DecoderLayer<T>> layers;
  Linear<T> output;
  std::size_t d_model = 0;
  std::size_t heads = 1;

  static TransformerDecoder create(ParameterStore<T>& store, const std::string& name, std::size_t feature_dim,
                                   const SeqConfig& cfg, Rng& rng, bool zero_output) {
    TransformerDecoder m;
    m.d_model = cfg.d_model;
    m.heads = cfg.heads;
    m.input_proj = Linear<T>::create(store, name + ".input", feature_dim, cfg.d_model, rng, Init::kGlorot);
    m.memory_proj = Linear<T>::create(store, name + ".memory", feature_dim, cfg.d_model, rng, Init::kGlorot);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      DecoderLayer<T> dl;
      dl.self_attn = MultiHeadAttention<T>::create(store, p + ".self", cfg.d_model, cfg.heads, rng);
      dl.norm1 = LayerNorm<T>::create(store, p + ".norm1", cfg.d_model);
      dl.cross_attn = MultiHeadAttention<T>::create(store, p + ".cross", cfg.d_model, cfg.heads, rng);
      dl.norm2 = LayerNorm<T>::create(store, p + ".norm2", cfg.d_model);
      dl.ffn1 = Linear<T>::create(store, p + ".ffn1", cfg.d_model, cfg.ffn_dim, rng);
      dl.ffn2 = Linear<T>::create(store, p + ".ffn2", cfg.ffn_dim, cfg.d_model, rng, Init::kGlorot);
      dl.norm3 = LayerNorm<T>::create(store, p + ".norm3", cfg.d_model);
      m.layers.push_back(dl);
    }
    m.output = Linear<T>::create(store, name + ".output", cfg.d_model, 1, rng, zero_output ? Init::kZero : Init::kGlorot);
    return m;
  }

  /// Query i may see key j when j <= i and j is a real frame (a padded query sees itself).
  static std::vector<std::uint8_t> causal_mask(std::size_t groups, std::size_t len, const std::vector<std::uint8_t>& pad) {
    std::vector<std::uint8_t> allowed(groups * len * len, 0);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j <= i; ++j) allowed[(g * len + i) * len + j] = (!pad[g * len + j] || j == i) ? 1 : 0;
    return allowed;
  }

  /// feats: [G*L, F] group-major. Returns logits [G, L]. Self-attention weights of every
  /// layer go to `self_weights` when given.
  Var<T> forward(Tape<T>& tape, Var<T> feats, std::size_t groups, std::size_t len, const std::vector<std::uint8_t>& pad_mask,
                 std::vector<Tensor<T>>* self_weights = nullptr) const {
    Tensor<T> pe = positional_encoding<T>(len, d_model);
    Tensor<T> pos({groups * len, d_model});
    for (std::size_t g = 0; g < groups; ++g)
      std::copy(pe.data(), pe.data() + pe.size(), pos.data() + g * len * d_model);
    Var<T> posv = tape.constant(std::move(pos));
    Var<T> x = ops::add(input_proj(tape, feats), posv);
    Var<T> mem = ops::add(memory_proj(tape, feats), posv);
    const auto allowed = causal_mask(groups, len, pad_mask);
    for (const auto& l : layers) {
      Tensor<T> w;
      x = l.norm1(tape, ops::add(x, l.self_attn(tape, x, x, groups, allowed, self_weights ? &w : nullptr)));
      if (self_weights) self_weights->push_back(std::move(w));
      x = l.norm2(tape, ops::add(x, l.cross_attn(tape, x, mem, groups, allowed, nullptr)));
      x = l.norm3(tape, ops::add(x, l.ffn2(tape, ops::relu(l.ffn1(tape, x)))));
    }
    return ops::reshape(output(tape, x), {groups, len});
  }
};

}  // namespace scl

#endif  // SCL_SEQ_LAYERS_HPP
