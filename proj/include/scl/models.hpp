#ifndef SCL_MODELS_HPP
#define SCL_MODELS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/backbones.hpp"
#include "scl/dataset.hpp"
#include "scl/seq_layers.hpp"

namespace scl {

enum class ArchId { kNasnet, kFcn, kTFcn, kAttnRnn, kTransformer, kDann, kAdda, kTFcnAdda };

inline const std::vector<ArchId>& all_archs() {
  static const std::vector<ArchId> v{ArchId::kNasnet, ArchId::kFcn,  ArchId::kTFcn, ArchId::kAttnRnn,
                                     ArchId::kTransformer, ArchId::kDann, ArchId::kAdda, ArchId::kTFcnAdda};
  return v;
}

inline std::string to_string(ArchId a) {
  switch (a) {
    case ArchId::kNasnet: return "NASNET";
    case ArchId::kFcn: return "FCN";
    case ArchId::kTFcn: return "T_FCN";
    case ArchId::kAttnRnn: return "ATTN_RNN";
    case ArchId::kTransformer: return "TRANSFORMER";
    case ArchId::kDann: return "DANN";
    case ArchId::kAdda: return "ADDA";
    case ArchId::kTFcnAdda: return "T_FCN_ADDA";
  }
  return "?";
}

inline ArchId parse_arch(const std::string& s) {
  for (ArchId a : all_archs()) {
    if (to_string(a) == s) return a;
  }
  std::string valid;
  for (ArchId a : all_archs()) valid += (valid.empty() ? "" : ", ") + to_string(a);
  throw ConfigError("unknown arch_id '" + s + "' (valid: " + valid + ")");
}

enum class HeadKind { kClassification, kTiming, kDomain };

inline std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kClassification: return "classification";
    case HeadKind::kTiming: return "timing";
    case HeadKind::kDomain: return "domain";
  }
  return "?";
}

/// Head set of every architecture.
inline std::vector<HeadKind> heads_for(ArchId a) {
  switch (a) {
    case ArchId::kTFcn: return {HeadKind::kClassification, HeadKind::kTiming};
    case ArchId::kDann:
    case ArchId::kAdda: return {HeadKind::kClassification, HeadKind::kDomain};
    case ArchId::kTFcnAdda: return {HeadKind::kClassification, HeadKind::kTiming, HeadKind::kDomain};
    default: return {HeadKind::kClassification};
  }
}

inline bool is_sequence_arch(ArchId a) { return a == ArchId::kAttnRnn || a == ArchId::kTransformer; }
inline bool is_adda_arch(ArchId a) { return a == ArchId::kAdda || a == ArchId::kTFcnAdda; }

struct HeadConfig {
  std::size_t hidden = 64;
  /// Zero the final layer of every head so untrained outputs are exactly 0.5.
  bool zero_init_output = false;
  /// Hidden widths of the NASNET fully-connected stack (a final 1-unit layer is appended).
  std::vector<std::size_t> nasnet_layers{128, 128, 64, 64, 32};
  ExtractorConfig extractor;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

inline nlohmann::json to_json(const HeadConfig& c) {
  return {{"hidden", c.hidden}, {"zero_init_output", c.zero_init_output}, {"nasnet_layers", c.nasnet_layers},
          {"extractor", to_json(c.extractor)}};
}

inline HeadConfig head_config_from_json(const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k != "hidden" && k != "zero_init_output" && k != "nasnet_layers" && k != "extractor") {
      throw ConfigError("heads: unknown key '" + k + "'");
    }
  }
  HeadConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
  c.nasnet_layers = j.value("nasnet_layers", c.nasnet_layers);
  if (j.contains("extractor")) c.extractor = extractor_config_from_json(j.at("extractor"));
  if (c.hidden == 0) throw ConfigError("heads.hidden must be positive");
  if (c.nasnet_layers.size() != 5) throw ConfigError("heads.nasnet_layers must list 5 hidden widths (6 layers in total)");
  return c;
}

struct ModelConfig {
  ArchId arch = ArchId::kFcn;
  BackboneConfig backbone;
  HeadConfig heads;
  SeqConfig seq;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"arch_id", to_string(c.arch)}, {"backbone", to_json(c.backbone)}, {"heads", to_json(c.heads)},
          {"sequence", to_json(c.seq)}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.arch = parse_arch(j.at("arch_id").get<std::string>());
  c.backbone = backbone_config_from_json(j.at("backbone"));
  c.heads = head_config_from_json(j.at("heads"));
  c.seq = seq_config_from_json(j.at("sequence"));
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Two-layer perceptron ending in a single logit.
template <class T>
struct MlpHead {
  Linear<T> hidden;
  Linear<T> out;

  static MlpHead create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t width, Rng& rng,
                        bool zero_output) {
    MlpHead h;
    h.hidden = Linear<T>::create(store, name + ".hidden", in, width, rng);
    h.out = Linear<T>::create(store, name + ".out", width, 1, rng, zero_output ? Init::kZero : Init::kGlorot);
    return h;
  }

  std::vector<Parameter<T>*> parameters() const { return {hidden.weight, hidden.bias, out.weight, out.bias}; }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const { return out(tape, ops::relu(hidden(tape, x))); }
};

/// Domain discriminator. The input is layer-normalised so the adversarial backbone cannot
/// win by inflating feature magnitude.
template <class T>
struct DomainHead {
  LayerNorm<T> norm;
  MlpHead<T> mlp;

  static DomainHead create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t width, Rng& rng,
                           bool zero_output) {
    DomainHead h;
    h.norm = LayerNorm<T>::create(store, name + ".norm", in);
    h.mlp = MlpHead<T>::create(store, name, in, width, rng, zero_output);
    return h;
  }

  std::vector<Parameter<T>*> parameters() const {
    auto p = mlp.parameters();
    p.insert(p.begin(), {norm.gamma, norm.beta});
    return p;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const { return mlp(tape, norm(tape, x)); }
};

/// Feed-forward stack of fully-connected layers with rectifiers in between.
template <class T>
struct FcStack {
  std::vector<Linear<T>> layers;

  static FcStack create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                        const std::vector<std::size_t>& widths, Rng& rng, bool zero_output) {
    FcStack s;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      s.layers.push_back(Linear<T>::create(store, name + ".fc" + std::to_string(i), in, widths[i], rng));
      in = widths[i];
    }
    s.layers.push_back(Linear<T>::create(store, name + ".fc" + std::to_string(widths.size()), in, 1, rng,
                                         zero_output ? Init::kZero : Init::kGlorot));
    return s;
  }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = ops::relu(layers[i](tape, x));
    return layers.back()(tape, x);
  }
};

/// Identity forward; backward scales the incoming gradient by -lambda.
template <class T>
Var<T> grl_apply(Var<T> x, T lambda) {
  return ops::gradient_reversal(x, lambda);
}

enum class Mode { kTrain, kInfer };

/// A built architecture: backbone, heads and their parameters.
template <class T = float>
class ModelHandle {
 public:
  ModelConfig config;
  Mode mode = Mode::kInfer;
  /// Current reversal coefficient on the domain path (DANN only).
  T grl_lambda = T(1);
  /// ADDA after adaptation routes inference through the target encoder.
  bool use_target_encoder = false;

  std::unique_ptr<ParameterStore<T>> store = std::make_unique<ParameterStore<T>>();
  std::optional<FcnBackbone<T>> backbone;
  std::optional<FcnBackbone<T>> target_backbone;
  std::optional<PretrainedExtractor<T>> extractor;
  std::optional<FcStack<T>> nasnet_head;
  std::optional<MlpHead<T>> cls_head;
  std::optional<MlpHead<T>> timing_head;
  std::optional<DomainHead<T>> domain_head;
  std::optional<AttnEncoderDecoder<T>> attn;
  std::optional<TransformerDecoder<T>> transformer;

  ArchId arch() const { return config.arch; }
  bool is_sequence() const { return is_sequence_arch(config.arch); }
  ParameterStore<T>& params() { return *store; }
  const ParameterStore<T>& params() const { return *store; }

  bool has_head(HeadKind h) const {
    const auto hs = heads_for(config.arch);
    return std::find(hs.begin(), hs.end(), h) != hs.end();
  }

  /// True when the domain head input passes through gradient reversal.
  bool has_grl() const { return config.arch == ArchId::kDann; }

  void require_head(HeadKind h) const {
    if (!has_head(h)) throw CapabilityError(to_string(config.arch) + " has no " + to_string(h) + " head");
  }

  std::size_t input_size() const { return config.backbone.input_size; }

  std::size_t feature_dim() const { return extractor ? extractor->output_dim() : backbone->feature_dim(); }

  /// Image features [N, F]. ADDA models use the target encoder when `target` is set.
  Var<T> features(Tape<T>& tape, Var<T> images, std::optional<bool> target = std::nullopt) const {
    if (extractor) return (*extractor)(tape, images);
    const bool use_target = target.value_or(use_target_encoder);
    if (use_target) {
      if (!target_backbone) throw CapabilityError(to_string(config.arch) + " has no target encoder");
      return (*target_backbone)(tape, images);
    }
    return (*backbone)(tape, images);
  }

  void check_images(const Shape& s) const {
    if (backbone) backbone->check_input(s);
    else if (s.size() != 4 || s[1] != 3 || s[2] != input_size() || s[3] != input_size()) {
      throw ShapeError("model expects images of " + std::to_string(input_size()) + "x" + std::to_string(input_size()) +
                       "x3, got " + shape_str(s));
    }
  }

  /// Classification logits [N, 1] for per-frame architectures.
  Var<T> class_logits(Tape<T>& tape, Var<T> feats) const {
    if (nasnet_head) return (*nasnet_head)(tape, feats);
    if (!cls_head) throw CapabilityError(to_string(config.arch) + " classifies windows, not single frames");
    return (*cls_head)(tape, feats);
  }

  Var<T> timing_logits(Tape<T>& tape, Var<T> feats) const {
    require_head(HeadKind::kTiming);
    return (*timing_head)(tape, feats);
  }

  /// Domain logits; DANN inserts gradient reversal at the head input.
  Var<T> domain_logits(Tape<T>& tape, Var<T> feats) const {
    require_head(HeadKind::kDomain);
    if (has_grl()) feats = grl_apply(feats, grl_lambda);
    return (*domain_head)(tape, feats);
  }

  /// Sequence logits [G, L] over group-major feature windows [G*L, F].
  Var<T> sequence_logits(Tape<T>& tape, Var<T> feats, std::size_t groups, std::size_t len,
                         const std::vector<std::uint8_t>& pad_mask, DecodeMode mode = DecodeMode::kAutoregressive,
                         const std::vector<int>& labels = {}) const {
    if (attn) {
      auto enc = attn->encode(tape, feats, groups, len);
      return attn->decode(tape, enc, groups, len, pad_mask, mode, labels);
    }
    if (transformer) return transformer->forward(tape, feats, groups, len, pad_mask);
    throw CapabilityError(to_string(config.arch) + " is not a sequence model");
  }

  /// Parameter counts per component, deterministic for a given config.
  nlohmann::json parameter_report() const {
    std::map<std::string, std::size_t> per;
    for (const auto* p : store->all()) per[p->name.substr(0, p->name.find('.'))] += p->value.size();
    return {{"arch_id", to_string(config.arch)}, {"total", store->count()}, {"trainable", store->trainable_count()},
            {"components", per}};
  }

  /// Copies the source encoder into the target encoder (ADDA stage-two start).
  void reset_target_encoder() {
    if (!target_backbone) throw CapabilityError(to_string(config.arch) + " has no target encoder");
    const auto src = backbone->parameters();
    const auto dst = target_backbone->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  }
};

/// Builds an architecture. Each component draws its initial weights from its own
/// seed stream, so shared components initialise identically across architectures.
template <class T = float>
ModelHandle<T> build_model(ArchId arch, const BackboneConfig& backbone_cfg, const HeadConfig& head_cfg, std::uint64_t seed,
                           const SeqConfig& seq_cfg = {}) {
  ModelHandle<T> m;
  m.config = {arch, backbone_cfg, head_cfg, seq_cfg, seed};
  auto& store = *m.store;
  auto stream = [seed](const char* label) { return Rng(derive_seed(seed, label)); };
  const bool zero = head_cfg.zero_init_output;

  if (arch == ArchId::kNasnet) {
    Rng r = stream("extractor");
    m.extractor = PretrainedExtractor<T>::create(store, "extractor", head_cfg.extractor, backbone_cfg.input_size, r);
    Rng rh = stream("classification");
    if (head_cfg.extractor.kind == "standin") {
      m.nasnet_head = FcStack<T>::create(store, "classification", m.extractor->output_dim(), head_cfg.nasnet_layers, rh, zero);
    }
    return m;
  }

  Rng rb = stream("backbone");
  m.backbone = FcnBackbone<T>::create(store, "backbone", backbone_cfg, rb);
  const std::size_t f = backbone_cfg.feature_dim;

  if (is_sequence_arch(arch)) {
    Rng rs = stream("sequence");
    if (arch == ArchId::kAttnRnn) m.attn = AttnEncoderDecoder<T>::create(store, "sequence", f, seq_cfg, rs, zero);
    else m.transformer = TransformerDecoder<T>::create(store, "sequence", f, seq_cfg, rs, zero);
    return m;
  }

  Rng rc = stream("classification");
  m.cls_head = MlpHead<T>::create(store, "classification", f, head_cfg.hidden, rc, zero);
  if (m.has_head(HeadKind::kTiming)) {
    Rng rt = stream("timing");
    m.timing_head = MlpHead<T>::create(store, "timing", f, head_cfg.hidden, rt, zero);
  }
  if (m.has_head(HeadKind::kDomain)) {
    Rng rd = stream("domain");
    m.domain_head = DomainHead<T>::create(store, "domain", f, head_cfg.hidden, rd, zero);
  }
  if (is_adda_arch(arch)) {
    Rng rt = stream("target_backbone");
    m.target_backbone = FcnBackbone<T>::create(store, "target_backbone", backbone_cfg, rt);
    m.reset_target_encoder();
  }
  return m;
}

template <class T = float>
ModelHandle<T> build_model(const ModelConfig& cfg) {
  return build_model<T>(cfg.arch, cfg.backbone, cfg.heads, cfg.seed, cfg.seq);
}

/// Attaches an external pretrained extractor to a NASNET model and builds its head.
template <class T>
void attach_extractor(ModelHandle<T>& m, std::shared_ptr<const ExternalExtractor> ext) {
  if (!m.extractor) throw CapabilityError(to_string(m.arch()) + " has no pretrained-extractor adapter");
  m.extractor->attach(std::move(ext));
  if (!m.nasnet_head) {
    Rng rh(derive_seed(m.config.seed, "classification"));
    m.nasnet_head = FcStack<T>::create(*m.store, "classification", m.extractor->output_dim(), m.config.heads.nasnet_layers,
                                       rh, m.config.heads.zero_init_output);
  }
}

/// Probability from a logit, kept strictly inside (0, 1).
inline double logit_to_prob(double z) {
  double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(p, lo, hi);
}

namespace detail {

template <class T>
Tensor<T> images_as(const Tensor<float>& images) {
  if constexpr (std::is_same_v<T, float>) return images;
  else return images.template cast<T>();
}

/// Rows [begin, end) of an image batch.
template <class T>
Tensor<T> image_rows(const Tensor<float>& images, std::size_t begin, std::size_t end) {
  const std::size_t per = images.size() / images.dim(0);
  Tensor<T> out({end - begin, images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(images[begin * per + i]);
  return out;
}

}  // namespace detail

/// Inference-mode features [N, F], computed in chunks to bound memory.
template <class T>
Tensor<T> infer_features(const ModelHandle<T>& m, const Tensor<float>& images, std::optional<bool> target = std::nullopt,
                         std::size_t chunk = 32) {
  m.check_images(images.shape());
  const std::size_t n = images.dim(0);
  Tensor<T> out({n, m.feature_dim()});
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tape<T> tape(false);
    Var<T> f = m.features(tape, tape.constant(detail::image_rows<T>(images, b, e)), target);
    std::copy(f.value().data(), f.value().data() + f.value().size(), out.data() + b * m.feature_dim());
  }
  return out;
}

/// Per-frame logits of a sequence model from per-frame features, treating the rows as
/// one ordered sequence: frame k is predicted at the last position of the window ending at k.
template <class T>
std::vector<double> sequence_frame_logits(const ModelHandle<T>& m, const Tensor<T>& feats, std::size_t chunk = 64) {
  const std::size_t n = feats.dim(0), f = feats.dim(1), len = m.config.seq.window;
  std::vector<int> dummy(n, 0);
  std::vector<double> out(n);
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk), g = e - b;
    Tensor<T> win({g * len, f});
    std::vector<std::uint8_t> pad(g * len);
    for (std::size_t k = b; k < e; ++k) {
      const auto w = window_ending_at(dummy, k, len);
      for (std::size_t p = 0; p < len; ++p) {
        std::copy(feats.data() + w.frame_index[p] * f, feats.data() + (w.frame_index[p] + 1) * f,
                  win.data() + ((k - b) * len + p) * f);
        pad[(k - b) * len + p] = w.pad_mask[p];
      }
    }
    Tape<T> tape(false);
    Var<T> logits = m.sequence_logits(tape, tape.constant(std::move(win)), g, len, pad);
    for (std::size_t i = 0; i < g; ++i) out[b + i] = static_cast<double>(logits.value()[i * len + len - 1]);
  }
  return out;
}

/// Success probabilities for a batch. Sequence models read the batch as one ordered
/// frame sequence.
template <class T>
std::vector<double> classify(const ModelHandle<T>& m, const FrameBatch& batch) {
  m.require_head(HeadKind::kClassification);
  const Tensor<T> feats = infer_features(m, batch.images);
  std::vector<double> probs;
  if (m.is_sequence()) {
    for (double z : sequence_frame_logits(m, feats)) probs.push_back(logit_to_prob(z));
    return probs;
  }
  Tape<T> tape(false);
  Var<T> z = m.class_logits(tape, tape.constant(feats));
  for (T v : z.value().values()) probs.push_back(logit_to_prob(static_cast<double>(v)));
  return probs;
}

/// Completion-proportion estimates in [0, 1].
template <class T>
std::vector<double> predict_timing(const ModelHandle<T>& m, const FrameBatch& batch) {
  m.require_head(HeadKind::kTiming);
  const Tensor<T> feats = infer_features(m, batch.images);
  Tape<T> tape(false);
  Var<T> z = m.timing_logits(tape, tape.constant(feats));
  std::vector<double> out;
  for (T v : z.value().values()) out.push_back(logit_to_prob(static_cast<double>(v)));
  return out;
}

/// Probability that each frame comes from the target domain.
template <class T>
std::vector<double> discriminate_domain(const ModelHandle<T>& m, const FrameBatch& batch) {
  m.require_head(HeadKind::kDomain);
  const Tensor<T> feats = infer_features(m, batch.images);
  Tape<T> tape(false);
  Var<T> z = m.domain_logits(tape, tape.constant(feats));
  std::vector<double> out;
  for (T v : z.value().values()) out.push_back(logit_to_prob(static_cast<double>(v)));
  return out;
}

}  // namespace scl

#endif  // SCL_MODELS_HPP
