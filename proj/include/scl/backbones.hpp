#ifndef SCL_BACKBONES_HPP
#define SCL_BACKBONES_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/core/nn.hpp"
#include "scl/dataset.hpp"

namespace scl {

struct BackboneConfig {
  std::vector<std::size_t> channels{16, 32, 64, 64, 128, 128};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t feature_dim = 256;
  std::size_t input_size = kModelInputSize;
  std::size_t in_channels = 3;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

inline nlohmann::json to_json(const BackboneConfig& c) {
  return {{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}, {"feature_dim", c.feature_dim},
          {"input_size", c.input_size}, {"in_channels", c.in_channels}};
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"channels", "kernel", "stride", "feature_dim", "input_size", "in_channels"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("backbone: unknown key '" + k + "'");
  }
  BackboneConfig c;
  c.channels = j.value("channels", c.channels);
  c.kernel = j.value("kernel", c.kernel);
  c.stride = j.value("stride", c.stride);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.input_size = j.value("input_size", c.input_size);
  c.in_channels = j.value("in_channels", c.in_channels);
  if (c.channels.empty() || c.kernel == 0 || c.stride == 0 || c.feature_dim == 0 || c.input_size == 0) {
    throw ConfigError("backbone: channels, kernel, stride, feature_dim and input_size must be positive");
  }
  return c;
}

/// Convolutional feature extractor: N blocks of (conv with stride, rectifier), a final
/// 1x1 convolution to feature_dim channels, rectifier, global average pooling.
template <class T>
class FcnBackbone {
 public:
  static FcnBackbone create(ParameterStore<T>& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng) {
    FcnBackbone b;
    b.cfg_ = cfg;
    std::size_t in = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      b.blocks_.push_back(Conv2d<T>::create(store, prefix + ".block" + std::to_string(i), in, cfg.channels[i], cfg.kernel,
                                            cfg.stride, rng));
      in = cfg.channels[i];
    }
    b.final_ = Conv2d<T>::create(store, prefix + ".final", in, cfg.feature_dim, 1, 1, rng);
    return b;
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return cfg_.feature_dim; }

  /// Spatial side length after the last block.
  std::size_t output_spatial() const {
    std::size_t s = cfg_.input_size;
    const std::size_t pad = cfg_.kernel / 2;
    for (std::size_t i = 0; i < blocks_.size(); ++i) s = (s + 2 * pad - cfg_.kernel) / cfg_.stride + 1;
    return s;
  }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& c : blocks_) {
      out.push_back(c.weight);
      out.push_back(c.bias);
    }
    out.push_back(final_.weight);
    out.push_back(final_.bias);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  void check_input(const Shape& s) const {
    if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.input_size || s[3] != cfg_.input_size) {
      throw ShapeError("backbone expects images of " + std::to_string(cfg_.input_size) + "x" +
                       std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.in_channels) + " (batch " +
                       shape_str({0, cfg_.in_channels, cfg_.input_size, cfg_.input_size}) + "), got " + shape_str(s));
    }
  }

  /// Activation after the first block, exposed for inspection.
  Var<T> first_block(Tape<T>& tape, Var<T> images) const {
    check_input(images.shape());
    return ops::relu(blocks_.front()(tape, images));
  }

  Var<T> operator()(Tape<T>& tape, Var<T> images) const {
    check_input(images.shape());
    Var<T> x = images;
    for (const auto& c : blocks_) x = ops::relu(c(tape, x));
    x = ops::relu(final_(tape, x));
    return ops::global_avg_pool(x);
  }

 private:
  BackboneConfig cfg_;
  std::vector<Conv2d<T>> blocks_;
  Conv2d<T> final_;
};

/// An externally supplied frozen extractor (e.g. a network pretrained on a large image corpus).
/// Receives [N, 3, 160, 160] images in [0, 1] and returns [N, output_dim].
struct ExternalExtractor {
  std::string name;
  std::size_t output_dim = 0;
  std::function<Tensor<float>(const Tensor<float>&)> extract;
};

struct ExtractorConfig {
  /// "standin" builds a small random convnet; "external" expects an ExternalExtractor to be attached.
  std::string kind = "standin";
  std::vector<std::size_t> channels{16, 32, 32, 32};
  std::size_t pool = 4;
  bool frozen = true;

  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

inline nlohmann::json to_json(const ExtractorConfig& c) {
  return {{"kind", c.kind}, {"channels", c.channels}, {"pool", c.pool}, {"frozen", c.frozen}};
}

inline ExtractorConfig extractor_config_from_json(const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k != "kind" && k != "channels" && k != "pool" && k != "frozen") throw ConfigError("extractor: unknown key '" + k + "'");
  }
  ExtractorConfig c;
  c.kind = j.value("kind", c.kind);
  c.channels = j.value("channels", c.channels);
  c.pool = j.value("pool", c.pool);
  c.frozen = j.value("frozen", c.frozen);
  if (c.kind != "standin" && c.kind != "external") throw ConfigError("extractor.kind must be 'standin' or 'external'");
  return c;
}

/// Adapter in front of a pretrained feature extractor. Its weights stay frozen unless
/// the config says otherwise.
template <class T>
class PretrainedExtractor {
 public:
  static PretrainedExtractor create(ParameterStore<T>& store, const std::string& prefix, const ExtractorConfig& cfg,
                                    std::size_t input_size, Rng& rng) {
    PretrainedExtractor e;
    e.cfg_ = cfg;
    e.input_size_ = input_size;
    if (cfg.kind == "standin") {
      std::size_t in = 3;
      for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        e.convs_.push_back(Conv2d<T>::create(store, prefix + ".conv" + std::to_string(i), in, cfg.channels[i], 3, 2, rng));
        e.convs_.back().weight->frozen = cfg.frozen;
        e.convs_.back().bias->frozen = cfg.frozen;
        in = cfg.channels[i];
      }
    }
    return e;
  }

  const ExtractorConfig& config() const { return cfg_; }
  bool configured() const { return cfg_.kind == "standin" || static_cast<bool>(external_); }

  void attach(std::shared_ptr<const ExternalExtractor> ext) { external_ = std::move(ext); }

  std::size_t output_dim() const {
    if (cfg_.kind == "standin") return cfg_.channels.back() * cfg_.pool * cfg_.pool;
    if (!external_) throw ConfigError("pretrained extractor: no external extractor attached");
    return external_->output_dim;
  }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& c : convs_) {
      out.push_back(c.weight);
      out.push_back(c.bias);
    }
    return out;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != input_size_ || s[3] != input_size_) {
      throw ShapeError("pretrained extractor expects " + std::to_string(input_size_) + "x" + std::to_string(input_size_) +
                       "x3 images, got " + shape_str(s));
    }
    if (cfg_.kind == "external") {
      if (!external_) throw ConfigError("pretrained extractor: no external extractor attached");
      const Tensor<float> out = external_->extract(images.value().template cast<float>());
      if (out.rank() != 2 || out.dim(0) != s[0] || out.dim(1) != external_->output_dim) {
        throw ShapeError("external extractor '" + external_->name + "' returned " + shape_str(out.shape()));
      }
      return tape.constant(out.template cast<T>());
    }
    Var<T> x = images;
    for (const auto& c : convs_) x = ops::relu(c(tape, x));
    x = ops::adaptive_avg_pool(x, cfg_.pool, cfg_.pool);
    return ops::reshape(x, {s[0], output_dim()});
  }

 private:
  ExtractorConfig cfg_;
  std::size_t input_size_ = kModelInputSize;
  std::vector<Conv2d<T>> convs_;
  std::shared_ptr<const ExternalExtractor> external_;
};

}  // namespace scl

#endif  // SCL_BACKBONES_HPP
