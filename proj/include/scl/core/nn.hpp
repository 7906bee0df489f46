#ifndef SCL_CORE_NN_HPP
#define SCL_CORE_NN_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "scl/core/ops.hpp"

namespace scl {

/// Stable 64-bit seed derived from a base seed and a component label (FNV-1a + splitmix).
/// Components seeded this way initialise identically regardless of which other
/// components an architecture owns.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

/// Owns every parameter of a model in registration order. Parameter addresses are stable.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    p->grad = Tensor<T>(std::move(shape));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<T>*> all() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  /// Parameters whose names start with `prefix`.
  std::vector<Parameter<T>*> with_prefix(std::string_view prefix) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) {
      if (std::string_view(p->name).substr(0, prefix.size()) == prefix) out.push_back(p.get());
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->frozen ? 0 : p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Snapshot of parameter values keyed by name.
template <class T>
using StateDict = std::map<std::string, Tensor<T>>;

template <class T>
StateDict<T> state_dict(const ParameterStore<T>& store) {
  StateDict<T> out;
  for (const auto* p : store.all()) out[p->name] = p->value;
  return out;
}

template <class T>
void load_state(ParameterStore<T>& store, const StateDict<T>& state) {
  for (auto* p : store.all()) {
    auto it = state.find(p->name);
    if (it == state.end()) throw ConfigError("state is missing parameter " + p->name);
    if (it->second.shape() != p->value.shape()) throw ShapeError("state shape mismatch for " + p->name);
    p->value = it->second;
  }
}

namespace init {

/// He-normal for layers followed by a rectifier.
template <class T>
void he_normal(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

/// Glorot-uniform for layers feeding saturating nonlinearities.
template <class T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace init

enum class Init { kHe, kGlorot, kZero };

template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       Init scheme = Init::kHe, bool with_bias = true) {
    Linear l;
    l.weight = &store.add(name + ".weight", {out, in});
    if (scheme == Init::kHe) init::he_normal(l.weight->value, in, rng);
    else if (scheme == Init::kGlorot) init::glorot_uniform(l.weight->value, in, out, rng);
    if (with_bias) l.bias = &store.add(name + ".bias", {out});
    return l;
  }

  std::size_t in_features() const { return weight->value.dim(1); }
  std::size_t out_features() const { return weight->value.dim(0); }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    if (bias) return ops::linear(x, tape.parameter(*weight), std::optional<Var<T>>(tape.parameter(*bias)));
    return ops::linear(x, tape.parameter(*weight));
  }
};

template <class T>
struct Conv2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, Rng& rng) {
    Conv2d c;
    c.weight = &store.add(name + ".weight", {out, in, kernel, kernel});
    init::he_normal(c.weight->value, in * kernel * kernel, rng);
    c.bias = &store.add(name + ".bias", {out});
    c.stride = stride;
    c.pad = kernel / 2;
    return c;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ops::conv2d(x, tape.parameter(*weight), tape.parameter(*bias), stride, pad);
  }
};

template <class T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    LayerNorm ln;
    ln.gamma = &store.add(name + ".gamma", {dim});
    ln.gamma->value.fill(T(1));
    ln.beta = &store.add(name + ".beta", {dim});
    return ln;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ops::layer_norm(x, tape.parameter(*gamma), tape.parameter(*beta));
  }
};

/// Standard LSTM cell with fused gate weights in (input, forget, cell, output) order.
template <class T>
struct LstmCell {
  Linear<T> input;   // [4H, in] + bias
  Linear<T> hidden;  // [4H, H], no bias
  std::size_t hidden_size = 0;

  static LstmCell create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
                         Rng& rng) {
    LstmCell c;
    c.hidden_size = hidden;
    c.input = Linear<T>::create(store, name + ".input", in, 4 * hidden, rng, Init::kGlorot);
    c.hidden = Linear<T>::create(store, name + ".hidden", hidden, 4 * hidden, rng, Init::kGlorot, false);
    // Forget-gate bias starts at 1 so early gradients pass through time.
    for (std::size_t i = hidden; i < 2 * hidden; ++i) c.input.bias->value[i] = T(1);
    return c;
  }

  struct State {
    Var<T> h;
    Var<T> c;
  };

  State zero_state(Tape<T>& tape, std::size_t batch) const {
    return {tape.constant(Tensor<T>({batch, hidden_size})), tape.constant(Tensor<T>({batch, hidden_size}))};
  }

  State operator()(Tape<T>& tape, Var<T> x, const State& s) const {
    const std::size_t h = hidden_size;
    Var<T> gates = ops::add(input(tape, x), hidden(tape, s.h));
    Var<T> i = ops::sigmoid(ops::slice_cols(gates, 0, h));
    Var<T> f = ops::sigmoid(ops::slice_cols(gates, h, h));
    Var<T> g = ops::tanh(ops::slice_cols(gates, 2 * h, h));
    Var<T> o = ops::sigmoid(ops::slice_cols(gates, 3 * h, h));
    Var<T> c = ops::add(ops::mul(f, s.c), ops::mul(i, g));
    Var<T> hn = ops::mul(o, ops::tanh(c));
    return {hn, c};
  }
};

}  // namespace scl

#endif  // SCL_CORE_NN_HPP
