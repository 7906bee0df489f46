#ifndef SCL_TRAINING_HPP
#define SCL_TRAINING_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/checkpoint.hpp"
#include "scl/core/optim.hpp"
#include "scl/inference.hpp"

namespace scl {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy of probabilities against 0/1 labels.
inline double classification_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) {
    throw ShapeError("classification_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (probs.empty()) throw ValidationError("classification_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw ValidationError("classification_loss: probability outside [0,1]");
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("classification_loss: labels must be 0 or 1");
    const double p = labels[i] ? probs[i] : 1.0 - probs[i];
    s -= p > 0.0 ? std::log(p) : std::log(std::numeric_limits<double>::min());
  }
  return s / static_cast<double>(probs.size());
}

/// Mean squared error.
inline double timing_loss(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) {
    throw ShapeError("timing_loss: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(target.size()) +
                     " targets");
  }
  if (pred.empty()) throw ValidationError("timing_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class GrlSchedule { kConstant, kWarmup };

/// Warm-up coefficient 2/(1+exp(-10p))-1 over training progress p in [0,1].
inline double grl_warmup(double p) { return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0; }

struct LossWeights {
  double cls = 1.0;
  double time = 1.0;
  double dom = 1.0;
};

struct AddaConfig {
  /// Adversarial epochs of stage two; negative means "same as epochs".
  long adversarial_epochs = -1;
  double lr_encoder = 1e-4;
  double lr_discriminator = 1e-4;
  double beta1 = 0.5;
  double divergence_loss = 0.05;
  int divergence_patience = 10;
};

struct TrainConfig {
  int batch_size = 16;
  int epochs = 100;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double split_ratio = 0.8;
  /// "frame" splits frames of all demonstrations; "demo" keeps demonstrations whole.
  std::string split_mode = "frame";
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  double grl_lambda = 1.0;
  GrlSchedule grl_schedule = GrlSchedule::kConstant;
  /// 0 disables early stopping.
  int early_stopping_patience = 0;
  double positive_class_weight = 1.0;
  AddaConfig adda;

  void validate() const {
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("train.split_ratio must be in (0,1)");
    if (split_mode != "frame" && split_mode != "demo") throw ConfigError("train.split_mode must be 'frame' or 'demo'");
    if (loss_weights.cls < 0 || loss_weights.time < 0 || loss_weights.dom < 0) {
      throw ConfigError("train.loss_weights must be >= 0");
    }
    if (grl_lambda < 0) throw ValidationError("train.grl_lambda must be >= 0");
    if (early_stopping_patience < 0) throw ConfigError("train.early_stopping patience must be >= 0");
    if (!(positive_class_weight > 0)) throw ConfigError("train.positive_class_weight must be positive");
    if (!(adda.lr_encoder > 0 && adda.lr_discriminator > 0)) throw ConfigError("train.adda learning rates must be positive");
  }

  long adversarial_epochs() const { return adda.adversarial_epochs < 0 ? epochs : adda.adversarial_epochs; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json grl = c.grl_schedule == GrlSchedule::kWarmup ? nlohmann::json("warmup") : nlohmann::json(c.grl_lambda);
  nlohmann::json early = c.early_stopping_patience > 0 ? nlohmann::json{{"patience", c.early_stopping_patience}}
                                                        : nlohmann::json("off");
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"split_ratio", c.split_ratio},
          {"split_mode", c.split_mode},
          {"seed", c.seed},
          {"loss_weights", {{"w_cls", c.loss_weights.cls}, {"w_time", c.loss_weights.time}, {"w_dom", c.loss_weights.dom}}},
          {"grl_lambda", grl},
          {"early_stopping", early},
          {"positive_class_weight", c.positive_class_weight},
          {"adda",
           {{"adversarial_epochs", c.adda.adversarial_epochs},
            {"lr_encoder", c.adda.lr_encoder},
            {"lr_discriminator", c.adda.lr_discriminator},
            {"beta1", c.adda.beta1},
            {"divergence_loss", c.adda.divergence_loss},
            {"divergence_patience", c.adda.divergence_patience}}}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"batch_size", "epochs", "learning_rate", "beta1", "beta2", "epsilon", "split_ratio", "split_mode",
                          "seed", "loss_weights", "grl_lambda", "early_stopping", "positive_class_weight", "adda"},
                         "train");
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.split_mode = j.value("split_mode", c.split_mode);
    c.seed = j.value("seed", c.seed);
    c.positive_class_weight = j.value("positive_class_weight", c.positive_class_weight);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      detail::reject_unknown(w, {"w_cls", "w_time", "w_dom"}, "train.loss_weights");
      c.loss_weights.cls = w.value("w_cls", c.loss_weights.cls);
      c.loss_weights.time = w.value("w_time", c.loss_weights.time);
      c.loss_weights.dom = w.value("w_dom", c.loss_weights.dom);
    }
    if (j.contains("grl_lambda")) {
      const auto& g = j.at("grl_lambda");
      if (g.is_string()) {
        if (g.get<std::string>() != "warmup") throw ConfigError("train.grl_lambda must be a number or \"warmup\"");
        c.grl_schedule = GrlSchedule::kWarmup;
        c.grl_lambda = 1.0;
      } else {
        c.grl_lambda = g.get<double>();
      }
    }
    if (j.contains("early_stopping")) {
      const auto& e = j.at("early_stopping");
      if (e.is_string()) {
        if (e.get<std::string>() != "off") throw ConfigError("train.early_stopping must be \"off\" or {\"patience\": n}");
      } else {
        detail::reject_unknown(e, {"patience"}, "train.early_stopping");
        c.early_stopping_patience = e.at("patience").get<int>();
      }
    }
    if (j.contains("adda")) {
      const auto& a = j.at("adda");
      detail::reject_unknown(a, {"adversarial_epochs", "lr_encoder", "lr_discriminator", "beta1", "divergence_loss",
                                 "divergence_patience"},
                             "train.adda");
      c.adda.adversarial_epochs = a.value("adversarial_epochs", c.adda.adversarial_epochs);
      c.adda.lr_encoder = a.value("lr_encoder", c.adda.lr_encoder);
      c.adda.lr_discriminator = a.value("lr_discriminator", c.adda.lr_discriminator);
      c.adda.beta1 = a.value("beta1", c.adda.beta1);
      c.adda.divergence_loss = a.value("divergence_loss", c.adda.divergence_loss);
      c.adda.divergence_patience = a.value("divergence_patience", c.adda.divergence_patience);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> components;

  double component(const std::string& name) const {
    for (const auto& [k, v] : components) {
      if (k == name) return v;
    }
    throw ValidationError("no loss component '" + name + "'");
  }
};

struct RunRecord {
  std::string stage = "supervised";
  std::string arch_id;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<EpochStats> curves;
  int best_epoch = 0;
  double train_time_per_image_s = 0;
  std::string checkpoint_path;
  std::vector<std::string> warnings;
  nlohmann::json parameters = nlohmann::json::object();
};

namespace detail {

inline nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& e : r.curves) {
    nlohmann::json comp = nlohmann::json::object();
    for (const auto& [k, v] : e.components) comp[k] = detail::num_or_null(v);
    curves.push_back({{"epoch", e.epoch},
                      {"train_loss", detail::num_or_null(e.train_loss)},
                      {"val_loss", detail::num_or_null(e.val_loss)},
                      {"train_acc", detail::num_or_null(e.train_acc)},
                      {"val_acc", detail::num_or_null(e.val_acc)},
                      {"components", comp}});
  }
  return {{"stage", r.stage},
          {"arch_id", r.arch_id},
          {"seed", r.seed},
          {"config", r.config},
          {"epochs_run", r.curves.size()},
          {"curves", curves},
          {"best_epoch", r.best_epoch},
          {"train_time_per_image_s", r.train_time_per_image_s},
          {"checkpoint", r.checkpoint_path},
          {"warnings", r.warnings},
          {"parameters", r.parameters}};
}

/// Loss curves as CSV: epoch,train_loss,val_loss,train_acc,val_acc,components...
inline void write_curves_csv(const RunRecord& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << "epoch,train_loss,val_loss,train_acc,val_acc";
  if (!r.curves.empty()) {
    for (const auto& [k, v] : r.curves.front().components) os << ',' << k;
  }
  os << '\n';
  for (const auto& e : r.curves) {
    os << e.epoch << ',' << detail::fmt_num(e.train_loss) << ',' << detail::fmt_num(e.val_loss) << ','
       << detail::fmt_num(e.train_acc) << ',' << detail::fmt_num(e.val_acc);
    for (const auto& [k, v] : e.components) os << ',' << detail::fmt_num(v);
    os << '\n';
  }
}

/// Progress messages from long runs; silent by default.
struct RunOptions {
  /// When set, the selected checkpoint is written to <out_dir>/checkpoint.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const std::string&)> log;
};

// ---------------------------------------------------------------------------
// Data handling
// ---------------------------------------------------------------------------

/// Per-frame or per-demonstration train/validation split of prepared demonstrations.
inline std::pair<std::vector<FrameRef>, std::vector<FrameRef>> split_refs(const std::vector<PreparedDemo>& demos,
                                                                          const TrainConfig& cfg) {
  std::vector<FrameRef> train, val;
  const std::uint64_t seed = derive_seed(cfg.seed, "split");
  if (cfg.split_mode == "demo") {
    auto [tr, va] = split_indices(demos.size(), cfg.split_ratio, seed);
    for (auto d : tr)
      for (std::size_t f = 0; f < demos[d].length(); ++f) train.push_back({d, f});
    for (auto d : va)
      for (std::size_t f = 0; f < demos[d].length(); ++f) val.push_back({d, f});
    return {train, val};
  }
  std::vector<FrameRef> all;
  for (std::size_t d = 0; d < demos.size(); ++d)
    for (std::size_t f = 0; f < demos[d].length(); ++f) all.push_back({d, f});
  auto [tr, va] = split_indices(all.size(), cfg.split_ratio, seed);
  for (auto i : tr) train.push_back(all[i]);
  for (auto i : va) val.push_back(all[i]);
  return {train, val};
}

namespace detail {

template <class T>
struct SeqBatch {
  Tensor<T> images;                  // unique frames
  std::vector<std::size_t> gather;   // group-major window rows -> unique frame row
  std::vector<std::uint8_t> pad;
  std::vector<int> labels;
  std::size_t groups = 0;
  std::size_t len = 0;
};

template <class T>
SeqBatch<T> build_seq_batch(const std::vector<PreparedDemo>& demos, const std::vector<FrameRef>& refs, std::size_t len) {
  SeqBatch<T> b;
  b.groups = refs.size();
  b.len = len;
  std::map<FrameRef, std::size_t> unique;
  std::vector<FrameRef> frames;
  for (const auto& r : refs) {
    const FrameWindow w = window_ending_at(demos[r.demo].labels, r.frame, len);
    for (std::size_t p = 0; p < len; ++p) {
      const FrameRef f{r.demo, w.frame_index[p]};
      auto it = unique.find(f);
      if (it == unique.end()) {
        it = unique.emplace(f, frames.size()).first;
        frames.push_back(f);
      }
      b.gather.push_back(it->second);
      b.pad.push_back(w.pad_mask[p]);
      b.labels.push_back(w.labels[p]);
    }
  }
  b.images = gather_images<T>(demos, frames);
  return b;
}

template <class T>
struct StepOut {
  Var<T> total;
  std::vector<std::pair<std::string, double>> components;
  std::vector<double> logits;  // one per sample, for accuracy
  std::vector<int> labels;
  std::size_t images = 0;
};

template <class T>
std::vector<T> class_weights(const std::vector<int>& labels, double pos_weight) {
  if (pos_weight == 1.0) return {};
  std::vector<T> w;
  for (int l : labels) w.push_back(static_cast<T>(l ? pos_weight : 1.0));
  return w;
}

template <class T>
std::vector<T> as_targets(const std::vector<int>& labels) {
  std::vector<T> t;
  for (int l : labels) t.push_back(static_cast<T>(l));
  return t;
}

/// Forward pass of the classification objective on a source batch.
template <class T>
struct ClsForward {
  Var<T> loss;
  Var<T> feats;  // per-frame features (per-frame architectures only)
  std::vector<double> logits;
  std::vector<int> labels;
  std::size_t images = 0;
};

template <class T>
ClsForward<T> classification_forward(Tape<T>& tape, const ModelHandle<T>& m, const std::vector<PreparedDemo>& demos,
                                     const std::vector<FrameRef>& refs, const TrainConfig& cfg) {
  ClsForward<T> out;
  if (m.is_sequence()) {
    const auto b = build_seq_batch<T>(demos, refs, m.config.seq.window);
    out.images = b.images.dim(0);
    Var<T> feats = m.features(tape, tape.constant(b.images));
    Var<T> windows = ops::gather_rows(feats, b.gather);
    Var<T> z = m.sequence_logits(tape, windows, b.groups, b.len, b.pad, DecodeMode::kTeacherForcing, b.labels);
    std::vector<T> w(b.labels.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = b.pad[i] ? T(0) : static_cast<T>(b.labels[i] && cfg.positive_class_weight != 1.0 ? cfg.positive_class_weight : 1.0);
    }
    out.loss = ops::bce_with_logits(z, as_targets<T>(b.labels), w);
    for (std::size_t g = 0; g < b.groups; ++g) {
      out.logits.push_back(static_cast<double>(z.value()[g * b.len + b.len - 1]));
      out.labels.push_back(b.labels[g * b.len + b.len - 1]);
    }
    return out;
  }
  std::vector<int> labels;
  for (const auto& r : refs) labels.push_back(demos[r.demo].labels[r.frame]);
  out.images = refs.size();
  out.feats = m.features(tape, tape.constant(gather_images<T>(demos, refs)), false);
  Var<T> z = m.class_logits(tape, out.feats);
  out.loss = ops::bce_with_logits(z, as_targets<T>(labels), class_weights<T>(labels, cfg.positive_class_weight));
  for (T v : z.value().values()) out.logits.push_back(static_cast<double>(v));
  out.labels = std::move(labels);
  return out;
}

/// Validation loss (BCE on per-frame logits) and accuracy at threshold 0.5.
template <class T>
std::pair<double, double> evaluate_refs(const ModelHandle<T>& m, const std::vector<PreparedDemo>& demos,
                                        const std::vector<FrameRef>& refs) {
  if (refs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const auto z = logits_for_refs(m, demos, refs);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double y = demos[refs[i].demo].labels[refs[i].frame];
    loss += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
    correct += ((z[i] >= 0.0 ? 1 : 0) == static_cast<int>(y)) ? 1 : 0;
  }
  return {loss / static_cast<double>(refs.size()), static_cast<double>(correct) / static_cast<double>(refs.size())};
}

inline void shuffle_in_place(std::vector<FrameRef>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Endless seeded sampler over target frames: a fresh permutation per pass.
class TargetSampler {
 public:
  TargetSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (pos_ >= order_.size()) refill();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng_() % i)]);
    pos_ = 0;
  }

  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <class T>
using StepFn = std::function<StepOut<T>(Tape<T>&, const std::vector<FrameRef>&, long global_step, long total_steps)>;

inline void log_line(const RunOptions& opt, const std::string& s) {
  if (opt.log) opt.log(s);
}

inline std::string epoch_summary(const std::string& stage, const EpochStats& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "[%s] epoch %d train_loss %.5f val_loss %.5f train_acc %.4f val_acc %.4f", stage.c_str(),
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc);
  return buf;
}

/// Shared epoch loop: shuffled source batches, one optimiser step per batch, validation
/// after every epoch, best-validation selection (accuracy, then loss, later epochs win ties).
template <class T>
RunRecord fit(ModelHandle<T>& m, const std::vector<PreparedDemo>& demos, const TrainConfig& cfg, const RunOptions& opt,
              const std::string& stage, const StepFn<T>& step) {
  cfg.validate();
  if (demos.empty()) throw InsufficientDataError("training needs at least one demonstration");
  auto [train, val] = split_refs(demos, cfg);
  if (train.empty()) throw InsufficientDataError("training split is empty");

  RunRecord rec;
  rec.stage = stage;
  rec.arch_id = to_string(m.arch());
  rec.seed = cfg.seed;
  rec.config = {{"train", to_json(cfg)}, {"model", to_json(m.config)}};
  rec.parameters = m.parameter_report();

  std::vector<Parameter<T>*> trainable;
  for (auto* p : m.params().all()) {
    if (!p->frozen) trainable.push_back(p);
  }
  Adam<T> adam(trainable, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long batches = static_cast<long>((train.size() + bs - 1) / bs);
  const long total_steps = batches * cfg.epochs;

  StateDict<T> best = state_dict(m.params());
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  double train_seconds = 0.0;
  std::size_t train_images = 0;
  long global = 0;
  m.mode = Mode::kTrain;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<FrameRef> order = train;
    shuffle_in_place(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_seen = 0, correct = 0;
    std::vector<std::pair<std::string, double>> comp_sum;
    for (long b = 0; b < batches; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * bs, hi = std::min(order.size(), lo + bs);
      const std::vector<FrameRef> refs(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
      const auto t0 = std::chrono::steady_clock::now();
      adam.zero_grad();
      Tape<T> tape(true);
      StepOut<T> out = step(tape, refs, global, total_steps);
      const double loss = static_cast<double>(out.total.value()[0]);
      if (!std::isfinite(loss)) {
        m.mode = Mode::kInfer;
        throw NumericalError("non-finite training loss in " + stage, static_cast<std::size_t>(epoch), static_cast<std::size_t>(b));
      }
      tape.backward(out.total);
      adam.step();
      train_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      train_images += out.images;
      ++global;
      const double w = static_cast<double>(refs.size());
      loss_sum += loss * w;
      n_seen += refs.size();
      if (comp_sum.empty()) {
        for (const auto& [k, v] : out.components) comp_sum.push_back({k, 0.0});
      }
      for (std::size_t i = 0; i < out.components.size(); ++i) comp_sum[i].second += out.components[i].second * w;
      for (std::size_t i = 0; i < out.logits.size(); ++i) correct += ((out.logits[i] >= 0.0 ? 1 : 0) == out.labels[i]) ? 1 : 0;
    }
    EpochStats e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(n_seen);
    e.train_acc = static_cast<double>(correct) / static_cast<double>(n_seen);
    for (auto& [k, v] : comp_sum) e.components.push_back({k, v / static_cast<double>(n_seen)});
    m.mode = Mode::kInfer;
    std::tie(e.val_loss, e.val_acc) = evaluate_refs(m, demos, val);
    m.mode = Mode::kTrain;
    rec.curves.push_back(e);
    log_line(opt, epoch_summary(stage, e));

    const double sel_acc = val.empty() ? 0.0 : e.val_acc, sel_loss = val.empty() ? e.train_loss : e.val_loss;
    if (sel_acc > best_acc || (sel_acc == best_acc && sel_loss <= best_loss)) {
      best_acc = sel_acc;
      best_loss = sel_loss;
      best = state_dict(m.params());
      rec.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.early_stopping_patience > 0 && ++since_best >= cfg.early_stopping_patience) {
      log_line(opt, "[" + stage + "] early stop at epoch " + std::to_string(epoch));
      break;
    }
  }
  m.mode = Mode::kInfer;
  load_state(m.params(), best);
  rec.train_time_per_image_s = train_images ? train_seconds / static_cast<double>(train_images) : 0.0;
  if (opt.out_dir) {
    const auto dir = *opt.out_dir / "checkpoint";
    save_checkpoint(m, dir);
    rec.checkpoint_path = dir.string();
  }
  return rec;
}

template <class T>
void require_classifier(const ModelHandle<T>& m) {
  m.require_head(HeadKind::kClassification);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training regimes
// ---------------------------------------------------------------------------

/// Plain supervised training on the source demonstrations.
template <class T>
RunRecord train_supervised(ModelHandle<T>& m, const std::vector<PreparedDemo>& source, const TrainConfig& cfg,
                           const RunOptions& opt = {}) {
  detail::require_classifier(m);
  const T w_cls = static_cast<T>(cfg.loss_weights.cls);
  return detail::fit<T>(m, source, cfg, opt, "supervised",
                        [&](Tape<T>& tape, const std::vector<FrameRef>& refs, long, long) {
                          auto f = detail::classification_forward(tape, m, source, refs, cfg);
                          detail::StepOut<T> out;
                          out.total = ops::weighted_sum<T>({f.loss}, {w_cls});
                          out.components = {{"cls", static_cast<double>(f.loss.value()[0])}};
                          out.logits = std::move(f.logits);
                          out.labels = std::move(f.labels);
                          out.images = f.images;
                          return out;
                        });
}

/// Joint classification and completion-proportion regression.
template <class T>
RunRecord train_multitask(ModelHandle<T>& m, const std::vector<PreparedDemo>& source, const TrainConfig& cfg,
                          const RunOptions& opt = {}) {
  detail::require_classifier(m);
  m.require_head(HeadKind::kTiming);
  const T w_cls = static_cast<T>(cfg.loss_weights.cls), w_time = static_cast<T>(cfg.loss_weights.time);
  return detail::fit<T>(m, source, cfg, opt, "multitask",
                        [&](Tape<T>& tape, const std::vector<FrameRef>& refs, long, long) {
                          auto f = detail::classification_forward(tape, m, source, refs, cfg);
                          std::vector<T> target;
                          for (const auto& r : refs) target.push_back(static_cast<T>(source[r.demo].timing[r.frame]));
                          Var<T> time = ops::mse(ops::sigmoid(m.timing_logits(tape, f.feats)), target);
                          detail::StepOut<T> out;
                          out.total = ops::weighted_sum<T>({f.loss, time}, {w_cls, w_time});
                          out.components = {{"cls", static_cast<double>(f.loss.value()[0])},
                                            {"time", static_cast<double>(time.value()[0])}};
                          out.logits = std::move(f.logits);
                          out.labels = std::move(f.labels);
                          out.images = f.images;
                          return out;
                        });
}

/// Joint adversarial training: source classification plus a domain loss whose gradient
/// is reversed before it reaches the backbone.
template <class T>
RunRecord train_dann(ModelHandle<T>& m, const std::vector<PreparedDemo>& source, const TargetFrames& target,
                     const TrainConfig& cfg, const RunOptions& opt = {}) {
  if (m.arch() != ArchId::kDann) throw CapabilityError("train_dann needs a DANN model, got " + to_string(m.arch()));
  if (target.empty()) {
    throw InsufficientDataError("domain-adversarial training needs unlabeled target-domain frames; supply a target split");
  }
  detail::TargetSampler sampler(target.size(), derive_seed(cfg.seed, "target"));
  const T w_cls = static_cast<T>(cfg.loss_weights.cls), w_dom = static_cast<T>(cfg.loss_weights.dom);
  return detail::fit<T>(
      m, source, cfg, opt, "dann", [&](Tape<T>& tape, const std::vector<FrameRef>& refs, long step, long total) {
        const double p = total > 0 ? static_cast<double>(step) / static_cast<double>(total) : 0.0;
        m.grl_lambda = static_cast<T>(cfg.grl_schedule == GrlSchedule::kWarmup ? cfg.grl_lambda * grl_warmup(p) : cfg.grl_lambda);
        auto f = detail::classification_forward(tape, m, source, refs, cfg);
        const auto idx = sampler.next(refs.size());
        Var<T> ft = m.features(tape, tape.constant(gather_images<T>(target, idx)), false);
        Var<T> d = ops::concat_rows<T>({m.domain_logits(tape, f.feats), m.domain_logits(tape, ft)});
        std::vector<T> dom_y(refs.size() + idx.size(), T(0));
        std::fill(dom_y.begin() + static_cast<long>(refs.size()), dom_y.end(), T(1));
        Var<T> dom = ops::bce_with_logits(d, dom_y);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < dom_y.size(); ++i) correct += ((d.value()[i] >= T(0)) == (dom_y[i] > T(0.5))) ? 1 : 0;
        detail::StepOut<T> out;
        out.total = ops::weighted_sum<T>({f.loss, dom}, {w_cls, w_dom});
        out.components = {{"cls", static_cast<double>(f.loss.value()[0])},
                          {"dom", static_cast<double>(dom.value()[0])},
                          {"dom_acc", static_cast<double>(correct) / static_cast<double>(dom_y.size())},
                          {"grl_lambda", static_cast<double>(m.grl_lambda)}};
        out.logits = std::move(f.logits);
        out.labels = std::move(f.labels);
        out.images = f.images + idx.size();
        return out;
      });
}

/// Stage two of adversarial discriminative adaptation: the target encoder (initialised
/// from the source encoder) learns to fool the domain discriminator while the source
/// encoder and every other head stay frozen.
template <class T>
RunRecord adapt_target_encoder(ModelHandle<T>& m, const std::vector<PreparedDemo>& source, const TargetFrames& target,
                               const TrainConfig& cfg, const RunOptions& opt = {}) {
  if (!is_adda_arch(m.arch())) throw CapabilityError("adversarial adaptation needs ADDA or T_FCN_ADDA, got " + to_string(m.arch()));
  if (target.empty()) {
    throw InsufficientDataError("adversarial adaptation needs unlabeled target-domain frames; supply a target split");
  }
  cfg.validate();
  auto [train, val] = split_refs(source, cfg);
  RunRecord rec;
  rec.stage = "adda_adapt";
  rec.arch_id = to_string(m.arch());
  rec.seed = cfg.seed;
  rec.config = {{"train", to_json(cfg)}, {"model", to_json(m.config)}};
  rec.parameters = m.parameter_report();

  m.reset_target_encoder();
  const auto enc_params = m.target_backbone->parameters();
  const auto disc_params = m.domain_head->parameters();
  std::map<Parameter<T>*, bool> saved;
  for (auto* p : m.params().all()) saved[p] = p->frozen;
  auto set_frozen = [&](const std::vector<Parameter<T>*>& ps, bool f) {
    for (auto* p : ps) p->frozen = f;
  };
  for (auto* p : m.params().all()) p->frozen = true;

  Adam<T> enc_opt(enc_params, {cfg.adda.lr_encoder, cfg.adda.beta1, cfg.beta2, cfg.epsilon});
  Adam<T> disc_opt(disc_params, {cfg.adda.lr_discriminator, cfg.adda.beta1, cfg.beta2, cfg.epsilon});
  Rng shuffle_rng(derive_seed(cfg.seed, "adapt_shuffle"));
  detail::TargetSampler sampler(target.size(), derive_seed(cfg.seed, "adapt_target"));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const bool with_time = m.has_head(HeadKind::kTiming) && cfg.loss_weights.time > 0;
  const T w_time = static_cast<T>(cfg.loss_weights.time);
  int low_streak = 0;
  bool warned = false;
  double seconds = 0.0;
  std::size_t images = 0;

  const long epochs = cfg.adversarial_epochs();
  for (long epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<FrameRef> order = train;
    detail::shuffle_in_place(order, shuffle_rng);
    double d_loss_sum = 0, e_loss_sum = 0, t_loss_sum = 0;
    std::size_t d_correct = 0, d_total = 0, steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::vector<FrameRef> refs(order.begin() + static_cast<long>(lo),
                                       order.begin() + static_cast<long>(std::min(order.size(), lo + bs)));
      const auto idx = sampler.next(refs.size());
      // Source features from the frozen source encoder.
      Tensor<T> fs;
      {
        Tape<T> t(false);
        fs = m.features(t, t.constant(gather_images<T>(source, refs)), false).value();
      }
      Tape<T> tape(true);
      set_frozen(enc_params, false);
      Var<T> ft = m.features(tape, tape.constant(gather_images<T>(target, idx)), true);
      set_frozen(enc_params, true);

      // Discriminator step on fixed features.
      {
        set_frozen(disc_params, false);
        disc_opt.zero_grad();
        Tape<T> td(true);
        Var<T> d = ops::concat_rows<T>({m.domain_logits(td, td.constant(fs)), m.domain_logits(td, td.constant(ft.value()))});
        std::vector<T> y(refs.size() + idx.size(), T(0));
        std::fill(y.begin() + static_cast<long>(refs.size()), y.end(), T(1));
        Var<T> dl = ops::bce_with_logits(d, y);
        if (!std::isfinite(static_cast<double>(dl.value()[0]))) {
          throw NumericalError("non-finite discriminator loss", static_cast<std::size_t>(epoch), steps);
        }
        td.backward(dl);
        disc_opt.step();
        set_frozen(disc_params, true);
        d_loss_sum += static_cast<double>(dl.value()[0]);
        for (std::size_t i = 0; i < y.size(); ++i) d_correct += ((d.value()[i] >= T(0)) == (y[i] > T(0.5))) ? 1 : 0;
        d_total += y.size();
      }
      // Target-encoder step with inverted domain labels.
      enc_opt.zero_grad();
      Var<T> adv = ops::bce_with_logits(m.domain_logits(tape, ft), std::vector<T>(idx.size(), T(0)));
      Var<T> loss = adv;
      if (with_time) {
        std::vector<T> prog;
        for (auto i : idx) prog.push_back(static_cast<T>(target.progress(i)));
        Var<T> tl = ops::mse(ops::sigmoid(m.timing_logits(tape, ft)), prog);
        t_loss_sum += static_cast<double>(tl.value()[0]);
        loss = ops::weighted_sum<T>({adv, tl}, {T(1), w_time});
      }
      if (!std::isfinite(static_cast<double>(loss.value()[0]))) {
        throw NumericalError("non-finite target-encoder loss", static_cast<std::size_t>(epoch), steps);
      }
      tape.backward(loss);
      set_frozen(enc_params, false);
      enc_opt.step();
      set_frozen(enc_params, true);
      e_loss_sum += static_cast<double>(adv.value()[0]);
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      images += refs.size() + idx.size();
      ++steps;
    }
    EpochStats e;
    e.epoch = static_cast<int>(epoch);
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    e.train_loss = (e_loss_sum + (with_time ? static_cast<double>(w_time) * t_loss_sum : 0.0)) / n;
    e.components = {{"disc_loss", d_loss_sum / n},
                    {"disc_acc", d_total ? static_cast<double>(d_correct) / static_cast<double>(d_total) : 0.0},
                    {"enc_loss", e_loss_sum / n}};
    if (with_time) e.components.push_back({"time", t_loss_sum / n});
    m.use_target_encoder = true;
    std::tie(e.val_loss, e.val_acc) = detail::evaluate_refs(m, source, val);
    rec.curves.push_back(e);
    detail::log_line(opt, detail::epoch_summary(rec.stage, e));
    low_streak = e.component("disc_loss") < cfg.adda.divergence_loss ? low_streak + 1 : 0;
    if (!warned && low_streak >= cfg.adda.divergence_patience) {
      warned = true;
      rec.warnings.push_back("discriminator loss below " + std::to_string(cfg.adda.divergence_loss) + " for " +
                             std::to_string(cfg.adda.divergence_patience) + " consecutive epochs (ending at epoch " +
                             std::to_string(epoch) + "); adaptation may have diverged");
    }
  }
  for (auto& [p, f] : saved) p->frozen = f;
  m.use_target_encoder = true;
  rec.best_epoch = static_cast<int>(epochs);
  rec.train_time_per_image_s = images ? seconds / static_cast<double>(images) : 0.0;
  if (opt.out_dir) {
    const auto dir = *opt.out_dir / "checkpoint";
    save_checkpoint(m, dir);
    rec.checkpoint_path = dir.string();
  }
  return rec;
}

/// Two-stage adversarial discriminative adaptation. Stage one trains the source encoder
/// and classifier (plus the timing head for T_FCN_ADDA); stage two adapts a separate
/// target encoder. Returns (source record, adapted record).
template <class T>
std::pair<RunRecord, RunRecord> train_adda(ModelHandle<T>& m, const std::vector<PreparedDemo>& source,
                                           const TargetFrames& target, const TrainConfig& cfg, const RunOptions& opt = {}) {
  if (!is_adda_arch(m.arch())) throw CapabilityError("train_adda needs ADDA or T_FCN_ADDA, got " + to_string(m.arch()));
  if (target.empty()) {
    throw InsufficientDataError("adversarial adaptation needs unlabeled target-domain frames; supply a target split");
  }
  RunOptions stage1 = opt;
  if (opt.out_dir) stage1.out_dir = *opt.out_dir / "source";
  m.use_target_encoder = false;
  RunRecord src = m.has_head(HeadKind::kTiming) ? train_multitask(m, source, cfg, stage1) : train_supervised(m, source, cfg, stage1);
  src.stage = "adda_source";
  RunRecord adapted = adapt_target_encoder(m, source, target, cfg, opt);
  return {std::move(src), std::move(adapted)};
}

/// Outcome of the regime matching an architecture.
struct TrainResult {
  RunRecord primary;
  std::optional<RunRecord> adaptation;

  const RunRecord& last() const { return adaptation ? *adaptation : primary; }
};

/// Trains with the regime of the model's architecture. Target frames (labels stripped)
/// are used only by the adversarial regimes.
template <class T>
TrainResult train_model(ModelHandle<T>& m, const std::vector<PreparedDemo>& source, const TargetFrames& target,
                        const TrainConfig& cfg, const RunOptions& opt = {}) {
  TrainResult r;
  switch (m.arch()) {
    case ArchId::kTFcn: r.primary = train_multitask(m, source, cfg, opt); break;
    case ArchId::kDann: r.primary = train_dann(m, source, target, cfg, opt); break;
    case ArchId::kAdda:
    case ArchId::kTFcnAdda: {
      auto [a, b] = train_adda(m, source, target, cfg, opt);
      r.primary = std::move(a);
      r.adaptation = std::move(b);
      break;
    }
    default: r.primary = train_supervised(m, source, cfg, opt); break;
  }
  return r;
}

inline nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json j = to_json(r.primary);
  if (r.adaptation) j["adaptation"] = to_json(*r.adaptation);
  return j;
}

}  // namespace scl

#endif  // SCL_TRAINING_HPP
