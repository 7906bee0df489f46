#ifndef SCL_EVALUATION_HPP
#define SCL_EVALUATION_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/training.hpp"

namespace scl {

// ---------------------------------------------------------------------------
// Frame-level metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts at `threshold`; a probability equal to the threshold predicts success.
inline ConfusionCounts confusion(const std::vector<double>& probs, const std::vector<int>& labels, double threshold = 0.5) {
  if (probs.size() != labels.size()) {
    throw ShapeError("confusion: " + std::to_string(probs.size()) + " probabilities vs " + std::to_string(labels.size()) +
                     " labels");
  }
  if (probs.empty()) throw ValidationError("confusion: empty input");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("confusion: threshold must be in (0,1)");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

struct BasicMetrics {
  double acc = 0, precision = 0, recall = 0, f1 = 0, tpr = 0, tnr = 0;
};

/// Rates from counts. 0/0 resolves to 0 for precision, recall/TPR, TNR and F1.
inline BasicMetrics basic_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ValidationError("basic_metrics: no evaluated frames");
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  BasicMetrics m;
  m.acc = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.tpr = ratio(c.tp, c.tp + c.fn);
  m.recall = m.tpr;
  m.tnr = ratio(c.tn, c.tn + c.fp);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

/// Rank-based (Mann-Whitney) area under the ROC curve; tied scores count one half.
inline double auc(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ShapeError("auc: length mismatch");
  const std::size_t n = probs.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ValidationError("auc: undefined for single-class input");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  // Count (pos, neg) pairs with pos ranked above neg; ties contribute one half.
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, tie_pos = 0, tie_neg = 0;
    while (j < n && probs[idx[j]] == probs[idx[i]]) {
      (labels[idx[j]] ? tie_pos : tie_neg) += 1;
      ++j;
    }
    wins += static_cast<double>(tie_pos) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(tie_neg));
    neg_below += tie_neg;
    i = j;
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Pearson correlation coefficient.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least 2 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

enum class TimingMode { kTrain, kTest };

struct TimingResult {
  double seconds_per_image = 0;
  std::size_t frames = 0;
  std::size_t repetitions = 0;
  std::optional<std::string> warning;
};

/// Wall-clock seconds per image averaged over `repetitions` passes after one warm-up
/// pass. Train mode runs forward and backward of the classification loss without updating.
template <class T>
TimingResult time_per_image(const ModelHandle<T>& m, const Tensor<float>& images, TimingMode mode,
                            std::size_t repetitions = 3, std::size_t chunk = 16) {
  if (repetitions < 3) repetitions = 3;
  // Concurrent measurements would distort each other.
  static std::mutex exclusive;
  std::lock_guard<std::mutex> lock(exclusive);
  TimingResult r;
  r.frames = images.dim(0);
  r.repetitions = repetitions;
  if (r.frames < 100) r.warning = "only " + std::to_string(r.frames) + " frames timed; averages may be unstable";
  auto pass = [&]() {
    for (std::size_t b = 0; b < r.frames; b += chunk) {
      const std::size_t e = std::min(r.frames, b + chunk);
      Tape<T> tape(mode == TimingMode::kTrain);
      Var<T> x = tape.constant(detail::image_rows<T>(images, b, e));
      if (m.is_sequence()) {
        const Tensor<T> f = infer_features(m, detail::image_rows<float>(images, b, e));
        (void)sequence_frame_logits(m, f);
        if (mode == TimingMode::kTest) continue;
      }
      Var<T> z = m.is_sequence() ? m.features(tape, x) : m.class_logits(tape, m.features(tape, x));
      if (mode == TimingMode::kTrain) {
        auto& mm = const_cast<ModelHandle<T>&>(m);
        Var<T> s = ops::bce_with_logits(ops::reshape(z, {z.value().size()}), std::vector<T>(z.value().size(), T(0)));
        tape.backward(s);
        mm.params().zero_grad();
      }
    }
  };
  pass();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < repetitions; ++i) pass();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.seconds_per_image = secs / static_cast<double>(repetitions * std::max<std::size_t>(r.frames, 1));
  return r;
}

// ---------------------------------------------------------------------------
// Traces and reports
// ---------------------------------------------------------------------------

struct ProbabilityTrace {
  std::string demo_id;
  std::vector<double> probs;
  std::vector<int> labels;
  std::optional<std::vector<double>> timing;

  std::size_t length() const { return probs.size(); }
};

template <class T>
ProbabilityTrace probability_trace(const ModelHandle<T>& m, const PreparedDemo& d) {
  ProbabilityTrace t;
  t.demo_id = d.demo_id;
  for (double z : demo_logits(m, d)) t.probs.push_back(logit_to_prob(z));
  t.labels = d.labels;
  t.timing = demo_timing(m, d);
  return t;
}

template <class T>
ProbabilityTrace probability_trace(const ModelHandle<T>& m, const Demonstration& d) {
  return probability_trace(m, prepare_demo(d));
}

/// CSV with columns frame,prob,label[,timing_pred].
inline void write_trace_csv(const ProbabilityTrace& t, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << "frame,prob,label" << (t.timing ? ",timing_pred" : "") << '\n';
  for (std::size_t i = 0; i < t.length(); ++i) {
    os << i << ',' << detail::fmt_num(t.probs[i]) << ',' << t.labels[i];
    if (t.timing) os << ',' << detail::fmt_num((*t.timing)[i]);
    os << '\n';
  }
}

struct TaskMetrics {
  double acc = 0, precision = 0, recall = 0, f1 = 0, tpr = 0, tnr = 0;
  /// Absent when the evaluated frames hold a single class.
  std::optional<double> auc;
  double test_time_per_image_s = 0;
  ConfusionCounts counts;
};

struct MetricsReport {
  std::string arch_id;
  std::map<std::string, TaskMetrics> per_task;
  TaskMetrics macro;
  double train_time_per_image_s = 0;
  std::vector<std::string> warnings;
};

/// Metrics of one task from its traces.
inline TaskMetrics task_metrics(const std::vector<ProbabilityTrace>& traces, double threshold = 0.5) {
  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto& t : traces) {
    probs.insert(probs.end(), t.probs.begin(), t.probs.end());
    labels.insert(labels.end(), t.labels.begin(), t.labels.end());
  }
  TaskMetrics tm;
  tm.counts = confusion(probs, labels, threshold);
  const BasicMetrics b = basic_metrics(tm.counts);
  tm.acc = b.acc;
  tm.precision = b.precision;
  tm.recall = b.recall;
  tm.f1 = b.f1;
  tm.tpr = b.tpr;
  tm.tnr = b.tnr;
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos > 0 && pos < labels.size()) tm.auc = auc(probs, labels);
  return tm;
}

/// Unweighted mean over tasks of every per-task field.
inline TaskMetrics macro_average(const std::map<std::string, TaskMetrics>& per_task) {
  TaskMetrics m;
  if (per_task.empty()) return m;
  const double n = static_cast<double>(per_task.size());
  double auc_sum = 0;
  std::size_t auc_n = 0;
  for (const auto& [k, t] : per_task) {
    m.acc += t.acc;
    m.precision += t.precision;
    m.recall += t.recall;
    m.f1 += t.f1;
    m.tpr += t.tpr;
    m.tnr += t.tnr;
    m.test_time_per_image_s += t.test_time_per_image_s;
    m.counts += t.counts;
    if (t.auc) {
      auc_sum += *t.auc;
      ++auc_n;
    }
  }
  m.acc /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  m.tpr /= n;
  m.tnr /= n;
  m.test_time_per_image_s /= n;
  if (auc_n) m.auc = auc_sum / static_cast<double>(auc_n);
  return m;
}

inline nlohmann::json to_json(const TaskMetrics& t) {
  return {{"acc", t.acc},
          {"precision", t.precision},
          {"recall", t.recall},
          {"f1", t.f1},
          {"auc", t.auc ? nlohmann::json(*t.auc) : nlohmann::json(nullptr)},
          {"tpr", t.tpr},
          {"tnr", t.tnr},
          {"test_time_per_image_s", t.test_time_per_image_s},
          {"confusion", {{"tp", t.counts.tp}, {"tn", t.counts.tn}, {"fp", t.counts.fp}, {"fn", t.counts.fn}}}};
}

inline constexpr int kMetricsSchemaVersion = 1;

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [k, t] : r.per_task) per[k] = to_json(t);
  return {{"schema_version", kMetricsSchemaVersion},
          {"arch_id", r.arch_id},
          {"per_task", per},
          {"macro", to_json(r.macro)},
          {"train_time_per_image_s", r.train_time_per_image_s},
          {"warnings", r.warnings}};
}

/// Checks a metrics document against the published schema (docs/metrics.schema.json).
/// Returns the list of violations; empty means valid.
inline std::vector<std::string> validate_metrics_json(const nlohmann::json& j) {
  std::vector<std::string> errs;
  auto need = [&](const nlohmann::json& o, const std::string& key, const std::string& where) -> const nlohmann::json* {
    if (!o.is_object() || !o.contains(key)) {
      errs.push_back(where + ": missing '" + key + "'");
      return nullptr;
    }
    return &o.at(key);
  };
  auto rate = [&](const nlohmann::json& o, const std::string& key, const std::string& where, bool nullable) {
    const auto* v = need(o, key, where);
    if (!v) return;
    if (v->is_null() && nullable) return;
    if (!v->is_number() || v->get<double>() < 0.0 || v->get<double>() > 1.0) errs.push_back(where + "." + key + ": not a rate in [0,1]");
  };
  auto task = [&](const nlohmann::json& t, const std::string& where) {
    if (!t.is_object()) {
      errs.push_back(where + ": not an object");
      return;
    }
    static const std::vector<std::string> allowed{"acc", "precision", "recall", "f1", "auc", "tpr", "tnr",
                                                  "test_time_per_image_s", "confusion"};
    for (const auto& [k, v] : t.items()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) errs.push_back(where + ": unexpected key '" + k + "'");
    }
    for (const char* k : {"acc", "precision", "recall", "f1", "tpr", "tnr"}) rate(t, k, where, false);
    rate(t, "auc", where, true);
    if (const auto* v = need(t, "test_time_per_image_s", where); v && (!v->is_number() || v->get<double>() < 0)) {
      errs.push_back(where + ".test_time_per_image_s: not a non-negative number");
    }
    if (const auto* c = need(t, "confusion", where)) {
      for (const char* k : {"tp", "tn", "fp", "fn"}) {
        if (const auto* v = need(*c, k, where + ".confusion"); v && !v->is_number_unsigned()) {
          errs.push_back(where + ".confusion." + k + ": not a non-negative integer");
        }
      }
    }
  };
  if (!j.is_object()) return {"document: not an object"};
  static const std::vector<std::string> top{"schema_version", "arch_id", "per_task", "macro", "train_time_per_image_s",
                                            "warnings"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(top.begin(), top.end(), k) == top.end()) errs.push_back("document: unexpected key '" + k + "'");
  }
  if (const auto* v = need(j, "schema_version", "document"); v && (!v->is_number_integer() || v->get<int>() != kMetricsSchemaVersion)) {
    errs.push_back("document.schema_version: expected " + std::to_string(kMetricsSchemaVersion));
  }
  if (const auto* v = need(j, "arch_id", "document"); v && !v->is_string()) errs.push_back("document.arch_id: not a string");
  if (const auto* v = need(j, "per_task", "document")) {
    if (!v->is_object() || v->empty()) errs.push_back("document.per_task: must be a non-empty object");
    else
      for (const auto& [k, t] : v->items()) task(t, "per_task." + k);
  }
  if (const auto* v = need(j, "macro", "document")) task(*v, "macro");
  if (const auto* v = need(j, "train_time_per_image_s", "document"); v && (!v->is_number() || v->get<double>() < 0)) {
    errs.push_back("document.train_time_per_image_s: not a non-negative number");
  }
  if (const auto* v = need(j, "warnings", "document"); v && !v->is_array()) errs.push_back("document.warnings: not an array");
  return errs;
}

struct EvalOptions {
  double threshold = 0.5;
  bool measure_time = true;
  std::size_t timing_repetitions = 3;
};

struct TaskEvaluation {
  TaskMetrics metrics;
  std::vector<ProbabilityTrace> traces;
  std::optional<std::string> timing_warning;
};

/// Traces and metrics of a model on the test demonstrations of one task.
template <class T>
TaskEvaluation evaluate_task(const ModelHandle<T>& m, const std::vector<PreparedDemo>& test, const EvalOptions& opt = {}) {
  if (test.empty()) throw InsufficientDataError("evaluation needs at least one test demonstration");
  TaskEvaluation ev;
  for (const auto& d : test) ev.traces.push_back(probability_trace(m, d));
  ev.metrics = task_metrics(ev.traces, opt.threshold);
  if (opt.measure_time) {
    std::size_t n = 0;
    for (const auto& d : test) n += d.length();
    Tensor<float> all({n, 3, test.front().side, test.front().side});
    std::size_t off = 0;
    for (const auto& d : test) {
      std::copy(d.pixels.begin(), d.pixels.end(), all.data() + off);
      off += d.pixels.size();
    }
    const auto tr = time_per_image(m, all, TimingMode::kTest, opt.timing_repetitions);
    ev.metrics.test_time_per_image_s = tr.seconds_per_image;
    ev.timing_warning = tr.warning;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Demo-count ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string arch;
  std::size_t demos = 0;
  std::uint64_t seed = 0;
  double acc = 0, f1 = 0;
  std::optional<double> auc;
};

struct AblationSpec {
  ArchId arch = ArchId::kFcn;
  std::vector<std::size_t> counts{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  BackboneConfig backbone;
  HeadConfig heads;
  SeqConfig seq;
  TrainConfig train;
  std::size_t jobs = 1;
};

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Each task must be independent.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// For every (count, seed) trains on the first `count` source demonstrations of a
/// per-seed shuffled order and evaluates on the fixed test set.
inline std::vector<AblationRow> ablate_demo_count(const AblationSpec& spec, const std::vector<PreparedDemo>& train,
                                                  const std::vector<PreparedDemo>& test,
                                                  const std::function<void(const std::string&)>& log = {}) {
  if (spec.counts.empty() || spec.seeds.empty()) throw ValidationError("ablation needs at least one count and one seed");
  const std::size_t need = *std::max_element(spec.counts.begin(), spec.counts.end());
  if (need == 0) throw ValidationError("ablation counts must be positive");
  if (train.size() < need) {
    throw InsufficientDataError("ablation needs " + std::to_string(need) + " training demonstrations, dataset has " +
                                std::to_string(train.size()));
  }
  const TargetFrames target = TargetFrames::strip_labels(test);
  std::vector<AblationRow> rows(spec.counts.size() * spec.seeds.size());
  parallel_for(rows.size(), spec.jobs, [&](std::size_t i) {
    const std::size_t k = spec.counts[i / spec.seeds.size()];
    const std::uint64_t seed = spec.seeds[i % spec.seeds.size()];
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "ablation_order"));
    for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[static_cast<std::size_t>(rng() % j)]);
    std::vector<PreparedDemo> subset;
    for (std::size_t j = 0; j < k; ++j) subset.push_back(train[order[j]]);
    TrainConfig tc = spec.train;
    tc.seed = seed;
    auto m = build_model<float>(spec.arch, spec.backbone, spec.heads, seed, spec.seq);
    train_model(m, subset, target, tc);
    const auto ev = evaluate_task(m, test, {0.5, false});
    rows[i] = {to_string(spec.arch), k, seed, ev.metrics.acc, ev.metrics.f1, ev.metrics.auc};
    if (log) {
      log("ablation " + to_string(spec.arch) + " demos=" + std::to_string(k) + " seed=" + std::to_string(seed) +
          " acc=" + std::to_string(ev.metrics.acc));
    }
  });
  return rows;
}

/// CSV with columns arch,demos,seed,acc,f1,auc.
inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << "arch,demos,seed,acc,f1,auc\n";
  for (const auto& r : rows) {
    os << r.arch << ',' << r.demos << ',' << r.seed << ',' << detail::fmt_num(r.acc) << ',' << detail::fmt_num(r.f1) << ','
       << (r.auc ? detail::fmt_num(*r.auc) : "") << '\n';
  }
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace scl

#endif  // SCL_EVALUATION_HPP
