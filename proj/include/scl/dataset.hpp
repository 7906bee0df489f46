#ifndef SCL_DATASET_HPP
#define SCL_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/core/tensor.hpp"
#include "scl/geometry.hpp"
#include "scl/image.hpp"

namespace scl {

enum class Domain { kSource = 0, kTarget = 1 };

inline std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw IngestionError("domain must be 'source' or 'target', got '" + s + "'");
}

struct Frame {
  RawImage pixels;
  std::size_t step_index = 0;
  /// Present only for generated frames.
  std::optional<FrameGeometry> geometry;
};

/// One recorded execution of a task: frames with monotone 0/1 labels.
struct Demonstration {
  std::string demo_id;
  std::string task_id;
  Domain domain = Domain::kSource;
  std::vector<Frame> frames;
  std::vector<int> labels;
  /// Index of the first success frame, or length() when success was never observed.
  std::size_t success_onset = 0;

  std::size_t length() const { return frames.size(); }
  std::size_t success_count() const { return length() - success_onset; }
};

struct TaskDataset {
  std::string task_id;
  std::vector<Demonstration> train_demos;
  std::vector<Demonstration> test_demos;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Labels `frames` with the success-onset rule: 0 before the onset, 1 from it onward.
inline Demonstration label_frames(std::vector<Frame> frames, std::size_t success_onset, std::string demo_id = "demo",
                                  std::string task_id = "task", Domain domain = Domain::kSource) {
  const std::size_t j = frames.size();
  if (j < 2) {
    throw ValidationError("demonstration '" + demo_id + "' has " + std::to_string(j) + " frames; at least 2 are required");
  }
  if (success_onset > j) {
    throw ValidationError("demonstration '" + demo_id + "': success_onset " + std::to_string(success_onset) +
                          " outside [0, " + std::to_string(j) + "]");
  }
  Demonstration d;
  d.demo_id = std::move(demo_id);
  d.task_id = std::move(task_id);
  d.domain = domain;
  d.success_onset = success_onset;
  d.labels.resize(j);
  for (std::size_t i = 0; i < j; ++i) {
    d.labels[i] = i >= success_onset ? 1 : 0;
    frames[i].step_index = i;
  }
  d.frames = std::move(frames);
  return d;
}

/// Task-completion proportion t / (j - 1) for every step of a demonstration of length j.
inline std::vector<double> timing_targets(std::size_t j) {
  if (j < 2) throw ValidationError("timing targets need a demonstration of at least 2 steps, got " + std::to_string(j));
  std::vector<double> out(j);
  const double denom = static_cast<double>(j - 1);
  for (std::size_t t = 0; t < j; ++t) out[t] = static_cast<double>(t) / denom;
  return out;
}

inline std::vector<double> timing_targets(const Demonstration& demo) { return timing_targets(demo.length()); }

/// Resizes to 160x160 (bilinear) and scales 8-bit values into [0, 1].
inline FloatImage preprocess_frame(const RawImage& raw) {
  if (raw.channels != 3) throw FormatError("expected a 3-channel image, got " + std::to_string(raw.channels) + " channels");
  if (raw.height == 0 || raw.width == 0) throw FormatError("empty image");
  FloatImage out = resize_bilinear(raw, kModelInputSize, kModelInputSize);
  for (auto& v : out.pixels) v /= 255.0f;
  return out;
}

/// Already-scaled input: only the resize applies, so a preprocessed image maps to itself.
inline FloatImage preprocess_frame(const FloatImage& img) {
  if (img.channels != 3) throw FormatError("expected a 3-channel image, got " + std::to_string(img.channels) + " channels");
  if (img.height == 0 || img.width == 0) throw FormatError("empty image");
  return resize_bilinear(img, kModelInputSize, kModelInputSize);
}

inline FloatImage preprocess_frame(const Frame& f) { return preprocess_frame(f.pixels); }

/// Copies an HWC image into a CHW slot of a batch tensor.
template <class T>
void write_chw(const FloatImage& img, T* dst) {
  const std::size_t hw = img.height * img.width;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) dst[c * hw + y * img.width + x] = static_cast<T>(img.at(y, x, c));
}

/// Model-ready batch. images is [N, 3, 160, 160].
struct FrameBatch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<double> timing_targets;
  std::vector<int> domain_tags;

  std::size_t size() const { return labels.size(); }
};

inline FrameBatch make_frame_batch(const std::vector<const FloatImage*>& images, std::vector<int> labels,
                                   std::vector<double> timing, std::vector<int> domains) {
  const std::size_t n = images.size();
  if (labels.size() != n || timing.size() != n || domains.size() != n) {
    throw ShapeError("frame batch fields must have equal lengths");
  }
  for (double t : timing) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("timing target outside [0,1]");
  }
  FrameBatch b;
  if (n) {
    const FloatImage& first = *images.front();
    b.images = Tensor<float>({n, 3, first.height, first.width});
    const std::size_t stride = 3 * first.height * first.width;
    for (std::size_t i = 0; i < n; ++i) {
      if (images[i]->height != first.height || images[i]->width != first.width || images[i]->channels != 3) {
        throw ShapeError("frame batch images must share one 3-channel size");
      }
      write_chw(*images[i], b.images.data() + i * stride);
    }
  }
  b.labels = std::move(labels);
  b.timing_targets = std::move(timing);
  b.domain_tags = std::move(domains);
  return b;
}

/// Seeded shuffle of [0, n) split into round(ratio * n) training and the rest validation indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double ratio,
                                                                                   std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must be in (0,1), got " + std::to_string(ratio));
  if (n < 2) throw InsufficientDataError("need at least 2 items to split, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on the library's shuffle.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(idx[i], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> val(idx.begin() + static_cast<long>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

/// Reference to one frame of one demonstration.
struct FrameRef {
  std::size_t demo = 0;
  std::size_t frame = 0;

  friend bool operator==(const FrameRef&, const FrameRef&) = default;
  friend auto operator<=>(const FrameRef&, const FrameRef&) = default;
};

inline std::vector<FrameRef> all_frames(const std::vector<Demonstration>& demos) {
  std::vector<FrameRef> out;
  for (std::size_t d = 0; d < demos.size(); ++d)
    for (std::size_t f = 0; f < demos[d].length(); ++f) out.push_back({d, f});
  return out;
}

/// Per-frame 80/20-style split over the frames of `demos`.
inline std::pair<std::vector<FrameRef>, std::vector<FrameRef>> split_train_val(const std::vector<Demonstration>& demos,
                                                                               double ratio, std::uint64_t seed) {
  const auto frames = all_frames(demos);
  auto [tr, va] = split_indices(frames.size(), ratio, seed);
  std::vector<FrameRef> train, val;
  for (auto i : tr) train.push_back(frames[i]);
  for (auto i : va) val.push_back(frames[i]);
  return {std::move(train), std::move(val)};
}

/// Whole-demonstration split: every frame of a demonstration lands on the same side.
inline std::pair<std::vector<FrameRef>, std::vector<FrameRef>> split_train_val_by_demo(
    const std::vector<Demonstration>& demos, double ratio, std::uint64_t seed) {
  auto [tr, va] = split_indices(demos.size(), ratio, seed);
  std::vector<FrameRef> train, val;
  for (auto d : tr)
    for (std::size_t f = 0; f < demos[d].length(); ++f) train.push_back({d, f});
  for (auto d : va)
    for (std::size_t f = 0; f < demos[d].length(); ++f) val.push_back({d, f});
  return {std::move(train), std::move(val)};
}

/// A window of frame indices ending at `end_frame`. Positions before the demonstration's
/// start repeat frame 0 and are flagged in pad_mask.
struct FrameWindow {
  std::size_t end_frame = 0;
  std::vector<std::size_t> frame_index;
  std::vector<int> labels;
  std::vector<std::uint8_t> pad_mask;
};

inline FrameWindow window_ending_at(const std::vector<int>& labels, std::size_t end, std::size_t window) {
  FrameWindow w;
  w.end_frame = end;
  for (std::size_t p = 0; p < window; ++p) {
    const long src = static_cast<long>(end) - static_cast<long>(window - 1 - p);
    const std::size_t f = src < 0 ? 0 : static_cast<std::size_t>(src);
    w.frame_index.push_back(f);
    w.labels.push_back(labels[f]);
    w.pad_mask.push_back(src < 0 ? 1 : 0);
  }
  return w;
}

/// One window per frame: window k ends at frame k.
inline std::vector<FrameWindow> make_windows(const Demonstration& demo, long window) {
  if (window <= 0) throw ValidationError("window length must be positive, got " + std::to_string(window));
  std::vector<FrameWindow> out;
  for (std::size_t k = 0; k < demo.length(); ++k) {
    out.push_back(window_ending_at(demo.labels, k, static_cast<std::size_t>(window)));
  }
  return out;
}

/// FNV-1a over raw pixel bytes, used for frame-fidelity checks.
inline std::uint64_t frame_checksum(const RawImage& img) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(img.height);
  mix(img.width);
  mix(img.channels);
  for (auto b : img.pixels) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

struct ClassCounts {
  std::size_t non_success = 0;
  std::size_t success = 0;
};

inline ClassCounts class_counts(const std::vector<Demonstration>& demos) {
  ClassCounts c;
  for (const auto& d : demos) {
    c.non_success += d.success_onset;
    c.success += d.success_count();
  }
  return c;
}

}  // namespace scl

#endif  // SCL_DATASET_HPP
