#ifndef SCL_PREPARED_HPP
#define SCL_PREPARED_HPP

#include <string>
#include <vector>

#include "scl/dataset.hpp"

namespace scl {

/// A demonstration with every frame preprocessed into CHW floats, ready for batching.
struct PreparedDemo {
  std::string demo_id;
  Domain domain = Domain::kSource;
  std::vector<int> labels;
  std::vector<double> timing;
  std::vector<float> pixels;  // frames x 3 x 160 x 160
  std::size_t side = kModelInputSize;

  std::size_t length() const { return labels.size(); }
  std::size_t frame_size() const { return 3 * side * side; }
  const float* frame(std::size_t i) const { return pixels.data() + i * frame_size(); }
};

inline PreparedDemo prepare_demo(const Demonstration& d) {
  PreparedDemo p;
  p.demo_id = d.demo_id;
  p.domain = d.domain;
  p.labels = d.labels;
  p.timing = timing_targets(d);
  p.pixels.resize(d.length() * p.frame_size());
  for (std::size_t i = 0; i < d.length(); ++i) write_chw(preprocess_frame(d.frames[i]), p.pixels.data() + i * p.frame_size());
  return p;
}

inline std::vector<PreparedDemo> prepare_demos(const std::vector<Demonstration>& demos) {
  std::vector<PreparedDemo> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back(prepare_demo(d));
  return out;
}

/// Target-domain frames with labels removed. Only the within-demonstration progress
/// t/(j-1) is kept, which is known without any success annotation. Frames are viewed,
/// not copied: the demonstrations must outlive this object.
class TargetFrames {
 public:
  TargetFrames() = default;

  static TargetFrames strip_labels(const std::vector<PreparedDemo>& demos) {
    TargetFrames t;
    for (const auto& d : demos) {
      for (std::size_t i = 0; i < d.length(); ++i) {
        t.frames_.push_back(d.frame(i));
        t.progress_.push_back(d.timing[i]);
      }
      t.frame_size_ = d.frame_size();
      t.side_ = d.side;
    }
    return t;
  }
  static TargetFrames strip_labels(std::vector<PreparedDemo>&&) = delete;

  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  const float* frame(std::size_t i) const { return frames_[i]; }
  double progress(std::size_t i) const { return progress_[i]; }
  std::size_t frame_size() const { return frame_size_; }
  std::size_t side() const { return side_; }

 private:
  std::vector<const float*> frames_;
  std::vector<double> progress_;
  std::size_t frame_size_ = 0;
  std::size_t side_ = kModelInputSize;
};

/// Stacks the referenced frames into an [N, 3, S, S] tensor.
template <class T>
Tensor<T> gather_images(const std::vector<PreparedDemo>& demos, const std::vector<FrameRef>& refs) {
  if (demos.empty()) return {};
  const std::size_t side = demos.front().side, fs = demos.front().frame_size();
  Tensor<T> out({refs.size(), 3, side, side});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const float* src = demos[refs[i].demo].frame(refs[i].frame);
    std::copy(src, src + fs, out.data() + i * fs);
  }
  return out;
}

template <class T>
Tensor<T> gather_images(const TargetFrames& frames, const std::vector<std::size_t>& idx) {
  const std::size_t side = frames.side(), fs = frames.frame_size();
  Tensor<T> out({idx.size(), 3, side, side});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(frames.frame(idx[i]), frames.frame(idx[i]) + fs, out.data() + i * fs);
  return out;
}

/// All frames of one prepared demonstration as a float batch.
inline Tensor<float> demo_images(const PreparedDemo& d) {
  return Tensor<float>({d.length(), 3, d.side, d.side}, d.pixels);
}

}  // namespace scl

#endif  // SCL_PREPARED_HPP
