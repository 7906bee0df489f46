#ifndef SCL_INFERENCE_HPP
#define SCL_INFERENCE_HPP

#include <map>
#include <optional>
#include <vector>

#include "scl/models.hpp"
#include "scl/prepared.hpp"

namespace scl {

/// Encoder choice for a demonstration. An adapted model keeps the source encoder for
/// source-domain frames and uses the target encoder only for target-domain frames.
template <class T>
std::optional<bool> encoder_for(const ModelHandle<T>& m, Domain domain) {
  if (!m.use_target_encoder) return std::nullopt;
  return domain == Domain::kTarget;
}

/// Per-frame classification logits for one demonstration. Sequence models predict
/// frame k at the last position of the window ending at k.
template <class T>
std::vector<double> demo_logits(const ModelHandle<T>& m, const PreparedDemo& d) {
  const Tensor<T> feats = infer_features(m, demo_images(d), encoder_for(m, d.domain));
  if (m.is_sequence()) return sequence_frame_logits(m, feats);
  Tape<T> tape(false);
  Var<T> z = m.class_logits(tape, tape.constant(feats));
  std::vector<double> out;
  for (T v : z.value().values()) out.push_back(static_cast<double>(v));
  return out;
}

/// Per-frame completion estimates for models with a timing head.
template <class T>
std::optional<std::vector<double>> demo_timing(const ModelHandle<T>& m, const PreparedDemo& d) {
  if (!m.has_head(HeadKind::kTiming)) return std::nullopt;
  const Tensor<T> feats = infer_features(m, demo_images(d), encoder_for(m, d.domain));
  Tape<T> tape(false);
  Var<T> z = m.timing_logits(tape, tape.constant(feats));
  std::vector<double> out;
  for (T v : z.value().values()) out.push_back(logit_to_prob(static_cast<double>(v)));
  return out;
}

/// Classification logits for an arbitrary set of frame references.
template <class T>
std::vector<double> logits_for_refs(const ModelHandle<T>& m, const std::vector<PreparedDemo>& demos,
                                    const std::vector<FrameRef>& refs, std::size_t chunk = 64) {
  std::vector<double> out(refs.size());
  if (m.is_sequence()) {
    std::map<std::size_t, std::vector<double>> per_demo;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      auto it = per_demo.find(refs[i].demo);
      if (it == per_demo.end()) it = per_demo.emplace(refs[i].demo, demo_logits(m, demos[refs[i].demo])).first;
      out[i] = it->second[refs[i].frame];
    }
    return out;
  }
  // Chunks never mix domains, so each one runs through a single encoder.
  for (std::size_t b = 0; b < refs.size();) {
    const Domain dom = demos[refs[b].demo].domain;
    std::size_t e = b;
    while (e < refs.size() && e - b < chunk && demos[refs[e].demo].domain == dom) ++e;
    const std::vector<FrameRef> part(refs.begin() + static_cast<long>(b), refs.begin() + static_cast<long>(e));
    Tape<T> tape(false);
    Var<T> z = m.class_logits(tape, m.features(tape, tape.constant(gather_images<T>(demos, part)), encoder_for(m, dom)));
    for (std::size_t i = 0; i < part.size(); ++i) out[b + i] = static_cast<double>(z.value()[i]);
    b = e;
  }
  return out;
}

}  // namespace scl

#endif  // SCL_INFERENCE_HPP
