#ifndef SCL_SYNTHGEN_HPP
#define SCL_SYNTHGEN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scl/core/nn.hpp"
#include "scl/dataset.hpp"

namespace scl {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend auto operator<=>(const Rgb&, const Rgb&) = default;
};

struct ShiftSpec {
  bool enabled = true;
  std::vector<Rgb> background_palette_source{{38, 42, 58}, {52, 44, 40}, {34, 56, 50}};
  std::vector<Rgb> background_palette_target{{112, 100, 78}, {78, 100, 122}, {118, 88, 110}};
  int distractor_count_source = 0;
  int distractor_count_target = 3;
};

/// Controls one synthetic task: a red object brought onto a goal, rendered over a
/// domain-dependent background.
struct SynthConfig {
  std::string task_id = "synth_reach_target";
  int num_demos_train = 5;
  int num_demos_test = 5;
  int frames_min = 30;
  int frames_max = 60;
  int image_height = 120;
  int image_width = 160;
  TaskRule task_rule = TaskRule::kReachTarget;
  ShiftSpec shift;
  double noise_std = 4.0;
  /// Target fraction of success frames at the end of each demonstration.
  double success_tail_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_demos_train < 1 || num_demos_test < 0) throw ConfigError("synth: need >= 1 train demo and >= 0 test demos");
    if (frames_min < 2 || frames_max < frames_min) throw ConfigError("synth: frames range must satisfy 2 <= min <= max");
    if (image_height < 16 || image_width < 16) throw ConfigError("synth: image must be at least 16x16");
    if (!(success_tail_fraction > 0.0 && success_tail_fraction < 1.0)) throw ConfigError("synth: success_tail_fraction in (0,1)");
    if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
    if (shift.background_palette_source.empty() || (shift.enabled && shift.background_palette_target.empty())) {
      throw ConfigError("synth: background palettes must be non-empty");
    }
    if (shift.distractor_count_source < 0 || shift.distractor_count_target < 0) throw ConfigError("synth: negative distractor count");
    if (shift.enabled) {
      std::set<Rgb> src(shift.background_palette_source.begin(), shift.background_palette_source.end());
      for (const auto& c : shift.background_palette_target) {
        if (src.count(c)) throw ConfigError("synth: source and target palettes must be disjoint when shift is enabled");
      }
    }
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  auto palette = [](const std::vector<Rgb>& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : p) a.push_back({x.r, x.g, x.b});
    return a;
  };
  return {{"task_id", c.task_id},
          {"num_demos_train", c.num_demos_train},
          {"num_demos_test", c.num_demos_test},
          {"frames_per_demo", {c.frames_min, c.frames_max}},
          {"image_size", {c.image_height, c.image_width}},
          {"task_rule", to_string(c.task_rule)},
          {"shift",
           {{"enabled", c.shift.enabled},
            {"background_palette_source", palette(c.shift.background_palette_source)},
            {"background_palette_target", palette(c.shift.background_palette_target)},
            {"distractor_count_source", c.shift.distractor_count_source},
            {"distractor_count_target", c.shift.distractor_count_target}}},
          {"noise_std", c.noise_std},
          {"success_tail_fraction", c.success_tail_fraction},
          {"seed", c.seed}};
}

/// Parses a synth section; unknown keys are rejected.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys{"task_id",  "num_demos_train", "num_demos_test", "frames_per_demo",
                                          "image_size", "task_rule",     "shift",          "noise_std",
                                          "success_tail_fraction", "seed"};
  static const std::set<std::string> shift_keys{"enabled", "background_palette_source", "background_palette_target",
                                                "distractor_count_source", "distractor_count_target"};
  if (!j.is_object()) throw ConfigError("synth config must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("synth: unknown key '" + k + "'");
  }
  SynthConfig c;
  try {
    c.task_id = j.value("task_id", c.task_id);
    c.num_demos_train = j.value("num_demos_train", c.num_demos_train);
    c.num_demos_test = j.value("num_demos_test", c.num_demos_test);
    if (j.contains("frames_per_demo")) {
      c.frames_min = j["frames_per_demo"].at(0).get<int>();
      c.frames_max = j["frames_per_demo"].at(1).get<int>();
    }
    if (j.contains("image_size")) {
      c.image_height = j["image_size"].at(0).get<int>();
      c.image_width = j["image_size"].at(1).get<int>();
    }
    if (j.contains("task_rule")) c.task_rule = parse_task_rule(j["task_rule"].get<std::string>());
    c.noise_std = j.value("noise_std", c.noise_std);
    c.success_tail_fraction = j.value("success_tail_fraction", c.success_tail_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("shift")) {
      const auto& s = j["shift"];
      for (const auto& [k, v] : s.items()) {
        if (!shift_keys.count(k)) throw ConfigError("synth.shift: unknown key '" + k + "'");
      }
      auto palette = [](const nlohmann::json& a) {
        std::vector<Rgb> out;
        for (const auto& x : a) {
          out.push_back({x.at(0).get<std::uint8_t>(), x.at(1).get<std::uint8_t>(), x.at(2).get<std::uint8_t>()});
        }
        return out;
      };
      c.shift.enabled = s.value("enabled", c.shift.enabled);
      if (s.contains("background_palette_source")) c.shift.background_palette_source = palette(s["background_palette_source"]);
      if (s.contains("background_palette_target")) c.shift.background_palette_target = palette(s["background_palette_target"]);
      c.shift.distractor_count_source = s.value("distractor_count_source", c.shift.distractor_count_source);
      c.shift.distractor_count_target = s.value("distractor_count_target", c.shift.distractor_count_target);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  c.validate();
  return c;
}

namespace synth_detail {

inline constexpr Rgb kObjectColor{220, 46, 38};
inline constexpr Rgb kGoalColor{64, 176, 74};
inline constexpr Rgb kBaseColor{52, 92, 222};
inline constexpr std::array<Rgb, 5> kDistractorColors{{{232, 212, 44}, {150, 64, 176}, {44, 204, 214}, {236, 236, 236}, {120, 84, 40}}};

struct Scene {
  Box start_object;  // object box at the start
  Box final_object;  // object box at rest
  Box goal;
  std::vector<std::pair<Box, Rgb>> distractors;
  Rgb background;
  double tex_ax, tex_ay, tex_phase, tex_amp;
};

inline Box lerp_box(const Box& a, const Box& b, double u) {
  return {a.x0 + (b.x0 - a.x0) * u, a.y0 + (b.y0 - a.y0) * u, a.x1 + (b.x1 - a.x1) * u, a.y1 + (b.y1 - a.y1) * u};
}

inline bool holds(TaskRule rule, const Box& object, const Box& goal) { return success_predicate({rule, object, goal}); }

/// Smallest path parameter at which the predicate holds (predicate is monotone along the path).
inline double entry_parameter(TaskRule rule, const Scene& s) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (holds(rule, lerp_box(s.start_object, s.final_object, mid), s.goal)) hi = mid;
    else lo = mid;
  }
  return hi;
}

inline Scene make_scene(const SynthConfig& cfg, Domain domain, Rng& rng) {
  const double w = cfg.image_width, h = cfg.image_height, s = std::min(w, h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene sc{};
  const auto& palette = (domain == Domain::kTarget && cfg.shift.enabled) ? cfg.shift.background_palette_target
                                                                         : cfg.shift.background_palette_source;
  sc.background = palette[static_cast<std::size_t>(rng() % palette.size())];
  sc.tex_ax = 2.0 * M_PI * (0.5 + 1.5 * unit(rng)) / w;
  sc.tex_ay = 2.0 * M_PI * (0.5 + 1.5 * unit(rng)) / h;
  sc.tex_phase = 2.0 * M_PI * unit(rng);
  sc.tex_amp = 6.0 + 6.0 * unit(rng);

  double obj_w = 0, obj_h = 0, goal_w = 0, goal_h = 0;
  switch (cfg.task_rule) {
    case TaskRule::kReachTarget: obj_w = obj_h = 0.14 * s; goal_w = goal_h = 0.32 * s; break;
    case TaskRule::kStackBlocks: obj_w = obj_h = 0.16 * s; goal_w = 0.30 * s; goal_h = 0.14 * s; break;
    case TaskRule::kCoverRegion: obj_w = obj_h = 0.34 * s; goal_w = goal_h = 0.2 * s; break;
  }
  const double margin = 2.0;
  auto rand_in = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  double gcx = rand_in(margin + goal_w / 2, w - margin - goal_w / 2);
  double gcy = cfg.task_rule == TaskRule::kStackBlocks ? rand_in(h * 0.6, h - margin - goal_h / 2)
                                                       : rand_in(margin + goal_h / 2, h - margin - goal_h / 2);
  sc.goal = Box::centered(gcx, gcy, goal_w, goal_h);

  Box final_obj;
  switch (cfg.task_rule) {
    case TaskRule::kReachTarget: {
      const double slack = 0.35 * (goal_w - obj_w) / 2;
      final_obj = Box::centered(gcx + rand_in(-slack, slack), gcy + rand_in(-slack, slack), obj_w, obj_h);
      break;
    }
    case TaskRule::kStackBlocks:
      final_obj = Box::centered(gcx, sc.goal.y0 - obj_h / 2 - kStackTolerance / 2, obj_w, obj_h);
      break;
    case TaskRule::kCoverRegion:
      final_obj = Box::centered(gcx + rand_in(-1.0, 1.0), gcy + rand_in(-1.0, 1.0), obj_w, obj_h);
      break;
  }
  sc.final_object = final_obj;

  // Start far from the goal; keep the whole object in view.
  for (int attempt = 0;; ++attempt) {
    const double cx = rand_in(obj_w / 2, w - obj_w / 2);
    const double cy = cfg.task_rule == TaskRule::kStackBlocks ? rand_in(obj_h / 2, std::max(obj_h / 2 + 1, sc.goal.y0 - obj_h))
                                                              : rand_in(obj_h / 2, h - obj_h / 2);
    const Box b = Box::centered(cx, cy, obj_w, obj_h);
    const double dist = std::hypot(cx - final_obj.cx(), cy - final_obj.cy());
    if ((dist >= 0.45 * s || attempt > 200) && !holds(cfg.task_rule, b, sc.goal) && overlap_area(b, sc.goal) == 0.0) {
      sc.start_object = b;
      break;
    }
    if (attempt > 2000) {
      sc.start_object = b;
      break;
    }
  }

  const int n_distract = domain == Domain::kTarget && cfg.shift.enabled ? cfg.shift.distractor_count_target
                                                                        : cfg.shift.distractor_count_source;
  Box keep_out{std::min({sc.goal.x0, sc.start_object.x0, final_obj.x0}) - 2, std::min({sc.goal.y0, final_obj.y0}) - 2,
               std::max({sc.goal.x1, final_obj.x1}) + 2, std::max({sc.goal.y1, final_obj.y1}) + 2};
  for (int k = 0; k < n_distract; ++k) {
    const double dw = rand_in(0.08, 0.16) * s, dh = rand_in(0.08, 0.16) * s;
    Box b{};
    for (int attempt = 0; attempt < 100; ++attempt) {
      b = Box::centered(rand_in(dw / 2, w - dw / 2), rand_in(dh / 2, h - dh / 2), dw, dh);
      if (overlap_area(b, keep_out) == 0.0) break;
    }
    sc.distractors.push_back({b, kDistractorColors[static_cast<std::size_t>(rng() % kDistractorColors.size())]});
  }
  return sc;
}

inline void fill_box(RawImage& img, const Box& b, Rgb c) {
  const long y0 = std::max(0L, static_cast<long>(std::ceil(b.y0 - 0.5)));
  const long y1 = std::min(static_cast<long>(img.height), static_cast<long>(std::ceil(b.y1 - 0.5)));
  const long x0 = std::max(0L, static_cast<long>(std::ceil(b.x0 - 0.5)));
  const long x1 = std::min(static_cast<long>(img.width), static_cast<long>(std::ceil(b.x1 - 0.5)));
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      img.at(y, x, 0) = c.r;
      img.at(y, x, 1) = c.g;
      img.at(y, x, 2) = c.b;
    }
}

inline RawImage render(const SynthConfig& cfg, const Scene& sc, const Box& object, Rng& noise_rng) {
  RawImage img(static_cast<std::size_t>(cfg.image_height), static_cast<std::size_t>(cfg.image_width));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double base[3] = {double(sc.background.r), double(sc.background.g), double(sc.background.b)};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double tex = sc.tex_amp * std::sin(sc.tex_ax * double(x) + sc.tex_ay * double(y) + sc.tex_phase);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(base[c] + tex, 0.0, 255.0));
    }
  for (const auto& [b, c] : sc.distractors) fill_box(img, b, c);
  fill_box(img, sc.goal, cfg.task_rule == TaskRule::kStackBlocks ? kBaseColor : kGoalColor);
  fill_box(img, object, kObjectColor);
  if (cfg.noise_std > 0) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::clamp(std::round(double(p) + cfg.noise_std * noise(noise_rng)), 0.0, 255.0));
    }
  }
  return img;
}

inline Demonstration generate_demo(const SynthConfig& cfg, Domain domain, const std::string& demo_id, std::uint64_t seed) {
  Rng rng(seed);
  const int j = cfg.frames_min + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.frames_max - cfg.frames_min + 1));
  const Scene sc = make_scene(cfg, domain, rng);
  const double entry = entry_parameter(cfg.task_rule, sc);
  const int onset_target = std::clamp(static_cast<int>(std::lround((1.0 - cfg.success_tail_fraction) * j)), 1, j - 1);
  const int settle = std::max(1, static_cast<int>(std::lround(0.1 * j)));
  Rng noise_rng(derive_seed(seed, "noise"));
  std::vector<Frame> frames(static_cast<std::size_t>(j));
  for (int t = 0; t < j; ++t) {
    double u;
    if (t < onset_target) {
      u = entry * static_cast<double>(t) / static_cast<double>(onset_target);
    } else {
      u = entry + (1.0 - entry) * std::min(1.0, static_cast<double>(t - onset_target + 1) / settle);
    }
    const Box obj = lerp_box(sc.start_object, sc.final_object, u);
    frames[static_cast<std::size_t>(t)].geometry = FrameGeometry{cfg.task_rule, obj, sc.goal};
    frames[static_cast<std::size_t>(t)].pixels = render(cfg, sc, obj, noise_rng);
  }
  std::size_t onset = frames.size();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (success_predicate(*frames[t].geometry)) {
      onset = t;
      break;
    }
  }
  for (std::size_t t = onset; t < frames.size(); ++t) {
    if (!success_predicate(*frames[t].geometry)) throw Error("synthgen: non-monotone success in " + demo_id);
  }
  return label_frames(std::move(frames), onset, demo_id, cfg.task_id, domain);
}

}  // namespace synth_detail

/// Renders a full task dataset; every frame carries its scene geometry.
inline TaskDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  TaskDataset ds;
  ds.task_id = cfg.task_id;
  for (int i = 0; i < cfg.num_demos_train; ++i) {
    const std::string id = "train_" + std::to_string(i);
    ds.train_demos.push_back(synth_detail::generate_demo(cfg, Domain::kSource, id, derive_seed(cfg.seed, id)));
  }
  for (int i = 0; i < cfg.num_demos_test; ++i) {
    const std::string id = "test_" + std::to_string(i);
    ds.test_demos.push_back(synth_detail::generate_demo(cfg, Domain::kTarget, id, derive_seed(cfg.seed, id)));
  }
  ds.metadata = {{"description", "synthetic " + to_string(cfg.task_rule) + " task"},
                 {"sampling_rate_hz", 10.0},
                 {"synth_config", to_json(cfg)}};
  return ds;
}

/// Ground-truth success of a generated frame.
inline int oracle_predict(const Frame& frame, TaskRule rule) {
  if (!frame.geometry) throw ValidationError("oracle_predict: frame has no scene geometry attached");
  FrameGeometry g = *frame.geometry;
  g.rule = rule;
  return success_predicate(g) ? 1 : 0;
}

}  // namespace scl

#endif  // SCL_SYNTHGEN_HPP
