#ifndef SCL_GEOMETRY_HPP
#define SCL_GEOMETRY_HPP

#include <algorithm>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "scl/core/errors.hpp"

namespace scl {

enum class TaskRule { kReachTarget, kStackBlocks, kCoverRegion };

inline std::string to_string(TaskRule r) {
  switch (r) {
    case TaskRule::kReachTarget: return "reach_target";
    case TaskRule::kStackBlocks: return "stack_blocks";
    case TaskRule::kCoverRegion: return "cover_region";
  }
  return "?";
}

inline TaskRule parse_task_rule(const std::string& s) {
  if (s == "reach_target") return TaskRule::kReachTarget;
  if (s == "stack_blocks") return TaskRule::kStackBlocks;
  if (s == "cover_region") return TaskRule::kCoverRegion;
  throw ConfigError("unknown task_rule '" + s + "' (valid: reach_target, stack_blocks, cover_region)");
}

/// Axis-aligned box in pixel coordinates, [x0, x1) x [y0, y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }

  static Box centered(double cx, double cy, double w, double h) { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double overlap_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

/// Scene layout of one synthetic frame: the moving object and the goal it is brought to.
/// For stack_blocks the goal is the base block.
struct FrameGeometry {
  TaskRule rule = TaskRule::kReachTarget;
  Box object;
  Box goal;

  friend bool operator==(const FrameGeometry&, const FrameGeometry&) = default;
};

/// Tolerance (pixels) for the stacking predicate.
inline constexpr double kStackTolerance = 3.0;
/// Fraction of the goal that must be hidden for cover_region.
inline constexpr double kCoverFraction = 0.9;

/// Analytic success predicate of a scene.
inline bool success_predicate(const FrameGeometry& g) {
  switch (g.rule) {
    case TaskRule::kReachTarget:
      return g.object.x0 >= g.goal.x0 && g.object.x1 <= g.goal.x1 && g.object.y0 >= g.goal.y0 && g.object.y1 <= g.goal.y1;
    case TaskRule::kStackBlocks: {
      const double gap = g.goal.y0 - g.object.y1;
      return std::abs(g.object.cx() - g.goal.cx()) <= kStackTolerance && gap >= 0.0 && gap <= kStackTolerance;
    }
    case TaskRule::kCoverRegion:
      return g.goal.area() > 0 && overlap_area(g.object, g.goal) >= kCoverFraction * g.goal.area();
  }
  return false;
}

inline nlohmann::json to_json(const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw IngestionError("geometry box must be [x0,y0,x1,y1]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace scl

#endif  // SCL_GEOMETRY_HPP
