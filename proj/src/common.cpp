#include "microcarla/common.hpp"

#include <algorithm>
#include <cmath>

namespace microcarla {

Control clamp_control(const Control& c, bool* clamped) {
  auto clip = [](double v, double lo, double hi) { return std::isnan(v) ? 0.0 : std::clamp(v, lo, hi); };
  Control out = c;
  out.steer = clip(c.steer, -1.0, 1.0);
  out.throttle = clip(c.throttle, 0.0, 1.0);
  out.brake = clip(c.brake, 0.0, 1.0);
  if (clamped) *clamped = !(out == c) || std::isnan(c.steer) || std::isnan(c.throttle) || std::isnan(c.brake);
  return out;
}

std::string to_string(HighLevelCommand c) {
  switch (c) {
    case HighLevelCommand::FollowLane: return "follow_lane";
    case HighLevelCommand::Straight: return "straight";
    case HighLevelCommand::Left: return "left";
    case HighLevelCommand::Right: return "right";
    case HighLevelCommand::GoalReached: return "goal_reached";
  }
  return "follow_lane";
}

std::optional<HighLevelCommand> command_from_string(const std::string& s) {
  for (auto c : {HighLevelCommand::FollowLane, HighLevelCommand::Straight, HighLevelCommand::Left,
                 HighLevelCommand::Right, HighLevelCommand::GoalReached})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::string to_string(CameraKind k) {
  switch (k) {
    case CameraKind::Semantic: return "semantic";
    case CameraKind::Depth: return "depth";
    case CameraKind::RgbProxy: return "rgb_proxy";
  }
  return "semantic";
}

std::optional<CameraKind> camera_kind_from_string(const std::string& s) {
  for (auto k : {CameraKind::Semantic, CameraKind::Depth, CameraKind::RgbProxy})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

bool CameraConfig::valid() const {
  return fov > 0.0 && fov <= 2.0 * 3.14159265358979323846 + 1e-12 && ray_count >= 1 && ray_count <= 100000 &&
         max_range > 0.0 && std::isfinite(max_range) && std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw);
}

std::vector<CameraConfig> default_camera_suite() {
  CameraConfig sem;
  CameraConfig depth;
  depth.kind = CameraKind::Depth;
  return {sem, depth};
}

}  // namespace microcarla
