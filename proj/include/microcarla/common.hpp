#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace microcarla {

inline constexpr double kDt = 0.1;

/// Player actuation. Ranges are enforced at the protocol boundary.
struct Control {
  double steer = 0.0;     // -1 full left .. +1 full right
  double throttle = 0.0;  // 0..1
  double brake = 0.0;     // 0..1
  bool hand_brake = false;
  bool reverse = false;

  bool operator==(const Control&) const = default;
};

/// Clamps to valid ranges; reports whether anything changed.
Control clamp_control(const Control& c, bool* clamped = nullptr);

enum class HighLevelCommand : std::uint8_t { FollowLane, Straight, Left, Right, GoalReached };
std::string to_string(HighLevelCommand c);
std::optional<HighLevelCommand> command_from_string(const std::string& s);

enum class CameraKind : std::uint8_t { Semantic, Depth, RgbProxy };
std::string to_string(CameraKind k);
std::optional<CameraKind> camera_kind_from_string(const std::string& s);

struct CameraConfig {
  CameraKind kind = CameraKind::Semantic;
  double x = 2.0;    // mount offset in the vehicle frame, m
  double y = 0.0;
  double yaw = 0.0;  // rad, relative to vehicle heading
  double fov = 100.0 * 3.14159265358979323846 / 180.0;
  int ray_count = 180;
  double max_range = 50.0;

  bool valid() const;
  bool operator==(const CameraConfig&) const = default;
};

/// Forward semantic + depth scans.
std::vector<CameraConfig> default_camera_suite();

/// Episode configuration sent by the client to reset the world.
struct MetaCommand {
  int num_vehicles = 0;
  int num_pedestrians = 0;
  int weather = 1;
  std::uint64_t seed_vehicles = 1;
  std::uint64_t seed_pedestrians = 1;
  std::vector<CameraConfig> cameras;
  int player_spawn_index = 0;

  bool operator==(const MetaCommand&) const = default;
};

}  // namespace microcarla
