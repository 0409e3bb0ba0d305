#pragma once

#include <cstdint>
#include <vector>

#include "microcarla/dynamics.hpp"

namespace microcarla {

struct AgentInfo {
  enum class Kind : std::uint8_t { Vehicle, Pedestrian } kind = Kind::Vehicle;
  int id = 0;
  Pose pose;
  double length = 0.0;  // bounding rectangle, m
  double width = 0.0;
  double speed = 0.0;   // m/s
  bool operator==(const AgentInfo&) const = default;
};

struct LightInfo {
  int id = 0;
  Vec2 position;
  LightState state = LightState::Red;
  bool operator==(const LightInfo&) const = default;
};

struct SpeedLimitInfo {
  Vec2 position;
  double limit_kmh = 0.0;
  bool operator==(const SpeedLimitInfo&) const = default;
};

/// Per-tick observation record.
struct Measurements {
  std::int64_t tick = 0;
  double sim_time = 0.0;
  Vec2 position;
  Vec2 orientation{1.0, 0.0};
  double speed_kmh = 0.0;
  Vec2 acceleration;
  double collision_car = 0.0;
  double collision_pedestrian = 0.0;
  double collision_static = 0.0;
  double opposite_lane = 0.0;
  double sidewalk = 0.0;
  std::vector<AgentInfo> agents;
  std::vector<LightInfo> lights;
  std::vector<SpeedLimitInfo> speed_limits;

  double heading() const { return angle_of(orientation); }
  double total_damage() const { return collision_car + collision_pedestrian + collision_static; }
  bool operator==(const Measurements&) const = default;
};

/// One camera's output. Semantic and rgb-proxy scans fill `classes`,
/// depth scans fill `depths`.
struct Scan {
  CameraKind kind = CameraKind::Semantic;
  std::vector<std::uint8_t> classes;
  std::vector<float> depths;
  bool operator==(const Scan&) const = default;
};

struct SensorFrame {
  std::int64_t tick = 0;
  Measurements measurements;
  std::vector<Scan> scans;  // indexed like the meta's camera list
  bool operator==(const SensorFrame&) const = default;
};

struct RayHit {
  SemanticClass cls = SemanticClass::Other;
  double range = 0.0;     // nearest vertical hit or max_range
  bool vertical = false;  // a body stopped the ray
};

/// Noise-free single ray. Exposed so tests can probe the caster directly.
RayHit cast_ray(const WorldState& world, const TownMap& town, Vec2 origin, double angle, double max_range);

Scan render(const WorldState& world, const TownMap& town, const CameraConfig& cfg, int camera_index = 0);
Measurements assemble_measurements(const WorldState& world, const TownMap& town);
SensorFrame make_frame(const WorldState& world, const TownMap& town);

}  // namespace microcarla
