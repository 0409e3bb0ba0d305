#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "microcarla/common.hpp"
#include "microcarla/geometry.hpp"
#include "microcarla/rng.hpp"
#include "microcarla/town.hpp"

namespace microcarla {

namespace vehicle {
inline constexpr double kLength = 4.0;
inline constexpr double kWidth = 1.8;
inline constexpr double kWheelbase = 2.7;
inline constexpr double kMaxSteer = 35.0 * kPi / 180.0;
inline constexpr double kThrottleAccel = 4.0;
inline constexpr double kBrakeDecel = 8.0;
inline constexpr double kRollingFriction = 0.5;
inline constexpr double kMaxSpeed = 50.0;
}  // namespace vehicle

inline constexpr double kPedestrianRadius = 0.35;
inline constexpr int kPedestrianRespawnTicks = 50;

struct VehicleState {
  Pose pose;
  double speed = 0.0;  // m/s, negative in reverse
  Control last_control;

  OrientedRect footprint() const { return {pose.position, pose.heading, vehicle::kLength, vehicle::kWidth}; }
  Vec2 velocity() const { return unit_from_angle(pose.heading) * speed; }
  bool operator==(const VehicleState&) const = default;
};

/// Lane-following state of a non-player vehicle. The path covers the
/// current edge and the already chosen next edge.
struct NpcBrain {
  int edge = 0;
  int next_edge = 0;
  double s = 0.0;  // arc position on `path`
  bool in_box = false;
  LanePath path;

  bool operator==(const NpcBrain& o) const {
    return edge == o.edge && next_edge == o.next_edge && s == o.s && in_box == o.in_box;
  }
};

struct Npc {
  int id = 0;
  VehicleState state;
  NpcBrain brain;
  bool operator==(const Npc&) const = default;
};

struct PedestrianState {
  int id = 0;
  Vec2 position;
  double speed = 1.2;  // m/s
  std::pair<int, int> target{0, 0};  // nav cell
  std::pair<int, int> waypoint{0, 0};  // next cell being walked to
  int prop = 0;  // cosmetic
  bool alive = true;
  int respawn_ticks = 0;
  int stuck_ticks = 0;

  double respawn_timer() const { return respawn_ticks * kDt; }
  bool operator==(const PedestrianState&) const = default;
};

enum class ContactKind : std::uint8_t { Car = 0, Pedestrian = 1, Static = 2 };
std::string to_string(ContactKind k);

struct Contact {
  ContactKind kind;
  int id;  // npc id, pedestrian id or obstacle index
  bool operator==(const Contact&) const = default;
  auto operator<=>(const Contact&) const = default;
};

struct WorldState {
  std::int64_t tick = 0;
  double sim_time = 0.0;
  VehicleState player;
  Vec2 player_prev_velocity;
  std::vector<Npc> npcs;
  std::vector<PedestrianState> pedestrians;
  std::vector<LightState> lights;
  int weather = 1;
  std::uint64_t seed_vehicles = 1;
  std::uint64_t seed_pedestrians = 1;
  Rng vehicle_rng;
  Rng pedestrian_rng;
  std::vector<CameraConfig> cameras;
  std::array<double, 3> damage{0.0, 0.0, 0.0};  // indexed by ContactKind
  double opposite_lane = 0.0;
  double sidewalk = 0.0;
  std::vector<Contact> contacts;  // sorted, current tick

  double total_damage() const { return damage[0] + damage[1] + damage[2]; }
  bool operator==(const WorldState&) const = default;
};

class WorldError : public std::runtime_error {
 public:
  enum class Kind { SpawnIndex, TooManyVehicles, TooManyPedestrians, Weather, Camera };
  WorldError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Fresh world at tick 0. Throws WorldError when the meta does not fit the town.
WorldState apply_meta(const TownMap& town, const MetaCommand& meta);

/// Advances one tick in place. `control` must already be in range.
void step(WorldState& world, const TownMap& town, const Control& control);

/// Footprint fraction over wrong-way lanes or sidewalks.
enum class OverlapKind { OppositeLane, Sidewalk };
double overlap_fraction(const OrientedRect& footprint, const TownMap& town, OverlapKind kind);

/// Exposed for tests: the player's kinematic update without collisions.
VehicleState integrate_vehicle(const VehicleState& v, const Control& c, double friction, double dt = kDt);

/// Light governing traffic that reaches `edge`'s end node, if any.
const TrafficLight* light_for_edge(const TownMap& town, int edge);

}  // namespace microcarla
