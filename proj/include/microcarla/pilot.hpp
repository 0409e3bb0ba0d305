#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "microcarla/agent.hpp"
#include "microcarla/sensors.hpp"
#include "microcarla/town.hpp"

namespace microcarla {

enum class PlannerState : std::uint8_t { RoadFollowing, LeftTurn, RightTurn, IntersectionForward, HazardStop };
std::string to_string(PlannerState s);

struct Waypoint {
  Vec2 position;
  double speed_kmh = 0.0;
  bool emergency = false;
};

enum class HazardKind : std::uint8_t { Vehicle, Pedestrian, Static };

struct Hazard {
  Vec2 position;
  double distance = 0.0;  // along the corridor from the front bumper
  HazardKind kind = HazardKind::Vehicle;
};

struct PerceptionSummary {
  double lane_offset = 0.0;    // m, left positive
  double heading_error = 0.0;  // rad, lane direction minus heading
  double distance_to_intersection = 1e9;  // m to the next node on the path
  std::vector<Hazard> hazards;  // sorted by distance
  bool off_map = false;
  /// Bumper to the junction box when the signal ahead says stop, else unset.
  std::optional<double> stop_distance;
};

struct Pid {
  double kp = 0.0, ki = 0.0, kd = 0.0;
  double cap = 10.0;  // |integral| bound
  bool operator==(const Pid&) const = default;
};

struct PilotConfig {
  Pid steer{0.8, 0.0, 0.2, 10.0};
  Pid speed{0.25, 0.05, 0.0, 10.0};
  double cruise_kmh = 20.0;
  double turn_kmh = 14.0;
  double hazard_range = 15.0;  // m ahead of the front bumper
  double vehicle_corridor = 2.4;  // m, full width used against vehicle footprints
  double pedestrian_corridor = 3.0;
  double approach = 25.0;  // m before a node where turn states engage
  double stop_decel = 2.5;  // m/s^2 planned when halting for a signal
  double box_check = 4.0;   // m before a junction box where occupancy is checked
  double box_watch = 20.0;  // m from the junction centre for approaching cars
  int clear_ticks = 10;    // hazard-stop hysteresis

  bool operator==(const PilotConfig&) const = default;
};

nlohmann::json to_json(const PilotConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
PilotConfig pilot_config_from_json(const nlohmann::json& j);
PilotConfig load_pilot_config(const std::filesystem::path& path);

/// Ground-truth perception over the lane path the pilot is following.
PerceptionSummary perceive(const Measurements& m, const TownMap& town, const LanePath& path, double s,
                           const PilotConfig& cfg);

/// Local planner state machine. `hazard_free_ticks` counts consecutive
/// clear ticks seen in hazard-stop.
PlannerState transition(PlannerState state, const PerceptionSummary& summary, HighLevelCommand command,
                        int hazard_free_ticks, bool past_junction, const PilotConfig& cfg);

std::vector<Waypoint> make_waypoints(PlannerState state, const LanePath& path, double s, const PilotConfig& cfg);
/// Caps waypoint speeds so the car halts before a stop line `stop_distance` ahead.
void apply_stop(std::vector<Waypoint>& waypoints, double stop_distance, const PilotConfig& cfg);

/// Stateful PID controller for steering and speed.
class PidController {
 public:
  explicit PidController(const PilotConfig& cfg = {}) : cfg_(cfg) {}
  Control step(const Pose& pose, double speed_kmh, const std::vector<Waypoint>& waypoints, double dt = kDt);
  void reset();
  double speed_integral() const { return speed_i_; }
  double steer_integral() const { return steer_i_; }

 private:
  PilotConfig cfg_;
  double steer_i_ = 0.0, speed_i_ = 0.0;
  std::optional<double> steer_prev_, speed_prev_;
};

/// The modular pipeline driver with privileged perception.
class Pilot : public Agent {
 public:
  explicit Pilot(PilotConfig cfg = {}) : cfg_(cfg), pid_(cfg) {}
  std::string name() const override { return "pilot"; }
  void reset(const TownMap& town) override;
  Control act(const SensorFrame& frame, HighLevelCommand command) override;

  PlannerState state() const { return state_; }
  const PerceptionSummary& last_summary() const { return summary_; }
  const std::vector<Waypoint>& last_waypoints() const { return waypoints_; }
  const LanePath& path() const { return path_; }
  const PidController& controller() const { return pid_; }

 private:
  void localize(const Pose& pose, HighLevelCommand command);
  int choose_next(int edge, HighLevelCommand command) const;
  void rebuild(int edge, int next);

  PilotConfig cfg_;
  const TownMap* town_ = nullptr;
  PidController pid_;
  PlannerState state_ = PlannerState::RoadFollowing;
  PerceptionSummary summary_;
  std::vector<Waypoint> waypoints_;
  LanePath path_;
  int edge_ = -1, next_ = -1;
  double s_ = 0.0;
  bool locked_ = false;       // next edge fixed once the turn has begun
  bool past_junction_ = false;
  int clear_ = 0;
};

}  // namespace microcarla
