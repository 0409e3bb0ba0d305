#include "microcarla/pilot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "microcarla/dynamics.hpp"

namespace microcarla {

std::string to_string(PlannerState s) {
  switch (s) {
    case PlannerState::RoadFollowing: return "road_following";
    case PlannerState::LeftTurn: return "left_turn";
    case PlannerState::RightTurn: return "right_turn";
    case PlannerState::IntersectionForward: return "intersection_forward";
    case PlannerState::HazardStop: return "hazard_stop";
  }
  return "?";
}

namespace {

nlohmann::json pid_json(const Pid& p) { return {{"kp", p.kp}, {"ki", p.ki}, {"kd", p.kd}, {"cap", p.cap}}; }

Pid pid_from(const nlohmann::json& j, Pid p) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const double v = it.value().get<double>();
    if (it.key() == "kp") p.kp = v;
    else if (it.key() == "ki") p.ki = v;
    else if (it.key() == "kd") p.kd = v;
    else if (it.key() == "cap") p.cap = v;
    else throw std::invalid_argument("unknown pid key '" + it.key() + "'");
  }
  if (p.kp < 0 || p.ki < 0 || p.kd < 0 || p.cap <= 0) throw std::invalid_argument("pid gains must be >= 0 and cap > 0");
  return p;
}

/// Path point, continued straight past either end.
Vec2 extended_point(const LanePath& path, double s) {
  if (s <= path.length()) return path.point_at(s);
  return path.point_at(path.length()) + path.tangent_at(path.length()) * (s - path.length());
}

constexpr double kHalfLength = 2.0;  // player footprint
constexpr double kRearAxle = 1.35;   // behind the centre

}  // namespace

nlohmann::json to_json(const PilotConfig& c) {
  return {{"steer", pid_json(c.steer)},
          {"speed", pid_json(c.speed)},
          {"cruise_kmh", c.cruise_kmh},
          {"turn_kmh", c.turn_kmh},
          {"hazard_range", c.hazard_range},
          {"vehicle_corridor", c.vehicle_corridor},
          {"pedestrian_corridor", c.pedestrian_corridor},
          {"approach", c.approach},
          {"stop_decel", c.stop_decel},
          {"box_check", c.box_check},
          {"box_watch", c.box_watch},
          {"clear_ticks", c.clear_ticks}};
}

PilotConfig pilot_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("pilot config must be an object");
  PilotConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "steer") c.steer = pid_from(v, c.steer);
    else if (k == "speed") c.speed = pid_from(v, c.speed);
    else if (k == "cruise_kmh") c.cruise_kmh = v.get<double>();
    else if (k == "turn_kmh") c.turn_kmh = v.get<double>();
    else if (k == "hazard_range") c.hazard_range = v.get<double>();
    else if (k == "vehicle_corridor") c.vehicle_corridor = v.get<double>();
    else if (k == "pedestrian_corridor") c.pedestrian_corridor = v.get<double>();
    else if (k == "approach") c.approach = v.get<double>();
    else if (k == "stop_decel") c.stop_decel = v.get<double>();
    else if (k == "box_check") c.box_check = v.get<double>();
    else if (k == "box_watch") c.box_watch = v.get<double>();
    else if (k == "clear_ticks") c.clear_ticks = v.get<int>();
    else throw std::invalid_argument("unknown pilot config key '" + k + "'");
  }
  return c;
}

PilotConfig load_pilot_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pilot config " + path.string());
  return pilot_config_from_json(nlohmann::json::parse(in));
}

PerceptionSummary perceive(const Measurements& m, const TownMap& town, const LanePath& path, double s,
                           const PilotConfig& cfg) {
  PerceptionSummary out;
  const double heading = m.heading();
  if (path.points().size() < 2 || town.classify(m.position, heading).kind == RegionKind::OffMap) {
    out.off_map = true;
    return out;
  }
  const Vec2 p = path.point_at(s), t = path.tangent_at(s);
  out.lane_offset = cross(t, m.position - p);
  out.heading_error = wrap_angle(angle_of(t) - heading);
  out.distance_to_intersection = path.edges().size() > 1 ? path.node_position(0) - s : path.length() - s;

  // Signal at the end of the current edge.
  const int edge = path.edges().front();
  if (const TrafficLight* light = light_for_edge(town, edge)) {
    const auto it = std::find_if(m.lights.begin(), m.lights.end(), [&](const LightInfo& l) { return l.id == light->id; });
    if (it != m.lights.end()) {
      const double gap = town.edges()[edge].length - town.trim_end(edge) - (s + kHalfLength);
      const double v = m.speed_kmh / 3.6;
      bool stop = it->state == LightState::Red;
      // Yellow: halt only if that is still comfortable.
      if (it->state == LightState::Yellow) stop = v * v <= 2.0 * 4.0 * gap;
      if (stop && gap > -0.5) out.stop_distance = gap;
    }
  }

  // Junction etiquette: do not enter a box that another car occupies or is
  // about to reach from a different direction.
  const int node = town.edges()[edge].to_node;
  if (town.is_junction(node)) {
    const double gap = town.edges()[edge].length - town.trim_end(edge) - (s + kHalfLength);
    if (gap > -0.5 && gap < cfg.box_check) {
      const Polygon& box = town.intersections[node].box;
      const Vec2 centre = town.intersections[node].position;
      bool busy = false;
      for (const auto& a : m.agents) {
        if (a.kind != AgentInfo::Kind::Vehicle) continue;
        const Polygon fp = OrientedRect{a.pose.position, a.pose.heading, a.length, a.width}.polygon();
        const Vec2 vel = unit_from_angle(a.pose.heading) * a.speed;
        const bool same_way = std::abs(wrap_angle(a.pose.heading - heading)) < kPi / 6.0;
        if (convex_overlap(fp, box) && !(same_way && dot(a.pose.position - m.position, m.orientation) > 0.0)) busy = true;
        if (!same_way && a.speed > 1.0 && distance(a.pose.position, centre) < cfg.box_watch &&
            dot(vel, centre - a.pose.position) > 0.0)
          busy = true;
      }
      if (busy) out.stop_distance = std::min(out.stop_distance.value_or(1e9), std::max(gap, 0.0));
    }
  }

  // Corridor: short rectangles laid along the path ahead of the bumper.
  const double front = s + kHalfLength;
  const double step = 3.0;
  std::vector<Polygon> veh, ped;
  Aabb area;
  for (double d = 0.0; d < cfg.hazard_range - 1e-9; d += step) {
    const Vec2 a = extended_point(path, front + d), b = extended_point(path, front + std::min(d + step, cfg.hazard_range));
    const OrientedRect r{(a + b) * 0.5, angle_of(b - a), distance(a, b), cfg.vehicle_corridor};
    OrientedRect w = r;
    w.width = cfg.pedestrian_corridor;
    veh.push_back(r.polygon());
    ped.push_back(w.polygon());
    for (const Vec2& c : ped.back()) area.extend(c);
  }
  auto along = [&](Vec2 q) { return std::max(0.0, path.project(q, s, front + cfg.hazard_range + 5.0) - front); };
  for (const auto& a : m.agents) {
    bool hit = false;
    if (a.kind == AgentInfo::Kind::Vehicle) {
      const Polygon fp = OrientedRect{a.pose.position, a.pose.heading, a.length, a.width}.polygon();
      for (const auto& r : veh) hit = hit || convex_overlap(fp, r);
      if (hit) out.hazards.push_back({a.pose.position, along(a.pose.position), HazardKind::Vehicle});
    } else {
      for (const auto& r : ped) hit = hit || circle_overlaps_convex(a.pose.position, a.width / 2.0, r);
      if (hit) out.hazards.push_back({a.pose.position, along(a.pose.position), HazardKind::Pedestrian});
    }
  }
  std::vector<int> near;
  town.obstacles_near(area, near);
  for (int o : near) {
    const auto& poly = town.obstacles[o].polygon;
    bool hit = false;
    for (const auto& r : veh) hit = hit || convex_overlap(poly, r);
    if (hit) {
      Vec2 c;
      for (const Vec2& q : poly) c = c + q;
      c = c / static_cast<double>(poly.size());
      out.hazards.push_back({c, along(c), HazardKind::Static});
    }
  }
  std::stable_sort(out.hazards.begin(), out.hazards.end(),
                   [](const Hazard& a, const Hazard& b) { return a.distance < b.distance; });
  return out;
}

PlannerState transition(PlannerState state, const PerceptionSummary& summary, HighLevelCommand command,
                        int hazard_free_ticks, bool past_junction, const PilotConfig& cfg) {
  if (summary.off_map || !summary.hazards.empty()) return PlannerState::HazardStop;
  if (state == PlannerState::HazardStop && hazard_free_ticks < cfg.clear_ticks) return PlannerState::HazardStop;
  const bool turning = state == PlannerState::LeftTurn || state == PlannerState::RightTurn ||
                       state == PlannerState::IntersectionForward;
  if (turning && !past_junction) return state;
  if (summary.distance_to_intersection <= cfg.approach && !(turning && past_junction)) {
    switch (command) {
      case HighLevelCommand::Left: return PlannerState::LeftTurn;
      case HighLevelCommand::Right: return PlannerState::RightTurn;
      case HighLevelCommand::Straight: return PlannerState::IntersectionForward;
      default: break;
    }
  }
  return PlannerState::RoadFollowing;
}

std::vector<Waypoint> make_waypoints(PlannerState state, const LanePath& path, double s, const PilotConfig& cfg) {
  std::vector<Waypoint> out;
  switch (state) {
    case PlannerState::HazardStop:
      out.push_back({path.point_at(s), 0.0, true});
      break;
    case PlannerState::RoadFollowing:
    case PlannerState::IntersectionForward:
      for (double d = 2.0; d <= 10.0; d += 2.0) out.push_back({extended_point(path, s + d), cfg.cruise_kmh, false});
      break;
    case PlannerState::LeftTurn:
      for (double d = 2.0; d <= 8.0; d += 2.0) out.push_back({extended_point(path, s + d), cfg.turn_kmh, false});
      break;
    case PlannerState::RightTurn:
      for (double d = 2.0; d <= 6.0; d += 2.0) out.push_back({extended_point(path, s + d), cfg.turn_kmh, false});
      break;
  }
  return out;
}

void apply_stop(std::vector<Waypoint>& waypoints, double stop_distance, const PilotConfig& cfg) {
  if (stop_distance < 0.75) {
    waypoints = {{waypoints.front().position, 0.0, true}};
    return;
  }
  const double cap = 3.6 * std::sqrt(2.0 * cfg.stop_decel * std::max(0.0, stop_distance - 0.5));
  for (auto& w : waypoints) w.speed_kmh = std::min(w.speed_kmh, cap);
}

void PidController::reset() {
  steer_i_ = speed_i_ = 0.0;
  steer_prev_.reset();
  speed_prev_.reset();
}

Control PidController::step(const Pose& pose, double speed_kmh, const std::vector<Waypoint>& waypoints, double dt) {
  if (waypoints.empty() || waypoints.front().emergency) {
    reset();
    return Control{0.0, 0.0, 1.0, false, false};
  }
  const Waypoint& w = waypoints.front();

  // Steering error: pure-pursuit demand toward the waypoint from the rear
  // axle, in normalised steer units (+1 is full right).
  const Vec2 rear = pose.position - unit_from_angle(pose.heading) * kRearAxle;
  const Vec2 to = w.position - rear;
  const double ld = std::max(norm(to), 1e-3);
  const double alpha = wrap_angle(angle_of(to) - pose.heading);
  const double demand = std::atan2(2.0 * vehicle::kWheelbase * std::sin(alpha), ld);
  const double e = -demand / vehicle::kMaxSteer;
  const double de = steer_prev_ ? (e - *steer_prev_) / dt : 0.0;
  steer_prev_ = e;
  double steer = cfg_.steer.kp * e + cfg_.steer.ki * steer_i_ + cfg_.steer.kd * de;
  if (std::abs(steer) < 1.0 || steer * e < 0.0) steer_i_ = std::clamp(steer_i_ + e * dt, -cfg_.steer.cap, cfg_.steer.cap);
  steer = std::clamp(steer, -1.0, 1.0);

  // Speed error in km/h; integrate only while the output is unsaturated.
  const double ev = w.speed_kmh - speed_kmh;
  const double dv = speed_prev_ ? (ev - *speed_prev_) / dt : 0.0;
  speed_prev_ = ev;
  const double u = cfg_.speed.kp * ev + cfg_.speed.ki * speed_i_ + cfg_.speed.kd * dv;
  if ((u < 1.0 && u > -1.0) || u * ev < 0.0)
    speed_i_ = std::clamp(speed_i_ + ev * dt, -cfg_.speed.cap, cfg_.speed.cap);
  Control c;
  c.steer = steer;
  if (u >= 0.0) c.throttle = std::min(1.0, u);
  else if (u < -0.5) c.brake = std::min(1.0, -u - 0.5);
  return c;
}

void Pilot::reset(const TownMap& town) {
  town_ = &town;
  pid_ = PidController(cfg_);
  state_ = PlannerState::RoadFollowing;
  summary_ = {};
  waypoints_.clear();
  path_ = {};
  edge_ = next_ = -1;
  s_ = 0.0;
  locked_ = past_junction_ = false;
  clear_ = 0;
}

int Pilot::choose_next(int edge, HighLevelCommand command) const {
  const auto& succ = town_->successors(edge);
  if (succ.size() == 1) return succ[0];
  auto find = [&](TurnLabel l) {
    for (int f : succ)
      if (town_->turn_label(edge, f) == l) return f;
    return -1;
  };
  int f = -1;
  if (command == HighLevelCommand::Left) f = find(TurnLabel::Left);
  else if (command == HighLevelCommand::Right) f = find(TurnLabel::Right);
  if (f < 0) f = find(TurnLabel::Straight);
  return f >= 0 ? f : succ[0];
}

void Pilot::rebuild(int edge, int next) {
  edge_ = edge;
  next_ = next;
  path_ = LanePath::build(*town_, {edge, next});
}

void Pilot::localize(const Pose& pose, HighLevelCommand command) {
  const bool lost = edge_ < 0 || distance(path_.point_at(path_.project(pose.position, std::max(0.0, s_ - 2.0), s_ + 10.0)),
                                          pose.position) > 3.0;
  if (lost) {
    const auto lp = town_->project_to_lane(pose.position, pose.heading);
    if (!lp) {
      path_ = {};
      edge_ = -1;
      return;
    }
    rebuild(lp->lane.edge, choose_next(lp->lane.edge, command));
    s_ = path_.project(pose.position, 0.0, town_->edges()[edge_].length + 1.0);
    locked_ = false;
  } else {
    s_ = path_.project(pose.position, std::max(0.0, s_ - 2.0), s_ + 10.0);
  }
  if (s_ > path_.transition_end(0) + 0.1) {
    rebuild(next_, choose_next(next_, command));
    s_ = path_.project(pose.position, 0.0, 15.0);
    locked_ = false;
    past_junction_ = true;
  }
  if (!locked_) {
    if (s_ >= path_.transition_begin(0) - 1.0) {
      locked_ = true;
    } else if (path_.node_position(0) - s_ <= cfg_.approach + 5.0) {
      const int want = choose_next(edge_, command);
      if (want != next_) {
        rebuild(edge_, want);
        s_ = path_.project(pose.position, 0.0, town_->edges()[edge_].length + 1.0);
      }
    }
  }
}

Control Pilot::act(const SensorFrame& frame, HighLevelCommand command) {
  const Measurements& m = frame.measurements;
  const Pose pose{m.position, m.heading()};
  if (!town_ || command == HighLevelCommand::GoalReached) return Control{0.0, 0.0, 1.0, false, false};
  localize(pose, command);
  summary_ = perceive(m, *town_, path_, s_, cfg_);
  clear_ = summary_.hazards.empty() && !summary_.off_map ? clear_ + 1 : 0;
  const bool out_of_box = !town_->box_at(pose.position).has_value();
  PlannerState next = transition(state_, summary_, command, clear_, past_junction_ && out_of_box, cfg_);
  if (next != state_) {
    pid_.reset();
    if (next == PlannerState::LeftTurn || next == PlannerState::RightTurn || next == PlannerState::IntersectionForward)
      past_junction_ = false;
    state_ = next;
  }
  if (summary_.off_map) {
    waypoints_ = {{pose.position, 0.0, true}};
  } else {
    waypoints_ = make_waypoints(state_, path_, s_, cfg_);
    if (summary_.stop_distance && state_ != PlannerState::HazardStop) apply_stop(waypoints_, *summary_.stop_distance, cfg_);
  }
  return pid_.step(pose, m.speed_kmh, waypoints_);
}

}  // namespace microcarla
