#include "microcarla/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "microcarla/weather.hpp"

namespace microcarla {

namespace {

constexpr double kNpcComfortSpeed = 25.0 / 3.6;
constexpr double kNpcTurnSpeed = 15.0 / 3.6;
constexpr double kNpcAccel = 2.0;
constexpr double kNpcComfortDecel = 4.0;
constexpr double kNpcMaxDecel = 8.0;
constexpr double kNpcLookahead = 15.0;
constexpr double kNpcBoxCheck = 6.0;
constexpr double kPedestrianVehicleClearance = 3.0;
// Stopped vehicles only need a small gap; walkers cross in front of them.
constexpr double kPedestrianYieldSpeed = 0.5;
constexpr double kPedestrianMinGap = 0.6;
constexpr int kPedestrianStuckTicks = 30;
constexpr double kPedestrianTargetRadius = 30.0;
constexpr double kMassCar = 1000.0;
constexpr double kMassPedestrian = 80.0;
constexpr double kMassStatic = 1000.0;

double time_at(std::int64_t tick) { return static_cast<double>(tick) * kDt; }

int choose_next(const TownMap& town, int edge, Rng& rng) {
  const auto& succ = town.successors(edge);
  return succ[rng.index(succ.size())];
}

void rebuild_path(const TownMap& town, NpcBrain& b) { b.path = LanePath::build(town, {b.edge, b.next_edge}); }

/// Arc position on the brain's path where the lane meets the end box.
Vec2 pos_of(const Npc& n) { return n.state.pose.position; }

double box_entry(const TownMap& town, const NpcBrain& b) {
  return town.edges()[b.edge].length - town.trim_end(b.edge);
}

void place_npc(Npc& npc) {
  const auto& p = npc.brain.path;
  npc.state.pose.position = p.point_at(npc.brain.s);
  npc.state.pose.heading = angle_of(p.tangent_at(npc.brain.s));
}

Npc spawn_npc(const TownMap& town, int id, const Pose& pose, Rng& rng) {
  Npc npc;
  npc.id = id;
  const auto loc = town.locate_pose(pose);
  npc.brain.edge = loc ? loc->lane.edge : 0;
  npc.brain.next_edge = choose_next(town, npc.brain.edge, rng);
  rebuild_path(town, npc.brain);
  npc.brain.s = npc.brain.path.project(pose.position, 0.0, box_entry(town, npc.brain));
  place_npc(npc);
  return npc;
}

bool is_turn(const TownMap& town, const NpcBrain& b) {
  return town.turn_label(b.edge, b.next_edge) != TurnLabel::Straight;
}

std::pair<int, int> pick_target(const TownMap& town, Vec2 from, Rng& rng) {
  const auto& spawns = town.spawns.pedestrians;
  Vec2 choice = from;
  for (int attempt = 0; attempt < 8 && !spawns.empty(); ++attempt) {
    choice = spawns[rng.index(spawns.size())];
    if (distance(choice, from) <= kPedestrianTargetRadius) break;
  }
  return town.nav_grid.cell_of(choice);
}

PedestrianState spawn_pedestrian(const TownMap& town, int id, Vec2 at, Rng& rng) {
  PedestrianState p;
  p.id = id;
  p.position = at;
  p.speed = rng.uniform(0.8, 1.6);
  p.prop = static_cast<int>(rng.index(6));
  p.waypoint = town.nav_grid.cell_of(at);
  p.target = pick_target(town, at, rng);
  return p;
}

struct VehicleBody {
  int id;  // -1 for the player
  Vec2 position;
  OrientedRect rect;
  double speed;
};

/// True when moving from `from` to `to` approaches a moving vehicle that is
/// already close, or squeezes right up against the stopped player. Stopped
/// traffic is walked past; otherwise walkers and the cars waiting for them
/// can lock each other up.
bool approaches_vehicle(const std::vector<VehicleBody>& bodies, Vec2 from, Vec2 to) {
  for (const auto& b : bodies) {
    if (std::abs(b.position.x - from.x) > 8.0 || std::abs(b.position.y - from.y) > 8.0) continue;
    if (b.id >= 0 && std::abs(b.speed) <= kPedestrianYieldSpeed) continue;
    const auto poly = b.rect.polygon();
    const double d0 = point_convex_distance(from, poly);
    const double limit = std::abs(b.speed) > kPedestrianYieldSpeed ? kPedestrianVehicleClearance : kPedestrianMinGap;
    if (d0 >= limit) continue;
    if (point_convex_distance(to, poly) < d0) return true;
  }
  return false;
}

const VehicleBody* blocking_body(const std::vector<VehicleBody>& bodies, Vec2 at) {
  for (const auto& b : bodies) {
    if (std::abs(b.position.x - at.x) > 8.0 || std::abs(b.position.y - at.y) > 8.0) continue;
    if (point_convex_distance(at, b.rect.polygon()) < kPedestrianVehicleClearance) return &b;
  }
  return nullptr;
}

void step_pedestrian(PedestrianState& p, const TownMap& town, const std::vector<VehicleBody>& bodies, Rng& rng,
                     Vec2 player_pos) {
  const auto& grid = town.nav_grid;
  if (!p.alive) {
    if (--p.respawn_ticks > 0) return;
    const auto& spawns = town.spawns.pedestrians;
    Vec2 at = spawns[rng.index(spawns.size())];
    for (int attempt = 0; attempt < 8; ++attempt) {
      if (distance(at, player_pos) > 20.0 && distance(at, p.position) > 1.0) break;
      at = spawns[rng.index(spawns.size())];
    }
    p.alive = true;
    p.respawn_ticks = 0;
    p.stuck_ticks = 0;
    p.position = at;
    p.waypoint = grid.cell_of(at);
    p.target = pick_target(town, at, rng);
    return;
  }
  const auto here = grid.cell_of(p.position);
  if (here == p.target || p.stuck_ticks >= kPedestrianStuckTicks) {
    p.target = pick_target(town, p.position, rng);
    p.stuck_ticks = 0;
  }
  Vec2 wp = grid.center_of(p.waypoint.first, p.waypoint.second);
  if (distance(p.position, wp) < 1e-9 || p.stuck_ticks > 0) {
    // Greedy descent over the 8-neighbourhood, also re-run after a refused
    // stride so a walker is never frozen mid-cell.
    const Vec2 goal = grid.center_of(p.target.first, p.target.second);
    auto score = [&](int i, int j) { return distance(grid.center_of(i, j), goal) + 0.1 * grid.cost(i, j); };
    double best = score(here.first, here.second);
    std::optional<std::pair<int, int>> choice;
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        const int i = here.first + di, j = here.second + dj;
        if (!std::isfinite(grid.cost(i, j))) continue;
        if (di != 0 && dj != 0 &&
            (!std::isfinite(grid.cost(here.first + di, here.second)) ||
             !std::isfinite(grid.cost(here.first, here.second + dj))))
          continue;
        if (approaches_vehicle(bodies, p.position, grid.center_of(i, j))) continue;
        const double sc = score(i, j);
        if (sc < best - 1e-12) {
          best = sc;
          choice = std::make_pair(i, j);
        }
      }
    if (!choice) {
      ++p.stuck_ticks;
      // Pinned against a car: head for somewhere on this side of it.
      if (const VehicleBody* b = blocking_body(bodies, p.position)) {
        const Vec2 away = p.position - b->position;
        const auto& spawns = town.spawns.pedestrians;
        for (int attempt = 0; attempt < 8 && !spawns.empty(); ++attempt) {
          const Vec2 c = spawns[rng.index(spawns.size())];
          if (distance(c, p.position) <= kPedestrianTargetRadius && dot(c - p.position, away) > 0.0) {
            p.target = grid.cell_of(c);
            p.stuck_ticks = 0;
            break;
          }
        }
      }
      return;
    }
    p.waypoint = *choice;
    wp = grid.center_of(choice->first, choice->second);
  }
  const double d = distance(p.position, wp);
  const double stride = p.speed * kDt;
  const Vec2 next = d <= stride ? wp : p.position + (wp - p.position) * (stride / d);
  if (approaches_vehicle(bodies, p.position, next)) {
    ++p.stuck_ticks;
    return;
  }
  p.position = next;
  p.stuck_ticks = 0;
}

/// Speed cap for one NPC from lights and obstacles ahead, using the state
/// of the world before anyone moves this tick.
double npc_speed_cap(const TownMap& town, const WorldState& w, size_t idx, const std::vector<VehicleBody>& bodies,
                     std::vector<int>& blockers, const std::vector<int>& ignore = {}) {
  const Npc& npc = w.npcs[idx];
  const auto& b = npc.brain;
  const auto& road = town.roads[town.edges()[b.edge].road_index];
  const auto& next_road = town.roads[town.edges()[b.next_edge].road_index];
  double cap = std::min(road.speed_limit_kmh / 3.6, kNpcComfortSpeed);
  const double s_box = box_entry(town, b);
  const double front = b.s + vehicle::kLength / 2.0;
  if (front > s_box - 6.0) {
    cap = std::min(cap, next_road.speed_limit_kmh / 3.6);
    if (is_turn(town, b) && b.s < b.path.transition_end(0)) cap = std::min(cap, kNpcTurnSpeed);
  }

  const double v = npc.state.speed;
  if (const TrafficLight* light = light_for_edge(town, b.edge); light && !b.in_box && front <= s_box) {
    const double gap = std::max(0.0, s_box - 0.5 - front);
    const LightState ls = light->state_at(w.sim_time);
    bool stop = ls == LightState::Red;
    if (ls == LightState::Yellow) stop = v * v <= 2.0 * kNpcComfortDecel * gap + 1e-9;
    if (stop) cap = std::min(cap, std::sqrt(2.0 * kNpcComfortDecel * gap));
  }

  // Hold at the box edge while another car is inside the junction, unless
  // it is ahead of us going our way.
  const int node = town.edges()[b.edge].to_node;
  if (!b.in_box && town.is_junction(node) && front > s_box - kNpcBoxCheck && front <= s_box) {
    const Polygon& box = town.intersections[node].box;
    const double h = npc.state.pose.heading;
    for (const auto& body : bodies) {
      if (body.id == npc.id) continue;
      if (std::abs(body.position.x - pos_of(npc).x) > 25.0 || std::abs(body.position.y - pos_of(npc).y) > 25.0) continue;
      const bool same_way = std::abs(wrap_angle(body.rect.heading - h)) < kPi / 6.0;
      if (same_way && dot(body.position - pos_of(npc), unit_from_angle(h)) > 0.0) continue;
      if (convex_overlap(body.rect.polygon(), box)) {
        cap = std::min(cap, std::sqrt(2.0 * kNpcComfortDecel * std::max(0.0, s_box - 0.5 - front)));
        break;
      }
    }
  }

  const double horizon = std::min(b.s + kNpcLookahead + vehicle::kLength, b.path.length());
  auto obstacle_cap = [&](Vec2 p, double half_len, double lateral_limit) {
    const double ps = b.path.project(p, b.s, horizon);
    if (ps <= b.s + 0.1) return false;
    if (distance(p, b.path.point_at(ps)) > lateral_limit) return false;
    const double gap = ps - b.s - vehicle::kLength / 2.0 - half_len - 1.5;
    cap = std::min(cap, std::sqrt(2.0 * kNpcComfortDecel * std::max(0.0, gap)));
    return true;
  };
  const Vec2 pos = npc.state.pose.position;
  for (const auto& body : bodies) {
    if (body.id == npc.id || std::find(ignore.begin(), ignore.end(), body.id) != ignore.end()) continue;
    if (std::abs(body.position.x - pos.x) > 25.0 || std::abs(body.position.y - pos.y) > 25.0) continue;
    // Centre test for cars in the lane ahead, corner test for ones angled across it.
    bool hit = obstacle_cap(body.position, vehicle::kLength / 2.0, 2.2);
    for (const Vec2& c : body.rect.corners()) hit = obstacle_cap(c, 0.0, vehicle::kWidth / 2.0 + 0.3) || hit;
    if (hit && body.id >= 0) blockers.push_back(body.id);
  }
  for (const auto& ped : w.pedestrians) {
    if (!ped.alive) continue;
    if (std::abs(ped.position.x - pos.x) > 25.0 || std::abs(ped.position.y - pos.y) > 25.0) continue;
    obstacle_cap(ped.position, kPedestrianRadius, 1.6);
  }
  return cap;
}

void advance_npc(const TownMap& town, WorldState& w, Npc& npc, double cap) {
  auto& b = npc.brain;
  double v = npc.state.speed;
  v = v < cap ? std::min(cap, v + kNpcAccel * kDt) : std::max(cap, v - kNpcMaxDecel * kDt);
  v = std::max(0.0, v);
  // Never let the front cross into a box on red.
  if (const TrafficLight* light = light_for_edge(town, b.edge); light && !b.in_box) {
    const double s_box = box_entry(town, b);
    const double front = b.s + vehicle::kLength / 2.0;
    if (front <= s_box && light->state_at(w.sim_time) == LightState::Red)
      v = std::min(v, std::max(0.0, s_box - 0.1 - front) / kDt);
  }
  npc.state.speed = v;
  b.s += v * kDt;
  if (!b.in_box && b.s + vehicle::kLength / 2.0 > box_entry(town, b)) b.in_box = true;
  if (b.s > b.path.transition_end(0) && b.s > box_entry(town, b)) {
    const Vec2 pos = b.path.point_at(b.s);
    b.edge = b.next_edge;
    b.next_edge = choose_next(town, b.edge, w.vehicle_rng);
    rebuild_path(town, b);
    b.s = b.path.project(pos, 0.0, std::min(b.path.length(), 20.0));
    b.in_box = b.s + vehicle::kLength / 2.0 > box_entry(town, b);
  }
  place_npc(npc);
}

}  // namespace

std::string to_string(ContactKind k) {
  switch (k) {
    case ContactKind::Car: return "car";
    case ContactKind::Pedestrian: return "pedestrian";
    case ContactKind::Static: return "static";
  }
  return "static";
}

const TrafficLight* light_for_edge(const TownMap& town, int edge) {
  const auto& e = town.edges()[edge];
  const int node_id = town.intersections[e.to_node].id;
  const int road_id = town.roads[e.road_index].id;
  for (const auto& l : town.lights)
    if (l.intersection == node_id && l.road == road_id) return &l;
  return nullptr;
}

VehicleState integrate_vehicle(const VehicleState& v, const Control& c, double friction, double dt) {
  using namespace vehicle;
  VehicleState out = v;
  const double v0 = v.speed;
  const double dir = c.reverse ? -1.0 : 1.0;
  double v1 = v0 + kThrottleAccel * c.throttle * dir * friction * dt;
  const double brake = std::max(c.brake, c.hand_brake ? 1.0 : 0.0);
  const double decel = kBrakeDecel * brake * friction + (v0 != 0.0 ? kRollingFriction : 0.0);
  if (v1 > 0.0) v1 = std::max(0.0, v1 - decel * dt);
  else if (v1 < 0.0) v1 = std::min(0.0, v1 + decel * dt);
  v1 = std::clamp(v1, -kMaxSpeed, kMaxSpeed);
  const double delta = -c.steer * kMaxSteer;
  const double heading = wrap_angle(v.pose.heading + v1 / kWheelbase * std::tan(delta) * dt);
  out.speed = v1;
  out.pose.heading = heading;
  out.pose.position = v.pose.position + unit_from_angle(heading) * (v1 * dt);
  out.last_control = c;
  return out;
}

double overlap_fraction(const OrientedRect& footprint, const TownMap& town, OverlapKind kind) {
  const Polygon poly = footprint.polygon();
  static thread_local std::vector<int> near;
  town.regions_near(bounds_of(poly), near);
  const Vec2 h = footprint.axis();
  double a = 0.0;
  for (int idx : near) {
    const Region& r = town.regions()[idx];
    if (kind == OverlapKind::Sidewalk) {
      if (r.type != Region::Type::Sidewalk) continue;
    } else {
      if (r.type != Region::Type::Lane || dot(town.lane_regions()[r.ref].direction, h) >= 0.0) continue;
    }
    a += intersection_area(poly, r.polygon);
  }
  return std::clamp(a / footprint.area(), 0.0, 1.0);
}

WorldState apply_meta(const TownMap& town, const MetaCommand& meta) {
  if (meta.player_spawn_index < 0 || meta.player_spawn_index >= static_cast<int>(town.spawns.player.size()))
    throw WorldError(WorldError::Kind::SpawnIndex,
                     "spawn index " + std::to_string(meta.player_spawn_index) + " out of range (town has " +
                         std::to_string(town.spawns.player.size()) + ")");
  if (meta.weather < 1 || meta.weather > static_cast<int>(weather_presets().size()))
    throw WorldError(WorldError::Kind::Weather, "unknown weather id " + std::to_string(meta.weather));
  for (const auto& cam : meta.cameras)
    if (!cam.valid()) throw WorldError(WorldError::Kind::Camera, "invalid camera configuration");
  if (meta.num_pedestrians < 0 ||
      (meta.num_pedestrians > 0 && static_cast<size_t>(meta.num_pedestrians) > town.spawns.pedestrians.size()))
    throw WorldError(WorldError::Kind::TooManyPedestrians, "pedestrian count exceeds spawn points");

  WorldState w;
  w.weather = meta.weather;
  w.seed_vehicles = meta.seed_vehicles;
  w.seed_pedestrians = meta.seed_pedestrians;
  w.vehicle_rng = Rng(mix_seed(meta.seed_vehicles));
  w.pedestrian_rng = Rng(mix_seed(meta.seed_pedestrians ^ 0x5bd1e995ULL));
  w.cameras = meta.cameras;
  w.player.pose = town.spawns.player[meta.player_spawn_index];

  // NPC spawns keep clear of the player and each other.
  std::vector<size_t> free;
  for (size_t i = 0; i < town.spawns.vehicles.size(); ++i)
    if (distance(town.spawns.vehicles[i].position, w.player.pose.position) > 10.0) free.push_back(i);
  if (meta.num_vehicles < 0 || static_cast<size_t>(meta.num_vehicles) > free.size())
    throw WorldError(WorldError::Kind::TooManyVehicles,
                     "vehicle count " + std::to_string(meta.num_vehicles) + " exceeds available spawn points (" +
                         std::to_string(free.size()) + ")");
  for (size_t i = 0; i < static_cast<size_t>(meta.num_vehicles); ++i) {
    const size_t j = i + w.vehicle_rng.index(free.size() - i);
    std::swap(free[i], free[j]);
    w.npcs.push_back(spawn_npc(town, static_cast<int>(i), town.spawns.vehicles[free[i]], w.vehicle_rng));
  }

  std::vector<size_t> walk(town.spawns.pedestrians.size());
  for (size_t i = 0; i < walk.size(); ++i) walk[i] = i;
  for (size_t i = 0; i < static_cast<size_t>(meta.num_pedestrians); ++i) {
    const size_t j = i + w.pedestrian_rng.index(walk.size() - i);
    std::swap(walk[i], walk[j]);
    w.pedestrians.push_back(
        spawn_pedestrian(town, static_cast<int>(i), town.spawns.pedestrians[walk[i]], w.pedestrian_rng));
  }

  w.lights.reserve(town.lights.size());
  for (const auto& l : town.lights) w.lights.push_back(l.state_at(0.0));
  w.opposite_lane = overlap_fraction(w.player.footprint(), town, OverlapKind::OppositeLane);
  w.sidewalk = overlap_fraction(w.player.footprint(), town, OverlapKind::Sidewalk);
  return w;
}

void step(WorldState& w, const TownMap& town, const Control& control) {
  const double friction = weather(w.weather).friction;

  std::vector<VehicleBody> bodies;
  bodies.reserve(w.npcs.size() + 1);
  bodies.push_back({-1, w.player.pose.position, w.player.footprint(), w.player.speed});
  for (const auto& n : w.npcs) bodies.push_back({n.id, n.state.pose.position, n.state.footprint(), n.state.speed});

  // NPCs decide from the pre-tick snapshot, then move together.
  std::vector<double> caps(w.npcs.size());
  std::vector<std::vector<int>> blockers(w.npcs.size());
  for (size_t i = 0; i < w.npcs.size(); ++i) caps[i] = npc_speed_cap(town, w, i, bodies, blockers[i]);
  for (size_t i = 0; i < w.npcs.size(); ++i) {
    // Two NPCs waiting on each other: the lower id goes first.
    std::vector<int> ignore;
    for (int j : blockers[i]) {
      const auto& back = blockers[j];
      if (j > static_cast<int>(i) && std::find(back.begin(), back.end(), static_cast<int>(i)) != back.end())
        ignore.push_back(j);
    }
    if (!ignore.empty()) {
      std::vector<int> unused;
      caps[i] = npc_speed_cap(town, w, i, bodies, unused, ignore);
    }
  }
  for (size_t i = 0; i < w.npcs.size(); ++i) advance_npc(town, w, w.npcs[i], caps[i]);

  bodies.resize(1);
  for (const auto& n : w.npcs) bodies.push_back({n.id, n.state.pose.position, n.state.footprint(), n.state.speed});
  for (auto& p : w.pedestrians) step_pedestrian(p, town, bodies, w.pedestrian_rng, w.player.pose.position);

  // Player.
  const VehicleState before = w.player;
  const VehicleState cand = integrate_vehicle(before, control, friction);
  const Polygon foot = cand.footprint().polygon();
  const Polygon cur_foot = before.footprint().polygon();
  const Aabb box = bounds_of(foot);
  std::vector<Contact> contacts;
  bool blocked = false;
  static thread_local std::vector<int> near;
  town.obstacles_near(box, near);
  for (int o : near) {
    const auto& poly = town.obstacles[o].polygon;
    if (!convex_overlap(foot, poly)) continue;
    contacts.push_back({ContactKind::Static, o});
    if (!convex_overlap(cur_foot, poly) ||
        point_convex_distance(cand.pose.position, poly) < point_convex_distance(before.pose.position, poly))
      blocked = true;
  }
  for (const auto& n : w.npcs) {
    if (distance(n.state.pose.position, cand.pose.position) > vehicle::kLength + 0.5) continue;
    const Polygon other = n.state.footprint().polygon();
    if (!convex_overlap(foot, other)) continue;
    contacts.push_back({ContactKind::Car, n.id});
    if (!convex_overlap(cur_foot, other) ||
        distance(cand.pose.position, n.state.pose.position) < distance(before.pose.position, n.state.pose.position))
      blocked = true;
  }
  for (const auto& p : w.pedestrians) {
    if (!p.alive || distance(p.position, cand.pose.position) > vehicle::kLength) continue;
    if (circle_overlaps_convex(p.position, kPedestrianRadius, foot)) contacts.push_back({ContactKind::Pedestrian, p.id});
  }
  std::sort(contacts.begin(), contacts.end());

  if (blocked) {
    w.player.speed = 0.0;
    w.player.last_control = control;
  } else {
    w.player = cand;
  }
  for (const auto& c : contacts) {
    if (std::binary_search(w.contacts.begin(), w.contacts.end(), c)) continue;
    switch (c.kind) {
      case ContactKind::Static:
        w.damage[2] += kMassStatic * std::abs(before.speed);
        break;
      case ContactKind::Car: {
        const auto& n = *std::find_if(w.npcs.begin(), w.npcs.end(), [&](const Npc& x) { return x.id == c.id; });
        w.damage[0] += kMassCar * norm(before.velocity() - n.state.velocity());
        break;
      }
      case ContactKind::Pedestrian: {
        w.damage[1] += kMassPedestrian * std::abs(before.speed);
        auto& p = w.pedestrians[c.id];
        p.alive = false;
        p.respawn_ticks = kPedestrianRespawnTicks;
        break;
      }
    }
  }
  w.contacts = std::move(contacts);

  w.player_prev_velocity = before.velocity();
  ++w.tick;
  w.sim_time = time_at(w.tick);
  for (size_t i = 0; i < town.lights.size(); ++i) w.lights[i] = town.lights[i].state_at(w.sim_time);
  const OrientedRect fp = w.player.footprint();
  w.opposite_lane = overlap_fraction(fp, town, OverlapKind::OppositeLane);
  w.sidewalk = overlap_fraction(fp, town, OverlapKind::Sidewalk);
}

}  // namespace microcarla
