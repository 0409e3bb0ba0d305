#include "microcarla/sensors.hpp"

#include <algorithm>
#include <cmath>

#include "microcarla/weather.hpp"

namespace microcarla {

namespace {

constexpr double kMarkingHalfWidth = 0.075;
constexpr double kTieEps = 1e-9;

/// Bodies and markings that can be hit inside one area of interest.
class RayCaster {
 public:
  RayCaster(const WorldState& w, const TownMap& town, const Aabb& area) : town_(town) {
    std::vector<int> near;
    town.obstacles_near(area, near);
    for (int o : near) statics_.push_back(&town.obstacles[o]);
    for (const auto& n : w.npcs) {
      const Polygon poly = n.state.footprint().polygon();
      if (bounds_of(poly).overlaps(area)) vehicles_.push_back(poly);
    }
    for (const auto& p : w.pedestrians)
      if (p.alive && area.inflated(kPedestrianRadius).contains(p.position)) pedestrians_.push_back(p.position);
    for (size_t e = 0; e < town.edges().size(); e += 2) {
      const auto& road = town.roads[town.edges()[e].road_index];
      const auto& c = road.centerline;
      const double lo = town.trim_start(static_cast<int>(e));
      const double hi = town.edges()[e].length - town.trim_end(static_cast<int>(e));
      double s = 0.0;
      for (size_t k = 1; k < c.size(); ++k) {
        const double len = distance(c[k - 1], c[k]);
        const double a = std::max(s, lo), b = std::min(s + len, hi);
        if (b > a) {
          const Vec2 d = normalized(c[k] - c[k - 1]);
          const Vec2 pa = c[k - 1] + d * (a - s), pb = c[k - 1] + d * (b - s);
          const Vec2 n = perp(d) * kMarkingHalfWidth;
          Polygon band = ccw(Polygon{pa - n, pb - n, pb + n, pa + n});
          if (bounds_of(band).overlaps(area)) markings_.push_back(std::move(band));
        }
        s += len;
      }
    }
  }

  RayHit cast(Vec2 origin, double angle, double max_range) const {
    const Vec2 dir = unit_from_angle(angle);
    RayHit hit{SemanticClass::Other, max_range, false};
    // Candidates go in precedence order so exact ties keep the earlier class.
    auto consider = [&](std::optional<double> t, SemanticClass cls) {
      if (!t || *t > max_range) return;
      if (!hit.vertical || *t < hit.range - kTieEps) hit = {cls, *t, true};
    };
    for (const auto& p : pedestrians_) consider(ray_circle(origin, dir, p, kPedestrianRadius), SemanticClass::Pedestrian);
    for (const auto& v : vehicles_) consider(ray_convex(origin, dir, v), SemanticClass::Vehicle);
    for (const auto* o : statics_) consider(ray_convex(origin, dir, o->polygon), o->cls);

    double marking = max_range + 1.0;
    for (const auto& band : markings_) {
      const auto t = ray_convex(origin, dir, band);
      if (t) marking = std::min(marking, *t);
    }
    if (marking < hit.range && marking <= max_range) {
      return {SemanticClass::LaneMarking, hit.range, hit.vertical};
    }
    if (hit.vertical) return hit;
    const auto q = town_.classify(origin + dir * max_range, angle);
    switch (q.kind) {
      case RegionKind::OwnLane:
      case RegionKind::OppositeLane:
      case RegionKind::IntersectionBox:
        hit.cls = SemanticClass::Road;
        break;
      case RegionKind::Sidewalk:
        hit.cls = SemanticClass::Sidewalk;
        break;
      case RegionKind::OffMap:
        hit.cls = SemanticClass::Other;
        break;
    }
    return hit;
  }

 private:
  const TownMap& town_;
  std::vector<const Obstacle*> statics_;
  std::vector<Polygon> vehicles_;
  std::vector<Vec2> pedestrians_;
  std::vector<Polygon> markings_;
};

Aabb sector_bounds(Vec2 origin, double center, double fov, double range) {
  Aabb b;
  b.extend(origin);
  const int samples = 32;
  for (int i = 0; i <= samples; ++i) {
    const double a = center - fov / 2.0 + fov * i / samples;
    b.extend(origin + unit_from_angle(a) * range);
  }
  return b.inflated(0.5 + range * (1.0 - std::cos(fov / samples / 2.0)));
}

}  // namespace

RayHit cast_ray(const WorldState& world, const TownMap& town, Vec2 origin, double angle, double max_range) {
  Aabb area;
  area.extend(origin);
  area.extend(origin + unit_from_angle(angle) * max_range);
  return RayCaster(world, town, area.inflated(0.5)).cast(origin, angle, max_range);
}

Scan render(const WorldState& world, const TownMap& town, const CameraConfig& cfg, int camera_index) {
  const Pose& pose = world.player.pose;
  const Vec2 origin = pose.position + rotate(Vec2{cfg.x, cfg.y}, pose.heading);
  const double center = pose.heading + cfg.yaw;
  const RayCaster caster(world, town, sector_bounds(origin, center, cfg.fov, cfg.max_range));
  const double sigma = weather(world.weather).noise;
  Rng noise(mix_seed(mix_seed(world.seed_vehicles ^ static_cast<std::uint64_t>(world.tick)) +
                     static_cast<std::uint64_t>(camera_index)));

  Scan scan;
  scan.kind = cfg.kind;
  const int n = cfg.ray_count;
  if (cfg.kind == CameraKind::Depth) scan.depths.resize(n);
  else scan.classes.resize(n);
  for (int i = 0; i < n; ++i) {
    const double angle = center + cfg.fov * ((i + 0.5) / n - 0.5);
    const RayHit hit = caster.cast(origin, angle, cfg.max_range);
    switch (cfg.kind) {
      case CameraKind::Semantic:
        scan.classes[i] = static_cast<std::uint8_t>(hit.cls);
        break;
      case CameraKind::RgbProxy: {
        auto cls = static_cast<std::uint8_t>(hit.cls);
        if (sigma > 0.0 && noise.bernoulli(sigma)) cls = static_cast<std::uint8_t>(noise.index(kSemanticClassCount));
        scan.classes[i] = cls;
        break;
      }
      case CameraKind::Depth: {
        double r = hit.range;
        if (sigma > 0.0) r = std::clamp(r + sigma * noise.normal(), 1e-3, cfg.max_range);
        scan.depths[i] = static_cast<float>(r);
        break;
      }
    }
  }
  return scan;
}

Measurements assemble_measurements(const WorldState& w, const TownMap& town) {
  Measurements m;
  m.tick = w.tick;
  m.sim_time = w.sim_time;
  m.position = w.player.pose.position;
  m.orientation = unit_from_angle(w.player.pose.heading);
  m.speed_kmh = w.player.speed * 3.6;
  m.acceleration = w.tick == 0 ? Vec2{} : (w.player.velocity() - w.player_prev_velocity) / kDt;
  m.collision_car = w.damage[static_cast<int>(ContactKind::Car)];
  m.collision_pedestrian = w.damage[static_cast<int>(ContactKind::Pedestrian)];
  m.collision_static = w.damage[static_cast<int>(ContactKind::Static)];
  m.opposite_lane = w.opposite_lane;
  m.sidewalk = w.sidewalk;
  m.agents.reserve(w.npcs.size() + w.pedestrians.size());
  for (const auto& n : w.npcs)
    m.agents.push_back({AgentInfo::Kind::Vehicle, n.id, n.state.pose, vehicle::kLength, vehicle::kWidth, n.state.speed});
  for (const auto& p : w.pedestrians)
    if (p.alive)
      m.agents.push_back({AgentInfo::Kind::Pedestrian, p.id, {p.position, 0.0}, 2 * kPedestrianRadius,
                          2 * kPedestrianRadius, p.speed});
  for (size_t i = 0; i < town.lights.size(); ++i)
    m.lights.push_back({town.lights[i].id, town.lights[i].position, w.lights[i]});
  for (const auto& s : town.speed_limits) m.speed_limits.push_back({s.position, s.limit_kmh});
  return m;
}

SensorFrame make_frame(const WorldState& w, const TownMap& town) {
  SensorFrame f;
  f.tick = w.tick;
  f.measurements = assemble_measurements(w, town);
  for (size_t i = 0; i < w.cameras.size(); ++i) f.scans.push_back(render(w, town, w.cameras[i], static_cast<int>(i)));
  return f;
}

}  // namespace microcarla
