#include <gtest/gtest.h>

#include "microcarla/sensors.hpp"
#include "toy_town.hpp"

using namespace microcarla;

namespace {

const TownMap& town_a() {
  static const TownMap t = load_town(resolve_town_path("a"));
  return t;
}

/// Independent nearest-hit oracle: intersects the ray with every polygon
/// edge and every pedestrian circle in the world.
double brute_force_range(const WorldState& w, const TownMap& t, Vec2 o, double angle, double max_range) {
  const Vec2 d = unit_from_angle(angle);
  double best = max_range;
  auto edges = [&](const Polygon& poly) {
    for (size_t i = 0; i < poly.size(); ++i) {
      const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
      const Vec2 e = b - a;
      const double den = d.x * e.y - d.y * e.x;
      if (std::abs(den) < 1e-15) continue;
      const Vec2 w0 = a - o;
      const double s = (w0.x * e.y - w0.y * e.x) / den;
      const double u = (w0.x * d.y - w0.y * d.x) / den;
      if (s >= 0 && u >= 0 && u <= 1) best = std::min(best, s);
    }
  };
  for (const auto& ob : t.obstacles) edges(ob.polygon);
  for (const auto& n : w.npcs) edges(n.state.footprint().polygon());
  for (const auto& p : w.pedestrians) {
    if (!p.alive) continue;
    const Vec2 m = o - p.position;
    const double b = m.x * d.x + m.y * d.y;
    const double c = m.x * m.x + m.y * m.y - kPedestrianRadius * kPedestrianRadius;
    const double disc = b * b - c;
    if (disc >= 0) {
      const double s = -b - std::sqrt(disc);
      if (s >= 0) best = std::min(best, s);
    }
  }
  return best;
}

TownMap building_town() {
  TownMap t = toy::make_town({{0, 0}, {200, 0}}, {{0, 1}}, {{{20, -1.75}, 0.0}});
  t.obstacles.push_back({SemanticClass::Building, {{75, -10}, {90, -10}, {90, 10}, {75, 10}}});
  t.finalize();
  return t;
}

}  // namespace

TEST(Sensors, RayHitsVehicleAhead) {
  const TownMap t = toy::make_town({{0, 0}, {200, 0}}, {{0, 1}}, {{{20, -1.75}, 0.0}});
  WorldState w = apply_meta(t, MetaCommand{});
  Npc npc;
  npc.state.pose = {{20.0 + 2.0 + 10.0 + 2.0, -1.75}, 0.0};
  w.npcs.push_back(npc);
  const RayHit h = cast_ray(w, t, {22.0, -1.75}, 0.0, 50.0);
  EXPECT_EQ(h.cls, SemanticClass::Vehicle);
  EXPECT_NEAR(h.range, 10.0, 1e-9);
}

TEST(Sensors, EmptySpaceIsOther) {
  const TownMap t = toy::make_town({{0, 0}, {200, 0}}, {{0, 1}}, {{{20, -1.75}, 0.0}});
  WorldState w = apply_meta(t, MetaCommand{});
  const RayHit h = cast_ray(w, t, {50.0, -1.75}, -kPi / 2, 50.0);
  EXPECT_EQ(h.cls, SemanticClass::Other);
  EXPECT_DOUBLE_EQ(h.range, 50.0);
  CameraConfig cfg;
  cfg.kind = CameraKind::Depth;
  cfg.ray_count = 1;
  cfg.yaw = -kPi / 2;
  cfg.x = 0.0;
  w.player.pose = {{50.0, -1.75}, 0.0};
  EXPECT_FLOAT_EQ(render(w, t, cfg).depths[0], 50.0f);
}

TEST(Sensors, PedestrianOccludesBuilding) {
  const TownMap t = building_town();
  WorldState w = apply_meta(t, MetaCommand{});
  PedestrianState p;
  p.position = {60.0, -1.75};
  w.pedestrians.push_back(p);
  const Vec2 o{55.0 - kPedestrianRadius, -1.75};
  const RayHit h = cast_ray(w, t, o, 0.0, 50.0);
  EXPECT_EQ(h.cls, SemanticClass::Pedestrian);
  EXPECT_NEAR(h.range, 5.0, 1e-9);
  EXPECT_NEAR(h.range, brute_force_range(w, t, o, 0.0, 50.0), 1e-9);
  w.pedestrians.clear();
  const RayHit b = cast_ray(w, t, o, 0.0, 50.0);
  EXPECT_EQ(b.cls, SemanticClass::Building);
  EXPECT_NEAR(b.range, 75.0 - o.x, 1e-9);
}

TEST(Sensors, LaneMarkingBeforeHit) {
  const TownMap t = building_town();
  WorldState w = apply_meta(t, MetaCommand{});
  // Looking across the road centreline from the eastbound lane.
  const RayHit h = cast_ray(w, t, {40.0, -1.75}, kPi / 2, 50.0);
  EXPECT_EQ(h.cls, SemanticClass::LaneMarking);
}

TEST(Sensors, DepthMatchesBruteForce) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.num_vehicles = 30;
  meta.num_pedestrians = 50;
  meta.cameras = default_camera_suite();
  for (int spawn : {0, 40, 120, 300}) {
    meta.player_spawn_index = spawn;
    WorldState w = apply_meta(t, meta);
    for (int k = 0; k < 40; ++k) step(w, t, Control{0.0, 0.3, 0.0, false, false});
    const auto& cfg = meta.cameras[1];
    const Scan depth = render(w, t, cfg, 1);
    const Vec2 o = w.player.pose.position + rotate(Vec2{cfg.x, cfg.y}, w.player.pose.heading);
    for (int i = 0; i < cfg.ray_count; ++i) {
      const double angle = w.player.pose.heading + cfg.yaw + cfg.fov * ((i + 0.5) / cfg.ray_count - 0.5);
      EXPECT_NEAR(depth.depths[i], brute_force_range(w, t, o, angle, cfg.max_range), 1e-4) << i;
    }
  }
}

TEST(Sensors, PaletteAndDeterminism) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.num_vehicles = 20;
  meta.num_pedestrians = 40;
  meta.weather = 11;
  meta.cameras = default_camera_suite();
  CameraConfig rgb;
  rgb.kind = CameraKind::RgbProxy;
  rgb.fov = 2 * kPi;
  meta.cameras.push_back(rgb);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    meta.player_spawn_index = static_cast<int>(rng.index(t.spawns.player.size()));
    WorldState w = apply_meta(t, meta);
    for (int k = 0; k < 20; ++k) step(w, t, Control{rng.uniform(-1, 1), rng.uniform(), 0.0, false, false});
    const SensorFrame f = make_frame(w, t);
    EXPECT_EQ(f, make_frame(w, t));
    for (const auto& s : f.scans) {
      for (auto c : s.classes) EXPECT_LT(c, kSemanticClassCount);
      for (auto d : s.depths) {
        EXPECT_GT(d, 0.0f);
        EXPECT_LE(d, 50.0f);
      }
    }
  }
}

TEST(Sensors, Measurements) {
  const auto& t = town_a();
  WorldState w = apply_meta(t, MetaCommand{});
  auto m = assemble_measurements(w, t);
  EXPECT_EQ(m.speed_kmh, 0.0);
  EXPECT_EQ(m.acceleration, (Vec2{0, 0}));
  EXPECT_EQ(m.total_damage(), 0.0);
  EXPECT_EQ(m.lights.size(), t.lights.size());
  step(w, t, Control{0.0, 1.0, 0.0, false, false});
  m = assemble_measurements(w, t);
  EXPECT_NEAR(m.speed_kmh, 1.44, 1e-12);
  EXPECT_NEAR(norm(m.acceleration), 4.0, 1e-9);

  const TownMap toy = toy::make_town({{0, 0}, {200, 0}}, {{0, 1}}, {{{20, -1.75}, 0.0}});
  TownMap lit = toy;
  lit.lights.push_back({0, {200, -5}, 1, 0});
  lit.finalize();
  MetaCommand meta;
  meta.num_vehicles = 1;
  lit.spawns.vehicles.push_back({{150, -1.75}, 0.0});
  lit.finalize();
  w = apply_meta(lit, meta);
  m = assemble_measurements(w, lit);
  EXPECT_EQ(m.agents.size(), 1u);
  EXPECT_EQ(m.lights.size(), 1u);
}
