#include <gtest/gtest.h>

#include "microcarla/dynamics.hpp"
#include "microcarla/weather.hpp"
#include "toy_town.hpp"

using namespace microcarla;

namespace {

const TownMap& town_a() {
  static const TownMap t = load_town(resolve_town_path("a"));
  return t;
}

/// Straight 200 m road with a pole on the eastbound lane at x = 99.8.
TownMap pole_town() {
  TownMap t = toy::make_town({{0, 0}, {200, 0}}, {{0, 1}}, {{{20, -1.75}, 0.0}});
  t.obstacles.push_back({SemanticClass::Pole, {{99.8, -1.9}, {100.1, -1.9}, {100.1, -1.6}, {99.8, -1.6}}});
  t.finalize();
  return t;
}

}  // namespace

TEST(Dynamics, ZeroControlAtRest) {
  const auto& t = town_a();
  WorldState w = apply_meta(t, MetaCommand{});
  const Pose p = w.player.pose;
  step(w, t, Control{});
  EXPECT_EQ(w.player.pose, p);
  EXPECT_EQ(w.tick, 1);
  EXPECT_DOUBLE_EQ(w.sim_time, 0.1);
}

TEST(Dynamics, ThrottleFromRest) {
  VehicleState v;
  const auto out = integrate_vehicle(v, Control{0.0, 1.0, 0.0, false, false}, 1.0);
  EXPECT_DOUBLE_EQ(out.speed, 0.4);
  const auto wet = integrate_vehicle(v, Control{0.0, 1.0, 0.0, false, false}, weather(11).friction);
  EXPECT_NEAR(wet.speed, 0.28, 1e-12);
}

TEST(Dynamics, CoastingDecaysMonotonically) {
  VehicleState v;
  v.speed = 10.0;
  double prev = v.speed;
  int ticks = 0;
  while (v.speed > 0.0 && ticks < 1000) {
    v = integrate_vehicle(v, Control{}, 1.0);
    EXPECT_LT(v.speed, prev);
    EXPECT_GE(v.speed, 0.0);
    prev = v.speed;
    ++ticks;
  }
  EXPECT_EQ(v.speed, 0.0);
  EXPECT_EQ(ticks, 200);  // 10 m/s at 0.5 m/s^2
}

TEST(Dynamics, SteeringSign) {
  VehicleState v;
  v.speed = 5.0;
  const auto right = integrate_vehicle(v, Control{1.0, 0.0, 0.0, false, false}, 1.0);
  EXPECT_LT(right.pose.heading, 0.0);
  const auto left = integrate_vehicle(v, Control{-1.0, 0.0, 0.0, false, false}, 1.0);
  EXPECT_GT(left.pose.heading, 0.0);
}

TEST(Dynamics, ReverseAndBrakeNeverCrossZero) {
  VehicleState v;
  auto r = integrate_vehicle(v, Control{0.0, 1.0, 0.0, false, true}, 1.0);
  EXPECT_DOUBLE_EQ(r.speed, -0.4);
  v.speed = 0.3;
  auto b = integrate_vehicle(v, Control{0.0, 0.0, 1.0, false, false}, 1.0);
  EXPECT_EQ(b.speed, 0.0);
}

TEST(Dynamics, StaticCollisionDamage) {
  const TownMap t = pole_town();
  WorldState w = apply_meta(t, MetaCommand{});
  w.player.pose = {{97.5, -1.75}, 0.0};
  w.player.speed = 5.0;
  step(w, t, Control{});
  EXPECT_DOUBLE_EQ(w.damage[2], 5000.0);
  EXPECT_EQ(w.player.speed, 0.0);
  EXPECT_EQ(w.player.pose.position, (Vec2{97.5, -1.75}));
  const double before = w.damage[2];
  step(w, t, Control{});
  EXPECT_EQ(w.damage[2], before);
}

TEST(Dynamics, PedestrianContactAndRespawn) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.num_pedestrians = 1;
  WorldState w = apply_meta(t, meta);
  auto& ped = w.pedestrians[0];
  ped.speed = 0.0;
  ped.position = w.player.pose.position + unit_from_angle(w.player.pose.heading) * 2.3;
  ped.waypoint = t.nav_grid.cell_of(ped.position);
  w.player.speed = 1.0;
  step(w, t, Control{});
  EXPECT_FALSE(w.pedestrians[0].alive);
  EXPECT_DOUBLE_EQ(w.damage[1], 80.0);
  EXPECT_DOUBLE_EQ(w.pedestrians[0].respawn_timer(), 5.0);
  for (int i = 0; i < 49; ++i) {
    step(w, t, Control{0.0, 0.0, 1.0, false, false});
    EXPECT_FALSE(w.pedestrians[0].alive) << i;
  }
  step(w, t, Control{0.0, 0.0, 1.0, false, false});
  EXPECT_TRUE(w.pedestrians[0].alive);
  EXPECT_TRUE(t.nav_grid.passable_at(w.pedestrians[0].position));
}

TEST(Dynamics, OverlapFractionExamples) {
  const auto& t = town_a();
  const Pose p = toy::lane_pose(t, 0, 100.0);
  OrientedRect fp{p.position, p.heading};
  EXPECT_EQ(overlap_fraction(fp, t, OverlapKind::OppositeLane), 0.0);
  EXPECT_EQ(overlap_fraction(fp, t, OverlapKind::Sidewalk), 0.0);
  OrientedRect walk{{100.0, -5.0}, 0.0};
  EXPECT_NEAR(overlap_fraction(walk, t, OverlapKind::Sidewalk), 1.0, 1e-12);
  OrientedRect edge{{100.0, -3.5}, 0.0};
  EXPECT_NEAR(overlap_fraction(edge, t, OverlapKind::Sidewalk), 0.5, 1e-6);
  OrientedRect wrong{{100.0, 1.75}, 0.0};
  EXPECT_NEAR(overlap_fraction(wrong, t, OverlapKind::OppositeLane), 1.0, 1e-12);
  wrong.heading = kPi;
  EXPECT_NEAR(overlap_fraction(wrong, t, OverlapKind::OppositeLane), 0.0, 1e-12);
}

TEST(Dynamics, OverlapAgreesWithPointSampling) {
  const auto& t = town_a();
  Rng rng(11);
  const Aabb b = t.bounds();
  for (int trial = 0; trial < 60; ++trial) {
    // Bias samples towards roads so both kinds show up.
    const auto& lr = t.lane_regions()[rng.index(t.lane_regions().size())];
    const Vec2 c = lr.polygon[0] + (lr.polygon[2] - lr.polygon[0]) * rng.uniform() + Vec2{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    (void)b;
    const OrientedRect fp{c, rng.uniform(-kPi, kPi)};
    const int n = 200;
    int opp = 0, walk = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Vec2 p = fp.to_world({((i + 0.5) / n - 0.5) * fp.length, ((j + 0.5) / n - 0.5) * fp.width});
        const auto k = t.classify(p, fp.heading).kind;
        opp += k == RegionKind::OppositeLane;
        walk += k == RegionKind::Sidewalk;
      }
    EXPECT_NEAR(overlap_fraction(fp, t, OverlapKind::OppositeLane), double(opp) / (n * n), 5e-3);
    EXPECT_NEAR(overlap_fraction(fp, t, OverlapKind::Sidewalk), double(walk) / (n * n), 5e-3);
  }
}

TEST(Dynamics, ApplyMetaValidation) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.player_spawn_index = 9999;
  try {
    apply_meta(t, meta);
    FAIL();
  } catch (const WorldError& e) {
    EXPECT_EQ(e.kind(), WorldError::Kind::SpawnIndex);
  }
  meta = MetaCommand{};
  meta.num_vehicles = 100000;
  EXPECT_THROW(apply_meta(t, meta), WorldError);
  meta = MetaCommand{};
  const auto w = apply_meta(t, meta);
  EXPECT_TRUE(w.npcs.empty());
  EXPECT_TRUE(w.pedestrians.empty());
  EXPECT_EQ(apply_meta(t, meta), w);
}

TEST(Dynamics, DeterministicReplay) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.num_vehicles = 30;
  meta.num_pedestrians = 50;
  meta.seed_vehicles = 3;
  meta.seed_pedestrians = 4;
  WorldState a = apply_meta(t, meta), b = apply_meta(t, meta);
  Rng ctl(9);
  for (int i = 0; i < 300; ++i) {
    const Control c{ctl.uniform(-0.2, 0.2), ctl.uniform(0, 0.6), 0.0, false, false};
    step(a, t, c);
    step(b, t, c);
    ASSERT_EQ(a, b) << "tick " << i;
  }
  meta.seed_vehicles = 5;
  WorldState c = apply_meta(t, meta);
  EXPECT_NE(c.npcs, a.npcs);
}

TEST(Dynamics, TrafficFuzzInvariants) {
  const auto& t = town_a();
  MetaCommand meta;
  meta.num_vehicles = 30;
  meta.num_pedestrians = 50;
  meta.seed_vehicles = 17;
  meta.seed_pedestrians = 18;
  WorldState w = apply_meta(t, meta);
  std::vector<bool> in_box(w.npcs.size());
  auto front_box = [&](const Npc& n) {
    const Vec2 f = n.state.pose.position + unit_from_angle(n.state.pose.heading) * (vehicle::kLength / 2);
    return t.box_at(f).has_value();
  };
  for (size_t i = 0; i < w.npcs.size(); ++i) in_box[i] = front_box(w.npcs[i]);
  std::array<double, 3> damage = w.damage;
  double travelled = 0.0;
  for (int tick = 0; tick < 10000; ++tick) {
    std::vector<Vec2> before;
    for (const auto& n : w.npcs) before.push_back(n.state.pose.position);
    std::vector<const TrafficLight*> lights;
    std::vector<LightState> states;
    for (const auto& n : w.npcs) {
      lights.push_back(light_for_edge(t, n.brain.edge));
      states.push_back(lights.back() ? lights.back()->state_at(w.sim_time) : LightState::Green);
    }
    // The player sits parked; the rest of town moves.
    step(w, t, Control{0.0, 0.0, 1.0, false, false});
    for (size_t i = 0; i < w.npcs.size(); ++i) {
      const bool now = front_box(w.npcs[i]);
      if (now && !in_box[i] && lights[i]) {
        EXPECT_NE(states[i], LightState::Red) << "npc " << i << " entered on red at tick " << tick;
      }
      in_box[i] = now;
      travelled += distance(before[i], w.npcs[i].state.pose.position);
    }
    for (int k = 0; k < 3; ++k) EXPECT_GE(w.damage[k], damage[k]);
    damage = w.damage;
    EXPECT_GE(w.opposite_lane, 0.0);
    EXPECT_LE(w.opposite_lane, 1.0);
    for (const auto& p : w.pedestrians)
      if (p.alive) ASSERT_TRUE(t.nav_grid.passable_at(p.position)) << "pedestrian " << p.id;
  }
  // Traffic keeps flowing: on average well over 1 km per vehicle.
  EXPECT_GT(travelled / w.npcs.size(), 1000.0);
}
