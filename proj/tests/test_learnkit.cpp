#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "microcarla/learnkit.hpp"
#include "microcarla/pilot.hpp"

using namespace microcarla;

namespace {

const TownMap& town_a() {
  static const TownMap t = load_town(resolve_town_path("a"));
  return t;
}

// Triangle written exactly as stated, independent of the library form.
double triangle(double t, double t0, double tau, int sign, double gamma) {
  return sign * gamma * std::max(0.0, 1.0 - std::abs(2.0 * (t - t0) / tau - 1.0));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("microcarla_" + name);
}

/// Remembers the commands it was driven with.
class SpyPilot : public Agent {
 public:
  std::string name() const override { return "pilot"; }
  void reset(const TownMap& t) override { inner_.reset(t); }
  Control act(const SensorFrame& f, HighLevelCommand c) override {
    seen.push_back(c);
    return inner_.act(f, c);
  }
  std::vector<HighLevelCommand> seen;

 private:
  Pilot inner_;
};

}  // namespace

TEST(Perturb, Examples) {
  const Impulse up{0, 2.0, 1.3, 1, 0.15};
  EXPECT_EQ(s_perturb(2.0, up), 0.0);
  EXPECT_EQ(s_perturb_phase(up.tau / 2.0, up), 0.15);
  EXPECT_NEAR(s_perturb(2.0 + 1.3 / 2.0, up), 0.15, 1e-12);
  const Impulse down{0, 2.0, 1.3, -1, 0.15};
  EXPECT_NEAR(s_perturb(2.0 + 1.3 / 4.0, down), -0.075, 1e-12);
  EXPECT_EQ(s_perturb(1.9, up), 0.0);
  EXPECT_EQ(s_perturb(3.31, up), 0.0);
}

TEST(Perturb, MatchesFormulaContinuousAndBounded) {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const Impulse imp{0, rng.uniform(0, 100), rng.uniform(0.5, 2.0), rng.sign(), 0.15};
    double prev = s_perturb(imp.t0 - 0.5, imp);
    const double h = 1e-3;
    for (double t = imp.t0 - 0.5; t < imp.t0 + imp.tau + 0.5; t += h) {
      const double v = s_perturb(t, imp);
      EXPECT_NEAR(v, triangle(t, imp.t0, imp.tau, imp.sign, imp.gamma), 1e-12);
      EXPECT_LE(std::abs(v), 0.15);
      EXPECT_LE(std::abs(v - prev), 2.0 * 0.15 / imp.tau * h + 1e-9);
      prev = v;
    }
  }
}

TEST(Perturb, NoImpulsesMeansExpertSteer) {
  PerturbationConfig cfg;
  cfg.p = 0.0;
  PerturbationStream s(cfg);
  Rng rng(5);
  for (int t = 0; t < 5000; ++t) {
    const double e = rng.uniform(-1, 1);
    EXPECT_EQ(s.apply(t, e), e);
  }
  EXPECT_TRUE(s.impulses().empty());
}

TEST(Perturb, SingleImpulsesTraceTheTriangle) {
  PerturbationConfig cfg;
  cfg.p = 1.0;
  cfg.duration_min = 0.5;
  cfg.duration_max = 1.0;  // never overlapping
  PerturbationStream s(cfg);
  for (int t = 0; t < 2000; ++t) {
    const double applied = s.apply(t, 0.0);
    const Impulse& imp = s.impulses().back();
    EXPECT_EQ(imp.start_tick, t - t % 10);
    EXPECT_NEAR(applied, triangle(t * kDt, imp.start_tick * kDt, imp.tau, imp.sign, 0.15), 1e-12) << t;
    EXPECT_LE(std::abs(applied), 0.15);
  }
  for (const auto& imp : s.impulses()) EXPECT_EQ(std::abs(s_perturb_phase(imp.tau / 2.0, imp)), 0.15);
}

TEST(Perturb, OverlapsSumAndClamp) {
  PerturbationConfig cfg;
  cfg.p = 1.0;
  cfg.duration_min = cfg.duration_max = 2.0;
  PerturbationStream s(cfg);
  for (int t = 0; t < 400; ++t) {
    const double applied = s.apply(t, 0.95);
    double sum = 0.0;
    for (const auto& imp : s.impulses()) sum += triangle(t * kDt, imp.t0, imp.tau, imp.sign, 0.15);
    EXPECT_NEAR(applied, std::clamp(0.95 + sum, -1.0, 1.0), 1e-12);
  }
  EXPECT_THROW(s.apply(3, 0.0), std::logic_error);
}

TEST(Perturb, ImpulseRate) {
  // 10,000 s at 10 Hz; Binomial(10000, 0.1) has sd 30.
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    PerturbationConfig cfg;
    cfg.seed = seed;
    PerturbationStream s(cfg);
    for (int t = 0; t < 100000; ++t) s.apply(t, 0.0);
    EXPECT_NEAR(static_cast<double>(s.impulses().size()), 1000.0, 90.0);
    for (const auto& imp : s.impulses()) {
      EXPECT_GE(imp.tau, 0.5);
      EXPECT_LE(imp.tau, 2.0);
    }
  }
}

TEST(Reward, Examples) {
  RewardInput a{10, 0.5, 20.0, 0.0, 0.0, 0.0};
  RewardInput b = a;
  b.tick = 11;
  EXPECT_EQ(reward(a, b).total, 0.0);

  b.distance_km = 0.499;
  EXPECT_NEAR(reward(a, b).total, 1.0, 1e-9);

  b = a;
  b.tick = 11;
  b.speed_kmh = 30.0;
  b.sidewalk = 1.0;
  EXPECT_NEAR(reward(a, b).total, 0.05 * 10 - 2.0 * 1.0, 1e-12);

  b = a;
  b.tick = 11;
  b.damage = 100000.0;
  EXPECT_NEAR(reward(a, b).total, -2.0, 1e-12);

  b.tick = 12;
  EXPECT_THROW(reward(a, b), RewardError);
  b.tick = 10;
  EXPECT_THROW(reward(a, b), RewardError);
}

TEST(Reward, Antisymmetric) {
  Rng rng(9);
  for (int k = 0; k < 1000; ++k) {
    RewardInput a{0, rng.uniform(0, 2), rng.uniform(0, 60), rng.uniform(0, 1e5), rng.uniform(), rng.uniform()};
    RewardInput b{1, rng.uniform(0, 2), rng.uniform(0, 60), rng.uniform(0, 1e5), rng.uniform(), rng.uniform()};
    const auto f = reward_terms(a, b), r = reward_terms(b, a);
    EXPECT_EQ(f.distance, -r.distance);
    EXPECT_EQ(f.speed, -r.speed);
    EXPECT_EQ(f.collision, -r.collision);
    EXPECT_EQ(f.sidewalk, -r.sidewalk);
    EXPECT_EQ(f.opposite, -r.opposite);
    EXPECT_EQ(f.total, -r.total);
    EXPECT_EQ(f.total, f.distance + f.speed + f.collision + f.sidewalk + f.opposite);
  }
}

TEST(Demo, RecordPerturbReplay) {
  const auto path = temp_file("demo_record.jsonl");
  DirectEnv env(town_a());
  SpyPilot expert;
  RecordOptions opts;
  opts.ticks = 100;
  opts.meta.cameras = default_camera_suite();
  opts.meta.num_vehicles = 5;
  opts.meta.num_pedestrians = 5;
  opts.perturbation.p = 0.5;  // make sure some ticks are perturbed
  RecordStats stats;
  {
    DemoWriter out(path);
    stats = record_demo(env, expert, opts, out);
  }
  ASSERT_EQ(stats.samples, 100);
  ASSERT_FALSE(stats.impulses.empty());

  const auto episodes = read_demo(path);
  ASSERT_EQ(episodes.size(), 1u);
  const auto& ep = episodes[0];
  EXPECT_EQ(ep.header.town, town_a().id);
  EXPECT_EQ(ep.header.meta, opts.meta);
  EXPECT_EQ(ep.header.perturbation, opts.perturbation);
  ASSERT_EQ(ep.samples.size(), 100u);
  ASSERT_EQ(expert.seen.size(), 100u);

  int perturbed = 0;
  for (size_t i = 0; i < ep.samples.size(); ++i) {
    const auto& s = ep.samples[i];
    EXPECT_EQ(s.tick, static_cast<std::int64_t>(i));
    EXPECT_EQ(s.frame.tick, s.tick);
    EXPECT_EQ(s.command, expert.seen[i]);
    EXPECT_NE(s.command, HighLevelCommand::GoalReached);
    EXPECT_EQ(s.speed_kmh, s.frame.measurements.speed_kmh);
    // Offset from the impulse log, evaluated independently.
    double offset = 0.0;
    for (const auto& imp : stats.impulses) offset += triangle(s.tick * kDt, imp.start_tick * kDt, imp.tau, imp.sign, 0.15);
    const double expected = std::clamp(s.action.steer + offset, -1.0, 1.0);
    EXPECT_NEAR(s.applied.steer, expected, 1e-12);
    if (std::abs(offset) < 1e-15) {
      EXPECT_EQ(s.applied, s.action) << s.tick;
    } else if (expected != s.action.steer) {
      EXPECT_NE(s.applied, s.action) << s.tick;
      ++perturbed;
    }
    EXPECT_EQ(s.applied.throttle, s.action.throttle);
    EXPECT_EQ(s.applied.brake, s.action.brake);
  }
  EXPECT_GT(perturbed, 0);

  DirectEnv again(town_a());
  const auto r = replay_demo(again, ep);
  EXPECT_TRUE(r.ok) << r.detail << " at " << r.divergence_tick;
  EXPECT_EQ(r.ticks, 100);

  auto tampered = ep;
  tampered.samples[50].applied.steer = -tampered.samples[50].applied.steer + 0.5;
  const auto bad = replay_demo(again, tampered);
  EXPECT_FALSE(bad.ok);
  EXPECT_EQ(bad.divergence_tick, 51);
  EXPECT_EQ(bad.detail.rfind("measurements.", 0), 0u) << bad.detail;
  std::filesystem::remove(path);
}

TEST(Demo, RoundTripAndTruncation) {
  DemoHeader h;
  h.town = "b";
  h.expert = "human";
  h.meta.num_vehicles = 3;
  h.meta.seed_vehicles = 0xffffffffffffffffULL;
  h.meta.cameras = default_camera_suite();
  h.perturbation.enabled = false;

  DirectEnv env(town_a());
  MetaCommand m;
  m.cameras = default_camera_suite();
  m.num_pedestrians = 4;
  std::vector<DemoSample> samples;
  SensorFrame f = env.reset(m);
  for (int i = 0; i < 12; ++i) {
    DemoSample s;
    s.tick = f.tick;
    s.command = static_cast<HighLevelCommand>(i % 4);
    s.action = {0.1 * (i % 3) - 0.1, 0.3, 0.0, false, i == 5};
    s.applied = s.action;
    s.applied.steer = 1.0 / 3.0;
    s.speed_kmh = f.measurements.speed_kmh;
    s.frame = f;
    samples.push_back(s);
    f = env.step(s.applied);
  }

  const auto path = temp_file("demo_roundtrip.jsonl");
  {
    DemoWriter w(path);
    w.begin(h);
    for (const auto& s : samples) w.write(s);
    w.begin(h);
    w.write(samples[0]);
    EXPECT_EQ(w.samples(), 13);
  }
  auto eps = read_demo(path);
  ASSERT_EQ(eps.size(), 2u);
  EXPECT_EQ(eps[0].header, h);
  EXPECT_EQ(eps[0].samples, samples);
  EXPECT_EQ(eps[1].samples.size(), 1u);

  // A dropped session leaves a partial last line; it is ignored.
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"type":"sample","tick":1,"comm)";
  }
  eps = read_demo(path);
  EXPECT_EQ(eps[1].samples.size(), 1u);

  {
    std::ofstream out(path);
    out << nlohmann::json(to_json(samples[0])).dump() << "\n";
  }
  EXPECT_THROW(read_demo(path), DemoError);

  {
    DemoWriter w(path);
    DemoSample goal = samples[0];
    goal.command = HighLevelCommand::GoalReached;
    EXPECT_THROW(w.write(goal), DemoError);  // no header yet
    w.begin(h);
    EXPECT_THROW(w.write(goal), DemoError);
  }
  EXPECT_THROW(DemoWriter("/nonexistent_dir/x/demo.jsonl"), DemoError);
  std::filesystem::remove(path);
}
