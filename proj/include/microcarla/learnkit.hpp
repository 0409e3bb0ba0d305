#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microcarla/agent.hpp"
#include "microcarla/codec.hpp"
#include "microcarla/env.hpp"
#include "microcarla/rng.hpp"

namespace microcarla {

// --- steering perturbation ------------------------------------------------

struct Impulse {
  std::int64_t start_tick = 0;
  double t0 = 0.0;   // s
  double tau = 1.0;  // s, > 0
  int sign = 1;
  double gamma = 0.15;
  bool operator==(const Impulse&) const = default;
};

/// Triangular offset sign*gamma*max(0, 1 - |2(t - t0)/tau - 1|).
double s_perturb(double t, const Impulse& imp);
/// Same triangle addressed by time since t0. Exact at phase tau/2.
double s_perturb_phase(double phase, const Impulse& imp);

struct PerturbationConfig {
  bool enabled = true;
  double p = 0.1;  // impulse probability per whole second
  double duration_min = 0.5;
  double duration_max = 2.0;
  double intensity = 0.15;
  std::uint64_t seed = 1;
  bool operator==(const PerturbationConfig&) const = default;
};
nlohmann::json to_json(const PerturbationConfig& c);
PerturbationConfig perturbation_from_json(const nlohmann::json& j);

/// Draws impulses at whole-second boundaries and adds the active ones to
/// the expert's steer.
class PerturbationStream {
 public:
  explicit PerturbationStream(PerturbationConfig cfg = {}) : cfg_(cfg), rng_(mix_seed(cfg.seed)) {}
  /// Call once per tick in increasing order. Returns the clamped steer.
  double apply(std::int64_t tick, double expert_steer);
  /// Unclamped sum of the impulses active at the last applied tick.
  double last_offset() const { return offset_; }
  const std::vector<Impulse>& impulses() const { return log_; }

 private:
  PerturbationConfig cfg_;
  Rng rng_;
  std::int64_t last_tick_ = -1;
  std::vector<Impulse> log_;
  std::vector<size_t> active_;
  double offset_ = 0.0;
};

// --- reward -----------------------------------------------------------------

struct RewardInput {
  std::int64_t tick = 0;
  double distance_km = 0.0;  // route distance to the goal
  double speed_kmh = 0.0;
  double damage = 0.0;  // sum of the three collision accumulators
  double sidewalk = 0.0;
  double opposite = 0.0;
  bool operator==(const RewardInput&) const = default;
};
RewardInput reward_input(const Measurements& m, double remaining_km);

struct RewardBreakdown {
  double distance = 0.0, speed = 0.0, collision = 0.0, sidewalk = 0.0, opposite = 0.0;
  double total = 0.0;
};

class RewardError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The five weighted deltas, no tick check.
RewardBreakdown reward_terms(const RewardInput& prev, const RewardInput& cur);
/// Throws RewardError unless cur.tick == prev.tick + 1.
RewardBreakdown reward(const RewardInput& prev, const RewardInput& cur);

// --- demonstrations ---------------------------------------------------------

struct DemoHeader {
  std::string version = kProtocolVersion;
  std::string town;
  std::string expert;  // "pilot", "human", ...
  MetaCommand meta;
  PerturbationConfig perturbation;
  bool operator==(const DemoHeader&) const = default;
};

struct DemoSample {
  std::int64_t tick = 0;
  HighLevelCommand command = HighLevelCommand::FollowLane;
  Control action;   // expert intent
  Control applied;  // what was sent to the world
  double speed_kmh = 0.0;
  SensorFrame frame;  // observation the expert acted on
  bool operator==(const DemoSample&) const = default;
};

struct DemoEpisode {
  DemoHeader header;
  std::vector<DemoSample> samples;
  bool operator==(const DemoEpisode&) const = default;
};

class DemoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const DemoHeader& h);
DemoHeader demo_header_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DemoSample& s);
DemoSample demo_sample_from_json(const nlohmann::json& j);

/// Appends JSON lines; each line is flushed whole so a dropped session
/// leaves a file that is valid up to the last sample.
class DemoWriter {
 public:
  explicit DemoWriter(const std::filesystem::path& path);
  /// Starts an episode. A file may hold several.
  void begin(const DemoHeader& header);
  void write(const DemoSample& sample);
  std::int64_t samples() const { return samples_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void line(const nlohmann::json& j);
  std::filesystem::path path_;
  std::ofstream out_;
  bool open_episode_ = false;
  std::int64_t samples_ = 0;
};

/// Parses a demo file. A trailing line cut short by a dropped session is
/// ignored; anything else malformed throws DemoError.
std::vector<DemoEpisode> read_demo(const std::filesystem::path& path);

struct RecordOptions {
  MetaCommand meta;
  std::int64_t ticks = 600;
  PerturbationConfig perturbation;
  std::uint64_t goal_seed = 1;  // picks successive goals among the player spawns
};

struct RecordStats {
  std::int64_t samples = 0;
  int goals_reached = 0;
  std::vector<Impulse> impulses;
};

/// Drives `expert` for `ticks` ticks with planner commands, writing one
/// sample per tick. A new goal is drawn whenever one is reached.
RecordStats record_demo(Env& env, Agent& expert, const RecordOptions& opts, DemoWriter& out);

struct ReplayResult {
  bool ok = true;
  std::int64_t ticks = 0;
  std::int64_t divergence_tick = -1;
  std::string detail;
};

/// Feeds the stored applied actions back and compares every frame.
ReplayResult replay_demo(Env& env, const DemoEpisode& episode);

}  // namespace microcarla
