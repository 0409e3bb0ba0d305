#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microcarla/agent.hpp"
#include "microcarla/env.hpp"
#include "microcarla/learnkit.hpp"
#include "microcarla/planner.hpp"
#include "microcarla/weather.hpp"

namespace microcarla {

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind : std::uint8_t { Straight, OneTurn, Navigation, NavDynamic };
inline constexpr std::array<TaskKind, 4> kAllTasks{TaskKind::Straight, TaskKind::OneTurn, TaskKind::Navigation,
                                                   TaskKind::NavDynamic};
std::string to_string(TaskKind k);
/// Accepts "straight", "one_turn"/"one-turn", "navigation", "nav_dynamic"/"nav-dynamic".
std::optional<TaskKind> task_from_string(const std::string& s);

/// Evaluation columns: which town and which weather set.
enum class Condition : std::uint8_t { Training, NewTown, NewWeather, NewTownWeather };
inline constexpr std::array<Condition, 4> kAllConditions{Condition::Training, Condition::NewTown,
                                                         Condition::NewWeather, Condition::NewTownWeather};
std::string to_string(Condition c);
std::optional<Condition> condition_from_string(const std::string& s);
std::string condition_title(Condition c);
/// Training/NewWeather run in the training town.
bool uses_training_town(Condition c);
WeatherSet weather_set_of(Condition c);

inline constexpr int kSuiteSize = 25;
inline constexpr double kBudgetSpeedKmh = 10.0;

/// Average route length targets in metres per task kind, plus dynamic
/// object counts for the dynamic task.
struct TaskTargets {
  double straight = 200.0, one_turn = 400.0, navigation = 770.0;
  int vehicles = 30, pedestrians = 50;
  double band = 0.25;  // accepted relative deviation from the target
};
/// Built-in targets for the bundled towns. Throws BenchError otherwise.
TaskTargets task_targets(const std::string& town_id);

struct TaskPair {
  int start = 0;  // player spawn indices
  int goal = 0;
  double length = 0.0;  // m along the optimal route
  bool operator==(const TaskPair&) const = default;
};

struct TaskSpec {
  TaskKind kind = TaskKind::Straight;
  std::vector<TaskPair> pool;
  int vehicles = 0, pedestrians = 0;
};

/// Pools for all four kinds from the town's player spawns. Pairs whose
/// optimal route needs a U-turn are left out. Throws BenchError when a
/// pool has fewer than kSuiteSize pairs.
std::map<TaskKind, TaskSpec> build_task_specs(const TownMap& town, const TaskTargets& targets);

/// Seconds to cover the optimal route at 10 km/h. Throws RouteError.
double time_budget(const TownMap& town, int start_spawn, int goal_spawn);
double time_budget_for_km(double km);
/// Last tick at which reaching the goal still counts.
std::int64_t budget_ticks(double budget_s);

struct EpisodeConfig {
  std::string town;
  Condition condition = Condition::Training;
  TaskKind task = TaskKind::Straight;
  int index = 0;  // within the suite
  int weather = 1;
  int start = 0, goal = 0;
  int vehicles = 0, pedestrians = 0;
  std::uint64_t seed_vehicles = 1, seed_pedestrians = 1;
  double route_km = 0.0;
  double time_budget = 0.0;  // s
  bool operator==(const EpisodeConfig&) const = default;
};
nlohmann::json to_json(const EpisodeConfig& c);

/// kSuiteSize configs drawn without replacement from the pool, weather
/// cycled through the set. Equal seeds give equal suites.
std::vector<EpisodeConfig> make_suite(const TownMap& town, const std::map<TaskKind, TaskSpec>& specs,
                                      WeatherSet weathers, TaskKind task, std::uint64_t seed,
                                      Condition condition = Condition::Training);

enum class InfractionKind : std::uint8_t { OppositeLane, Sidewalk, CollisionStatic, CollisionCar, CollisionPedestrian };
inline constexpr std::array<InfractionKind, 5> kAllInfractions{
    InfractionKind::OppositeLane, InfractionKind::Sidewalk, InfractionKind::CollisionStatic,
    InfractionKind::CollisionCar, InfractionKind::CollisionPedestrian};
std::string to_string(InfractionKind k);
std::string infraction_title(InfractionKind k);

struct InfractionEvent {
  InfractionKind kind = InfractionKind::Sidewalk;
  std::int64_t start_tick = 0;
  double duration = 0.0;  // s, at most 2
  bool operator==(const InfractionEvent&) const = default;
};

inline constexpr double kOverlapThreshold = 0.30;
inline constexpr int kEventTicks = 20;  // 2 s

/// Per-tick infraction accounting. Overlap kinds open an event on the
/// first tick above 30% and a new one every 2 s while it stays above.
/// Collision kinds open on a positive damage delta, then ignore further
/// damage of that kind for 2 s.
class InfractionDetector {
 public:
  void observe(std::int64_t tick, double opposite, double sidewalk, double damage_car, double damage_pedestrian,
               double damage_static);
  void observe(const Measurements& m);
  /// Closes open events; returns all events ordered by start tick, kind.
  std::vector<InfractionEvent> finish();

 private:
  struct Track {
    std::optional<std::int64_t> open;  // start tick of the running event
    std::int64_t last = 0;             // last tick inside it
    double level = 0.0;                // damage accumulator seen so far
  };
  void overlap(InfractionKind k, std::int64_t tick, double fraction);
  void collision(InfractionKind k, std::int64_t tick, double damage);
  void close(InfractionKind k);

  std::array<Track, 5> tracks_{};
  std::vector<InfractionEvent> events_;
  std::int64_t tick_ = 0;
};

struct EpisodeOptions {
  std::optional<std::int64_t> budget_ticks;  // overrides the config budget
  std::vector<CameraConfig> cameras = default_camera_suite();
  bool keep_reward_log = false;
};

struct EpisodeResult {
  bool success = false;
  std::int64_t ticks = 0;  // last tick observed
  std::int64_t budget_ticks = 0;
  double completion_time = 0.0;  // s, ticks * dt
  double distance_km = 0.0;      // driven
  std::vector<InfractionEvent> infractions;
  double reward = 0.0;
  std::vector<RewardInput> reward_log;  // only with keep_reward_log
  int replans = 0;
  bool agent_fault = false;
  std::string fault;
  bool operator==(const EpisodeResult&) const = default;
};
nlohmann::json to_json(const EpisodeResult& r);

MetaCommand episode_meta(const EpisodeConfig& c, const EpisodeOptions& opts = {});

/// One lockstep rollout. Agent exceptions end the episode as a failure
/// with agent_fault set; environment exceptions propagate.
EpisodeResult run_episode(const EpisodeConfig& config, Agent& agent, Env& env, const EpisodeOptions& opts = {});

struct EpisodeRecord {
  EpisodeConfig config;
  EpisodeResult result;
};
nlohmann::json to_json(const EpisodeRecord& r);
/// Inverse of to_json(EpisodeRecord); the reward log is not stored.
/// Throws BenchError.
EpisodeRecord episode_record_from_json(const nlohmann::json& j);
/// One record per non-empty line. Throws BenchError naming the line.
std::vector<EpisodeRecord> read_episodes(const std::filesystem::path& path);

using AgentFactory = std::function<std::unique_ptr<Agent>()>;
using EnvFactory = std::function<std::unique_ptr<Env>(const EpisodeConfig&)>;

/// Runs every config with a fresh agent and env each, up to `jobs` at a
/// time. Results come back in config order. `progress` is called once
/// per finished episode, serialized.
std::vector<EpisodeRecord> run_all(const std::vector<EpisodeConfig>& configs, const AgentFactory& agents,
                                   const EnvFactory& envs, int jobs = 1, const EpisodeOptions& opts = {},
                                   const std::function<void(const EpisodeRecord&)>& progress = {});

struct SuccessCell {
  int episodes = 0;
  int successes = 0;
  double percent() const { return episodes ? 100.0 * successes / episodes : 0.0; }
};

/// Average km between infractions of one kind. Without events only a
/// lower bound is known: the distance driven.
struct KmCell {
  double km = 0.0;
  bool lower_bound = false;
  std::string text() const;
};

struct InfractionColumn {
  double distance_km = 0.0;
  int episodes = 0;
  std::array<int, 5> counts{};
  KmCell cell(InfractionKind k) const;
};

struct Report {
  std::map<std::pair<TaskKind, Condition>, SuccessCell> success;
  std::map<Condition, InfractionColumn> infractions;
  /// Task whose episodes feed the infraction table: the dynamic task when
  /// it was run, otherwise every task.
  std::optional<TaskKind> infraction_task;
};

/// Throws BenchError on an empty input.
Report aggregate(const std::vector<EpisodeRecord>& records);
std::string format_percent(double p);
std::string format_report_text(const Report& r);
std::string format_report_csv(const Report& r);

/// episodes.jsonl, summary.csv, summary.txt in `dir` (created).
void write_report_files(const std::filesystem::path& dir, const std::vector<EpisodeRecord>& records,
                        const Report& report);

}  // namespace microcarla
