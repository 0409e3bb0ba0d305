#include "microcarla/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <sstream>
#include <thread>

#include "microcarla/codec.hpp"
#include "microcarla/rng.hpp"

namespace microcarla {

using nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Straight: return "straight";
    case TaskKind::OneTurn: return "one_turn";
    case TaskKind::Navigation: return "navigation";
    case TaskKind::NavDynamic: return "nav_dynamic";
  }
  return "straight";
}

std::optional<TaskKind> task_from_string(const std::string& s) {
  if (s == "straight") return TaskKind::Straight;
  if (s == "one_turn" || s == "one-turn") return TaskKind::OneTurn;
  if (s == "navigation") return TaskKind::Navigation;
  if (s == "nav_dynamic" || s == "nav-dynamic") return TaskKind::NavDynamic;
  return std::nullopt;
}

namespace {

std::string task_title(TaskKind k) {
  switch (k) {
    case TaskKind::Straight: return "Straight";
    case TaskKind::OneTurn: return "One turn";
    case TaskKind::Navigation: return "Navigation";
    case TaskKind::NavDynamic: return "Nav. dynamic";
  }
  return "";
}

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::Training: return "training";
    case Condition::NewTown: return "new_town";
    case Condition::NewWeather: return "new_weather";
    case Condition::NewTownWeather: return "new_town_weather";
  }
  return "training";
}

std::optional<Condition> condition_from_string(const std::string& s) {
  for (Condition c : kAllConditions)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::string condition_title(Condition c) {
  switch (c) {
    case Condition::Training: return "Training conditions";
    case Condition::NewTown: return "New town";
    case Condition::NewWeather: return "New weather";
    case Condition::NewTownWeather: return "New town & weather";
  }
  return "";
}

bool uses_training_town(Condition c) { return c == Condition::Training || c == Condition::NewWeather; }

WeatherSet weather_set_of(Condition c) {
  return c == Condition::Training || c == Condition::NewTown ? WeatherSet::Training : WeatherSet::Test;
}

TaskTargets task_targets(const std::string& town_id) {
  if (town_id == "town_a") return {200.0, 400.0, 770.0, 30, 50};
  if (town_id == "town_b") return {100.0, 170.0, 360.0, 15, 30};
  throw BenchError("no task targets for town '" + town_id + "'");
}

// --- task pools -------------------------------------------------------------

std::map<TaskKind, TaskSpec> build_task_specs(const TownMap& town, const TaskTargets& targets) {
  const auto& edges = town.edges();
  const size_t n = edges.size();
  const double inf = std::numeric_limits<double>::infinity();

  // dist[e][f]: from the end of e to the start of f over legal successors,
  // prev[e][f] the edge before f on that path (-1 when f follows e).
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, inf));
  std::vector<std::vector<int>> prev(n, std::vector<int>(n, -1));
  for (size_t e = 0; e < n; ++e) {
    auto& d = dist[e];
    auto& p = prev[e];
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    for (int f : town.successors(static_cast<int>(e))) {
      d[f] = 0.0;
      p[f] = -1;
      open.push({0.0, f});
    }
    while (!open.empty()) {
      const auto [g, cur] = open.top();
      open.pop();
      if (g > d[cur]) continue;
      const double ng = g + edges[cur].length;
      for (int f : town.successors(cur)) {
        if (ng < d[f]) {
          d[f] = ng;
          p[f] = cur;
          open.push({ng, f});
        }
      }
    }
  }

  struct Spot {
    int edge;
    double s;
  };
  std::vector<Spot> spots;
  for (const auto& pose : town.spawns.player) {
    const auto lp = town.locate_pose(pose);
    if (!lp) throw BenchError("player spawn is not on a lane");
    spots.push_back({lp->lane.edge, lp->s});
  }

  auto in_band = [&](double len, double target) {
    return len >= (1.0 - targets.band) * target && len <= (1.0 + targets.band) * target;
  };

  std::map<TaskKind, TaskSpec> specs;
  for (TaskKind k : kAllTasks) specs[k].kind = k;
  specs[TaskKind::NavDynamic].vehicles = targets.vehicles;
  specs[TaskKind::NavDynamic].pedestrians = targets.pedestrians;

  for (size_t i = 0; i < spots.size(); ++i) {
    for (size_t j = 0; j < spots.size(); ++j) {
      if (i == j) continue;
      const Spot a = spots[i], b = spots[j];
      double len;
      int junction_labels = 0, turns = 0, curves = 0;
      bool uturn = false;
      const bool same_edge = a.edge == b.edge && b.s >= a.s;
      if (same_edge) {
        len = b.s - a.s;
      } else {
        if (!std::isfinite(dist[a.edge][b.edge])) continue;
        len = edges[a.edge].length - a.s + dist[a.edge][b.edge] + b.s;
        std::vector<int> chain{b.edge};
        while (prev[a.edge][chain.back()] != -1) chain.push_back(prev[a.edge][chain.back()]);
        chain.push_back(a.edge);
        std::reverse(chain.begin(), chain.end());
        for (size_t k = 0; k + 1 < chain.size(); ++k) {
          if (chain[k + 1] == town.reverse_edge(chain[k])) uturn = true;
          if (town.is_junction(edges[chain[k]].to_node)) {
            ++junction_labels;
            if (town.turn_label(chain[k], chain[k + 1]) != TurnLabel::Straight) ++turns;
          } else {
            ++curves;
          }
        }
      }
      if (uturn) continue;
      const TaskPair pair{static_cast<int>(i), static_cast<int>(j), len};
      if (same_edge && in_band(len, targets.straight)) specs[TaskKind::Straight].pool.push_back(pair);
      if (!same_edge && junction_labels == 1 && turns == 1 && curves == 0 && in_band(len, targets.one_turn))
        specs[TaskKind::OneTurn].pool.push_back(pair);
      if (in_band(len, targets.navigation)) {
        specs[TaskKind::Navigation].pool.push_back(pair);
        specs[TaskKind::NavDynamic].pool.push_back(pair);
      }
    }
  }
  for (const auto& [k, spec] : specs)
    if (spec.pool.size() < static_cast<size_t>(kSuiteSize))
      throw BenchError("task pool '" + to_string(k) + "' of " + town.id + " has only " +
                       std::to_string(spec.pool.size()) + " pairs");
  return specs;
}

double time_budget_for_km(double km) { return km / kBudgetSpeedKmh * 3600.0; }

double time_budget(const TownMap& town, int start_spawn, int goal_spawn) {
  const auto& p = town.spawns.player;
  if (start_spawn < 0 || goal_spawn < 0 || start_spawn >= static_cast<int>(p.size()) ||
      goal_spawn >= static_cast<int>(p.size()))
    throw RouteError(RouteError::Kind::Unreachable, "spawn index out of range");
  return time_budget_for_km(shortest_route_length(town, p[start_spawn], p[goal_spawn]));
}

std::int64_t budget_ticks(double budget_s) { return static_cast<std::int64_t>(std::floor(budget_s / kDt + 1e-9)); }

json to_json(const EpisodeConfig& c) {
  return {{"town", c.town},
          {"condition", to_string(c.condition)},
          {"task", to_string(c.task)},
          {"index", c.index},
          {"weather", c.weather},
          {"start", c.start},
          {"goal", c.goal},
          {"vehicles", c.vehicles},
          {"pedestrians", c.pedestrians},
          {"seed_vehicles", c.seed_vehicles},
          {"seed_pedestrians", c.seed_pedestrians},
          {"route_km", c.route_km},
          {"time_budget", c.time_budget}};
}

std::vector<EpisodeConfig> make_suite(const TownMap& town, const std::map<TaskKind, TaskSpec>& specs,
                                      WeatherSet weathers, TaskKind task, std::uint64_t seed, Condition condition) {
  const auto it = specs.find(task);
  if (it == specs.end() || it->second.pool.size() < static_cast<size_t>(kSuiteSize))
    throw BenchError("task pool '" + to_string(task) + "' is exhausted");
  const TaskSpec& spec = it->second;
  const std::vector<int> ws = weather_set(weathers);

  const std::uint64_t base = mix_seed(seed ^ (static_cast<std::uint64_t>(task) << 32));
  Rng rng(base);
  std::vector<size_t> order(spec.pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = 0; i < static_cast<size_t>(kSuiteSize); ++i) {
    const size_t j = i + rng.index(order.size() - i);
    std::swap(order[i], order[j]);
  }

  std::vector<EpisodeConfig> out;
  for (int i = 0; i < kSuiteSize; ++i) {
    const TaskPair& pair = spec.pool[order[i]];
    EpisodeConfig c;
    c.town = town.id;
    c.condition = condition;
    c.task = task;
    c.index = i;
    c.weather = ws[i % ws.size()];
    c.start = pair.start;
    c.goal = pair.goal;
    c.vehicles = spec.vehicles;
    c.pedestrians = spec.pedestrians;
    c.seed_vehicles = mix_seed(base + 2 * static_cast<std::uint64_t>(i) + 1);
    c.seed_pedestrians = mix_seed(base + 2 * static_cast<std::uint64_t>(i) + 2);
    c.route_km = shortest_route_length(town, town.spawns.player[pair.start], town.spawns.player[pair.goal]);
    c.time_budget = time_budget_for_km(c.route_km);
    out.push_back(c);
  }
  return out;
}

// --- infractions ------------------------------------------------------------

std::string to_string(InfractionKind k) {
  switch (k) {
    case InfractionKind::OppositeLane: return "opposite_lane";
    case InfractionKind::Sidewalk: return "sidewalk";
    case InfractionKind::CollisionStatic: return "collision_static";
    case InfractionKind::CollisionCar: return "collision_car";
    case InfractionKind::CollisionPedestrian: return "collision_pedestrian";
  }
  return "";
}

std::string infraction_title(InfractionKind k) {
  switch (k) {
    case InfractionKind::OppositeLane: return "Opposite lane";
    case InfractionKind::Sidewalk: return "Sidewalk";
    case InfractionKind::CollisionStatic: return "Collision-static";
    case InfractionKind::CollisionCar: return "Collision-car";
    case InfractionKind::CollisionPedestrian: return "Collision-pedestrian";
  }
  return "";
}

void InfractionDetector::close(InfractionKind k) {
  Track& t = tracks_[static_cast<size_t>(k)];
  if (!t.open) return;
  const double d = std::min<double>(static_cast<double>(t.last - *t.open + 1), kEventTicks) * kDt;
  events_.push_back({k, *t.open, d});
  t.open.reset();
}

void InfractionDetector::overlap(InfractionKind k, std::int64_t tick, double fraction) {
  Track& t = tracks_[static_cast<size_t>(k)];
  if (fraction > kOverlapThreshold) {
    if (t.open && tick - *t.open >= kEventTicks) close(k);
    if (!t.open) t.open = tick;
    t.last = tick;
  } else {
    close(k);
  }
}

void InfractionDetector::collision(InfractionKind k, std::int64_t tick, double damage) {
  Track& t = tracks_[static_cast<size_t>(k)];
  const bool hit = damage > t.level;
  t.level = std::max(t.level, damage);
  if (t.open && tick - *t.open >= kEventTicks) close(k);
  if (!hit) return;
  if (!t.open) t.open = tick;
  t.last = tick;
}

void InfractionDetector::observe(std::int64_t tick, double opposite, double sidewalk, double damage_car,
                                 double damage_pedestrian, double damage_static) {
  tick_ = tick;
  overlap(InfractionKind::OppositeLane, tick, opposite);
  overlap(InfractionKind::Sidewalk, tick, sidewalk);
  collision(InfractionKind::CollisionStatic, tick, damage_static);
  collision(InfractionKind::CollisionCar, tick, damage_car);
  collision(InfractionKind::CollisionPedestrian, tick, damage_pedestrian);
}

void InfractionDetector::observe(const Measurements& m) {
  observe(m.tick, m.opposite_lane, m.sidewalk, m.collision_car, m.collision_pedestrian, m.collision_static);
}

std::vector<InfractionEvent> InfractionDetector::finish() {
  for (InfractionKind k : kAllInfractions) close(k);
  std::stable_sort(events_.begin(), events_.end(), [](const InfractionEvent& a, const InfractionEvent& b) {
    if (a.start_tick != b.start_tick) return a.start_tick < b.start_tick;
    return a.kind < b.kind;
  });
  return events_;
}

// --- episodes ---------------------------------------------------------------

json to_json(const EpisodeResult& r) {
  json inf = json::array();
  for (const auto& e : r.infractions)
    inf.push_back({{"kind", to_string(e.kind)}, {"start_tick", e.start_tick}, {"duration", e.duration}});
  json j = {{"success", r.success},
            {"ticks", r.ticks},
            {"budget_ticks", r.budget_ticks},
            {"completion_time", r.completion_time},
            {"distance_km", r.distance_km},
            {"infractions", inf},
            {"reward", r.reward},
            {"replans", r.replans},
            {"agent_fault", r.agent_fault}};
  if (r.agent_fault) j["fault"] = r.fault;
  return j;
}

json to_json(const EpisodeRecord& r) {
  json j = to_json(r.config);
  j["result"] = to_json(r.result);
  return j;
}

namespace {

InfractionKind infraction_from_string(const std::string& s) {
  for (InfractionKind k : kAllInfractions)
    if (to_string(k) == s) return k;
  throw BenchError("unknown infraction kind '" + s + "'");
}

}  // namespace

EpisodeRecord episode_record_from_json(const json& j) {
  try {
    EpisodeRecord r;
    EpisodeConfig& c = r.config;
    c.town = j.at("town").get<std::string>();
    const auto cond = condition_from_string(j.at("condition").get<std::string>());
    const auto task = task_from_string(j.at("task").get<std::string>());
    if (!cond || !task) throw BenchError("unknown condition or task");
    c.condition = *cond;
    c.task = *task;
    c.index = j.at("index").get<int>();
    c.weather = j.at("weather").get<int>();
    c.start = j.at("start").get<int>();
    c.goal = j.at("goal").get<int>();
    c.vehicles = j.at("vehicles").get<int>();
    c.pedestrians = j.at("pedestrians").get<int>();
    c.seed_vehicles = j.at("seed_vehicles").get<std::uint64_t>();
    c.seed_pedestrians = j.at("seed_pedestrians").get<std::uint64_t>();
    c.route_km = j.at("route_km").get<double>();
    c.time_budget = j.at("time_budget").get<double>();

    const json& o = j.at("result");
    EpisodeResult& res = r.result;
    res.success = o.at("success").get<bool>();
    res.ticks = o.at("ticks").get<std::int64_t>();
    res.budget_ticks = o.at("budget_ticks").get<std::int64_t>();
    res.completion_time = o.at("completion_time").get<double>();
    res.distance_km = o.at("distance_km").get<double>();
    for (const auto& e : o.at("infractions"))
      res.infractions.push_back({infraction_from_string(e.at("kind").get<std::string>()),
                                 e.at("start_tick").get<std::int64_t>(), e.at("duration").get<double>()});
    res.reward = o.at("reward").get<double>();
    res.replans = o.at("replans").get<int>();
    res.agent_fault = o.at("agent_fault").get<bool>();
    if (res.agent_fault) res.fault = o.value("fault", std::string{});
    return r;
  } catch (const json::exception& e) {
    throw BenchError(std::string("bad episode record: ") + e.what());
  }
}

std::vector<EpisodeRecord> read_episodes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw BenchError("cannot open " + path.string());
  std::vector<EpisodeRecord> out;
  int n = 0;
  for (std::string line; std::getline(f, line);) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(episode_record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw BenchError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

MetaCommand episode_meta(const EpisodeConfig& c, const EpisodeOptions& opts) {
  MetaCommand m;
  m.num_vehicles = c.vehicles;
  m.num_pedestrians = c.pedestrians;
  m.weather = c.weather;
  m.seed_vehicles = c.seed_vehicles;
  m.seed_pedestrians = c.seed_pedestrians;
  m.cameras = opts.cameras;
  m.player_spawn_index = c.start;
  return m;
}

EpisodeResult run_episode(const EpisodeConfig& config, Agent& agent, Env& env, const EpisodeOptions& opts) {
  const TownMap& town = env.town();
  if (config.town != town.id) throw BenchError("episode is for " + config.town + ", env runs " + town.id);
  const auto& spawns = town.spawns.player;
  if (config.goal < 0 || config.goal >= static_cast<int>(spawns.size()))
    throw BenchError("goal spawn index out of range");

  EpisodeResult r;
  r.budget_ticks = opts.budget_ticks.value_or(budget_ticks(config.time_budget));

  SensorFrame frame = env.reset(episode_meta(config, opts));
  auto fault = [&](const std::exception& e) {
    r.agent_fault = true;
    r.fault = e.what();
  };
  try {
    agent.reset(town);
  } catch (const std::exception& e) {
    fault(e);
  }

  RouteFollower route(town, plan(town, pose_of(frame.measurements), spawns[config.goal]));
  InfractionDetector detector;
  std::optional<RewardInput> prev_reward;
  Vec2 prev_pos = frame.measurements.position;

  while (!r.agent_fault) {
    const Measurements& m = frame.measurements;
    route.update(pose_of(m));
    detector.observe(m);
    r.distance_km += distance(prev_pos, m.position) / 1000.0;
    prev_pos = m.position;
    const RewardInput in = reward_input(m, route.remaining_km());
    if (prev_reward) r.reward += reward(*prev_reward, in).total;
    prev_reward = in;
    if (opts.keep_reward_log) r.reward_log.push_back(in);
    r.ticks = frame.tick;

    const HighLevelCommand command = route.command();
    if (command == HighLevelCommand::GoalReached) {
      r.success = frame.tick <= r.budget_ticks;
      break;
    }
    if (frame.tick >= r.budget_ticks) break;

    Control c;
    try {
      c = agent.act(frame, command);
    } catch (const std::exception& e) {
      fault(e);
      break;
    }
    frame = env.step(c, command);
  }
  r.completion_time = static_cast<double>(r.ticks) * kDt;
  r.infractions = detector.finish();
  r.replans = route.replans();
  return r;
}

std::vector<EpisodeRecord> run_all(const std::vector<EpisodeConfig>& configs, const AgentFactory& agents,
                                   const EnvFactory& envs, int jobs, const EpisodeOptions& opts,
                                   const std::function<void(const EpisodeRecord&)>& progress) {
  std::vector<EpisodeRecord> out(configs.size());
  std::atomic<size_t> next{0};
  std::mutex mu;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const size_t i = next++;
      if (i >= configs.size()) return;
      {
        std::lock_guard lk(mu);
        if (error) return;
      }
      try {
        auto env = envs(configs[i]);
        auto agent = agents();
        out[i] = {configs[i], run_episode(configs[i], *agent, *env, opts)};
        std::lock_guard lk(mu);
        if (progress) progress(out[i]);
      } catch (...) {
        std::lock_guard lk(mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

// --- reports ----------------------------------------------------------------

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string km_text(double km) { return fixed(km, std::abs(km) < 1.0 ? 2 : 1); }

}  // namespace

std::string KmCell::text() const { return lower_bound ? "> " + km_text(km) : km_text(km); }

KmCell InfractionColumn::cell(InfractionKind k) const {
  const int n = counts[static_cast<size_t>(k)];
  if (n == 0) return {distance_km, true};
  return {distance_km / n, false};
}

std::string format_percent(double p) { return fixed(p, 1); }

Report aggregate(const std::vector<EpisodeRecord>& records) {
  if (records.empty()) throw BenchError("no episodes to aggregate");
  Report rep;
  bool dynamic = false;
  for (const auto& r : records) {
    SuccessCell& cell = rep.success[{r.config.task, r.config.condition}];
    ++cell.episodes;
    if (r.result.success) ++cell.successes;
    dynamic = dynamic || r.config.task == TaskKind::NavDynamic;
  }
  if (dynamic) rep.infraction_task = TaskKind::NavDynamic;
  // Sum distances in a fixed order so the totals do not depend on the
  // order episodes finished in.
  std::map<Condition, std::vector<double>> distances;
  for (const auto& r : records) {
    if (rep.infraction_task && r.config.task != *rep.infraction_task) continue;
    InfractionColumn& col = rep.infractions[r.config.condition];
    ++col.episodes;
    distances[r.config.condition].push_back(r.result.distance_km);
    for (const auto& e : r.result.infractions) ++col.counts[static_cast<size_t>(e.kind)];
  }
  for (auto& [c, ds] : distances) {
    std::sort(ds.begin(), ds.end());
    double sum = 0.0;
    for (double d : ds) sum += d;
    rep.infractions[c].distance_km = sum;
  }
  return rep;
}

std::string format_report_text(const Report& r) {
  std::ostringstream os;
  auto pad = [](std::string s, size_t w, bool right) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
  };
  constexpr size_t kFirst = 22, kCol = 20;

  os << "Percentage of successfully completed episodes\n\n";
  os << pad("Task", kFirst, false);
  for (Condition c : kAllConditions) os << pad(condition_title(c), kCol, true);
  os << "\n";
  for (TaskKind t : kAllTasks) {
    os << pad(task_title(t), kFirst, false);
    for (Condition c : kAllConditions) {
      const auto it = r.success.find({t, c});
      os << pad(it == r.success.end() ? "-" : format_percent(it->second.percent()), kCol, true);
    }
    os << "\n";
  }

  os << "\nAverage distance (km) travelled between two infractions";
  os << (r.infraction_task ? " (" + task_title(*r.infraction_task) + ")" : std::string(" (all tasks)")) << "\n\n";
  os << pad("Infraction", kFirst, false);
  for (Condition c : kAllConditions) os << pad(condition_title(c), kCol, true);
  os << "\n";
  for (InfractionKind k : kAllInfractions) {
    os << pad(infraction_title(k), kFirst, false);
    for (Condition c : kAllConditions) {
      const auto it = r.infractions.find(c);
      os << pad(it == r.infractions.end() ? "-" : it->second.cell(k).text(), kCol, true);
    }
    os << "\n";
  }
  os << pad("Distance driven", kFirst, false);
  for (Condition c : kAllConditions) {
    const auto it = r.infractions.find(c);
    os << pad(it == r.infractions.end() ? "-" : km_text(it->second.distance_km), kCol, true);
  }
  os << "\n";
  return os.str();
}

std::string format_report_csv(const Report& r) {
  std::ostringstream os;
  os << "table,row,condition,value,episodes,count,distance_km\n";
  for (TaskKind t : kAllTasks)
    for (Condition c : kAllConditions) {
      const auto it = r.success.find({t, c});
      if (it == r.success.end()) continue;
      os << "success," << to_string(t) << "," << to_string(c) << "," << format_percent(it->second.percent()) << ","
         << it->second.episodes << "," << it->second.successes << ",\n";
    }
  for (InfractionKind k : kAllInfractions)
    for (Condition c : kAllConditions) {
      const auto it = r.infractions.find(c);
      if (it == r.infractions.end()) continue;
      os << "km_between," << to_string(k) << "," << to_string(c) << "," << it->second.cell(k).text() << ","
         << it->second.episodes << "," << it->second.counts[static_cast<size_t>(k)] << ","
         << fixed(it->second.distance_km, 4) << "\n";
    }
  return os.str();
}

void write_report_files(const std::filesystem::path& dir, const std::vector<EpisodeRecord>& records,
                        const Report& report) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw BenchError("cannot write " + (dir / name).string());
    f << text;
    if (!f) throw BenchError("write failed: " + (dir / name).string());
  };
  std::string lines;
  for (const auto& r : records) lines += to_json(r).dump() + "\n";
  write("episodes.jsonl", lines);
  write("summary.csv", format_report_csv(report));
  write("summary.txt", format_report_text(report));
}

}  // namespace microcarla
