#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "microcarla/bench.hpp"
#include "microcarla/learnkit.hpp"
#include "microcarla/pilot.hpp"
#include "microcarla/rng.hpp"
#include "microcarla/session.hpp"
#include "microcarla/transport.hpp"

using namespace microcarla;

namespace {

// Exit codes: 0 done, 1 runtime failure or replay divergence, 2 bad
// arguments or unloadable input.
constexpr int kRuntimeFailure = 1;
constexpr int kBadInput = 2;

std::mutex log_mu;
void log_line(const std::string& line) {
  std::lock_guard lk(log_mu);
  std::cerr << line << std::endl;
}

std::atomic<bool> interrupted{false};
void on_signal(int) { interrupted = true; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TownMap load_or_fail(const std::string& name) {
  try {
    return load_town(resolve_town_path(name));
  } catch (const std::exception& e) {
    throw InputError("cannot load town '" + name + "': " + e.what());
  }
}

std::string town_stats(const TownMap& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "town %s: %zu roads, %zu intersections, %.2f km of road, %zu player spawns, %zu lights",
                t.id.c_str(), t.roads.size(), t.intersections.size(), t.total_road_length() / 1000.0,
                t.spawns.player.size(), t.lights.size());
  return buf;
}

double parse_pace(const std::string& s) {
  if (s.empty() || s == "off" || s == "0") return 0.0;
  std::string num = s;
  if (num.size() > 2 && (num.substr(num.size() - 2) == "hz" || num.substr(num.size() - 2) == "Hz"))
    num = num.substr(0, num.size() - 2);
  try {
    size_t used = 0;
    const double v = std::stod(num, &used);
    if (used != num.size() || v < 0.0) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw InputError("bad --pace '" + s + "', expected e.g. 10hz");
  }
}

// --- serve ----------------------------------------------------------------------

struct ServeArgs {
  std::string town = "a";
  std::string host = "127.0.0.1";
  int port = kDefaultPort;
  bool ws = false;
  std::string pace;
  std::string static_dir;
  std::string record_dir = ".";
};

int cmd_serve(const ServeArgs& a) {
  const TownMap town = load_or_fail(a.town);
  ServerOptions o;
  o.host = a.host;
  o.port = a.port;
  o.websocket = a.ws;
  o.pace_hz = parse_pace(a.pace);
  if (!a.static_dir.empty()) {
    if (!std::filesystem::is_directory(a.static_dir)) throw InputError("--static is not a directory: " + a.static_dir);
    o.static_dir = a.static_dir;
  }
  o.record_dir = a.record_dir;
  std::filesystem::create_directories(o.record_dir);
  o.log = log_line;
  log_line(town_stats(town));
  Server server(town, o);
  try {
    server.start();
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
  log_line("listening on " + a.host + ":" + std::to_string(server.port()) + (a.ws ? " (tcp + websocket /ws)" : " (tcp)") +
           (o.pace_hz > 0 ? ", paced" : ""));
  wait_for_signal();
  server.stop();
  log_line("stopped");
  return 0;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::string agent = "pilot";
  std::string server;
  std::vector<std::string> tasks;
  std::vector<std::string> conditions;
  std::string town;
  bool all = false;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out = "bench_out";
  int timeout_ms = static_cast<int>(kDefaultTimeout.count());
};

/// A fresh connection to a simulator server for one episode.
class ServerEnv : public Env {
 public:
  ServerEnv(const std::string& host, int port, const TownMap& town, std::chrono::milliseconds timeout)
      : client_(host, port, ClientOptions{timeout}), env_(client_, town) {
    if (client_.town_id() != town.id)
      throw ClientError(ClientError::Kind::Protocol, "server runs " + client_.town_id() + ", episode needs " + town.id);
  }
  const TownMap& town() const override { return env_.town(); }
  SensorFrame reset(const MetaCommand& m) override { return env_.reset(m); }
  SensorFrame step(const Control& c, std::optional<HighLevelCommand> cmd) override { return env_.step(c, cmd); }

 private:
  ClientSession client_;
  RemoteEnv env_;
};

int cmd_bench(const BenchArgs& a) {
  std::vector<TaskKind> tasks;
  for (const auto& s : a.tasks) {
    const auto t = task_from_string(s);
    if (!t) throw InputError("unknown task '" + s + "'");
    tasks.push_back(*t);
  }
  std::vector<Condition> conditions;
  for (const auto& s : a.conditions) {
    const auto c = condition_from_string(s);
    if (!c) throw InputError("unknown condition '" + s + "'");
    conditions.push_back(*c);
  }
  if (a.all && (!tasks.empty() || !conditions.empty() || !a.town.empty()))
    throw InputError("--all cannot be combined with --task, --condition or --town");
  if (tasks.empty()) tasks.assign(kAllTasks.begin(), kAllTasks.end());
  if (conditions.empty()) conditions.assign(kAllConditions.begin(), kAllConditions.end());
  if (!a.town.empty()) {
    bool training;
    if (a.town == "a" || a.town == "town_a") training = true;
    else if (a.town == "b" || a.town == "town_b") training = false;
    else throw InputError("--town must be a or b");
    // A town alone means that town under the training weathers.
    if (a.conditions.empty()) conditions = {training ? Condition::Training : Condition::NewTown};
    std::erase_if(conditions, [&](Condition c) { return uses_training_town(c) != training; });
    if (conditions.empty()) throw InputError("no selected condition runs in town " + a.town);
  }
  if (a.jobs < 1) throw InputError("--jobs must be at least 1");

  const TownMap town_a = load_or_fail("a");
  const TownMap town_b = load_or_fail("b");
  const auto specs_a = build_task_specs(town_a, task_targets(town_a.id));
  const auto specs_b = build_task_specs(town_b, task_targets(town_b.id));

  std::vector<EpisodeConfig> configs;
  for (Condition c : conditions)
    for (TaskKind t : tasks) {
      const bool tr = uses_training_town(c);
      auto suite = make_suite(tr ? town_a : town_b, tr ? specs_a : specs_b, weather_set_of(c), t, a.seed, c);
      configs.insert(configs.end(), suite.begin(), suite.end());
    }

  AgentFactory agents;
  if (a.agent == "pilot") {
    agents = [] { return std::make_unique<Pilot>(); };
  } else {
    std::pair<std::string, int> ep;
    try {
      ep = parse_endpoint(a.agent);
    } catch (const std::exception&) {
      throw InputError("bad --agent '" + a.agent + "': expected pilot or tcp:host:port");
    }
    const auto timeout = std::chrono::milliseconds(a.timeout_ms);
    // Fail early when nobody is listening.
    try {
      connect_tcp(ep.first, ep.second, timeout);
    } catch (const std::exception& e) {
      log_line("error: cannot reach agent at " + a.agent + ": " + e.what());
      return kRuntimeFailure;
    }
    agents = [ep, timeout] { return std::make_unique<RemoteAgent>(ep.first, ep.second, timeout); };
  }

  EnvFactory envs;
  auto town_of = [&](const EpisodeConfig& c) -> const TownMap& { return c.town == town_a.id ? town_a : town_b; };
  if (a.server.empty()) {
    envs = [town_of](const EpisodeConfig& c) { return std::make_unique<DirectEnv>(town_of(c)); };
  } else {
    std::pair<std::string, int> ep;
    try {
      ep = parse_endpoint(a.server);
    } catch (const std::exception&) {
      throw InputError("bad --server '" + a.server + "'");
    }
    const auto timeout = std::chrono::milliseconds(a.timeout_ms);
    envs = [ep, timeout, town_of](const EpisodeConfig& c) {
      return std::make_unique<ServerEnv>(ep.first, ep.second, town_of(c), timeout);
    };
  }

  log_line("bench: " + std::to_string(configs.size()) + " episodes, agent " + a.agent + ", seed " +
           std::to_string(a.seed) + ", jobs " + std::to_string(a.jobs));
  size_t done = 0;
  std::vector<EpisodeRecord> records;
  try {
    records = run_all(configs, agents, envs, a.jobs, {}, [&](const EpisodeRecord& r) {
      ++done;
      char buf[256];
      std::snprintf(buf, sizeof buf, "[%zu/%zu] %s %s #%d: %s in %.1f s, %zu infractions%s", done, configs.size(),
                    to_string(r.config.condition).c_str(), to_string(r.config.task).c_str(), r.config.index,
                    r.result.success ? "success" : "failure", r.result.completion_time, r.result.infractions.size(),
                    r.result.agent_fault ? " (agent fault)" : "");
      log_line(buf);
    });
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
  const Report report = aggregate(records);
  write_report_files(a.out, records, report);
  std::cout << format_report_text(report);
  log_line("wrote " + (std::filesystem::path(a.out) / "episodes.jsonl").string() + ", summary.csv, summary.txt");
  return 0;
}

// --- record / replay / report -------------------------------------------------------

struct RecordArgs {
  std::string expert = "pilot";
  std::string town = "a";
  double minutes = 1.0;
  std::uint64_t seed = 1;
  std::string out = "demo.jsonl";
  int vehicles = 0, pedestrians = 0, weather = 1;
  bool no_perturb = false;
  double perturb_p = 0.1;
};

int cmd_record(const RecordArgs& a) {
  if (a.expert != "pilot") throw InputError("--expert must be pilot; human demonstrations are recorded by the server");
  if (a.minutes <= 0.0) throw InputError("--minutes must be positive");
  const TownMap town = load_or_fail(a.town);
  RecordOptions o;
  o.meta.num_vehicles = a.vehicles;
  o.meta.num_pedestrians = a.pedestrians;
  o.meta.weather = a.weather;
  o.meta.seed_vehicles = mix_seed(4 * a.seed + 1);
  o.meta.seed_pedestrians = mix_seed(4 * a.seed + 2);
  o.meta.cameras = default_camera_suite();
  o.meta.player_spawn_index = static_cast<int>(Rng(mix_seed(4 * a.seed + 3)).index(town.spawns.player.size()));
  o.ticks = static_cast<std::int64_t>(std::llround(a.minutes * 60.0 / kDt));
  o.perturbation.enabled = !a.no_perturb;
  o.perturbation.p = a.perturb_p;
  o.perturbation.seed = mix_seed(4 * a.seed + 4);
  o.goal_seed = mix_seed(4 * a.seed + 5);

  DirectEnv env(town);
  Pilot pilot;
  try {
    DemoWriter out(a.out);
    const RecordStats st = record_demo(env, pilot, o, out);
    log_line("recorded " + std::to_string(st.samples) + " samples to " + a.out + ", " +
             std::to_string(st.goals_reached) + " goals reached, " + std::to_string(st.impulses.size()) + " impulses");
  } catch (const WorldError& e) {
    throw InputError(e.what());
  } catch (const DemoError& e) {
    log_line(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
  return 0;
}

int cmd_replay(const std::string& file, const std::string& town_override) {
  std::vector<DemoEpisode> episodes;
  try {
    episodes = read_demo(file);
  } catch (const DemoError& e) {
    throw InputError(e.what());
  }
  if (episodes.empty()) throw InputError(file + " holds no episodes");
  std::map<std::string, TownMap> towns;
  for (size_t i = 0; i < episodes.size(); ++i) {
    const std::string name = town_override.empty() ? episodes[i].header.town : town_override;
    if (!towns.count(name)) towns.emplace(name, load_or_fail(name));
    DirectEnv env(towns.at(name));
    const ReplayResult r = replay_demo(env, episodes[i]);
    if (!r.ok) {
      std::cerr << "episode " << i << ": divergence at tick " << r.divergence_tick << " (" << r.detail << ")\n";
      std::cout << "divergence_tick " << r.divergence_tick << "\n";
      return kRuntimeFailure;
    }
    log_line("episode " + std::to_string(i) + ": " + std::to_string(r.ticks) + " ticks match");
  }
  return 0;
}

int cmd_report(const std::string& dir, const std::string& out) {
  const auto path = std::filesystem::path(dir) / "episodes.jsonl";
  std::vector<EpisodeRecord> records;
  try {
    records = read_episodes(std::filesystem::is_directory(dir) ? path : std::filesystem::path(dir));
  } catch (const BenchError& e) {
    throw InputError(e.what());
  }
  if (records.empty()) throw InputError("no episodes in " + dir);
  const Report report = aggregate(records);
  if (!out.empty()) write_report_files(out, records, report);
  std::cout << format_report_text(report);
  return 0;
}

// --- agent --------------------------------------------------------------------------

int cmd_agent(const std::string& host, int port) {
  const TownMap a = load_or_fail("a");
  const TownMap b = load_or_fail("b");
  AgentServer server({&a, &b}, [] { return std::make_unique<Pilot>(); }, host, port);
  try {
    server.start();
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
  log_line("pilot agent listening on " + host + ":" + std::to_string(server.port()));
  wait_for_signal();
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microcarla: 2D driving simulator and benchmark"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "run the simulator server");
  s->add_option("--town", serve.town, "town name (a, b) or file")->capture_default_str();
  s->add_option("--host", serve.host)->capture_default_str();
  s->add_option("--port", serve.port)->capture_default_str();
  s->add_flag("--ws", serve.ws, "also accept websocket clients on /ws");
  s->add_option("--pace", serve.pace, "real-time pacing for human drivers, e.g. 10hz");
  s->add_option("--static", serve.static_dir, "directory served over HTTP on the same port");
  s->add_option("--record-dir", serve.record_dir, "where recorded demonstrations go")->capture_default_str();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "run benchmark suites");
  b->add_option("--agent", bench.agent, "pilot or tcp:host:port")->capture_default_str();
  b->add_option("--server", bench.server, "simulate on a remote server, tcp:host:port");
  b->add_option("--task", bench.tasks, "straight, one_turn, navigation, nav_dynamic (repeatable)");
  b->add_option("--condition", bench.conditions, "training, new_town, new_weather, new_town_weather (repeatable)");
  b->add_option("--town", bench.town, "a or b: that town, training weathers unless --condition is given");
  b->add_flag("--all", bench.all, "full grid of tasks and conditions");
  b->add_option("--seed", bench.seed, "suite seed")->capture_default_str();
  b->add_option("--jobs", bench.jobs, "episodes run concurrently")->capture_default_str();
  b->add_option("--out", bench.out, "output directory")->capture_default_str();
  b->add_option("--timeout-ms", bench.timeout_ms, "external agent and server timeout")->capture_default_str();

  RecordArgs rec;
  auto* r = app.add_subcommand("record", "record expert demonstrations");
  r->add_option("--expert", rec.expert)->capture_default_str();
  r->add_option("--town", rec.town)->capture_default_str();
  r->add_option("--minutes", rec.minutes)->capture_default_str();
  r->add_option("--seed", rec.seed)->capture_default_str();
  r->add_option("--out", rec.out)->capture_default_str();
  r->add_option("--vehicles", rec.vehicles)->capture_default_str();
  r->add_option("--pedestrians", rec.pedestrians)->capture_default_str();
  r->add_option("--weather", rec.weather)->capture_default_str();
  r->add_flag("--no-perturb", rec.no_perturb, "record without steering noise");
  r->add_option("--perturb-p", rec.perturb_p, "impulse probability per second")->capture_default_str();

  std::string replay_file, replay_town;
  auto* rp = app.add_subcommand("replay", "replay a demo file and check it reproduces");
  rp->add_option("file", replay_file)->required();
  rp->add_option("--town", replay_town, "override the town named in the file");

  std::string report_in, report_out;
  auto* rep = app.add_subcommand("report", "re-aggregate a bench output");
  rep->add_option("dir", report_in, "bench output directory or episodes.jsonl")->required();
  rep->add_option("--out", report_out, "also write summary files here");

  std::string agent_host = "127.0.0.1";
  int agent_port = 3001;
  auto* ag = app.add_subcommand("agent", "serve the pilot to external benchmarks");
  ag->add_option("--host", agent_host)->capture_default_str();
  ag->add_option("--port", agent_port)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kBadInput;
  }

  try {
    if (*s) return cmd_serve(serve);
    if (*b) return cmd_bench(bench);
    if (*r) return cmd_record(rec);
    if (*rp) return cmd_replay(replay_file, replay_town);
    if (*rep) return cmd_report(report_in, report_out);
    if (*ag) return cmd_agent(agent_host, agent_port);
  } catch (const InputError& e) {
    log_line(std::string("error: ") + e.what());
    return kBadInput;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
  return kBadInput;
}
