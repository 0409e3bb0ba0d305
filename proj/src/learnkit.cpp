#include "microcarla/learnkit.hpp"

#include <algorithm>
#include <cmath>

#include "microcarla/planner.hpp"

namespace microcarla {

using nlohmann::json;

double s_perturb_phase(double phase, const Impulse& imp) {
  if (phase <= 0.0 || phase >= imp.tau) return 0.0;
  // 1 - |2 phase / tau - 1| with the division taken last, so phase = tau/2
  // gives exactly 1.
  const double tri = 1.0 - std::abs(2.0 * phase - imp.tau) / imp.tau;
  return imp.sign * imp.gamma * std::max(0.0, tri);
}

double s_perturb(double t, const Impulse& imp) { return s_perturb_phase(t - imp.t0, imp); }

json to_json(const PerturbationConfig& c) {
  return {{"enabled", c.enabled},           {"p", c.p},
          {"duration_min", c.duration_min}, {"duration_max", c.duration_max},
          {"intensity", c.intensity},       {"seed", c.seed}};
}

PerturbationConfig perturbation_from_json(const json& j) {
  if (!j.is_object()) throw DemoError("perturbation config must be an object");
  PerturbationConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "enabled" && v.is_boolean()) c.enabled = v.get<bool>();
    else if (k == "p" && v.is_number()) c.p = v.get<double>();
    else if (k == "duration_min" && v.is_number()) c.duration_min = v.get<double>();
    else if (k == "duration_max" && v.is_number()) c.duration_max = v.get<double>();
    else if (k == "intensity" && v.is_number()) c.intensity = v.get<double>();
    else if (k == "seed" && v.is_number_unsigned()) c.seed = v.get<std::uint64_t>();
    else if (k == "seed" && v.is_number_integer() && v.get<std::int64_t>() >= 0) c.seed = v.get<std::uint64_t>();
    else throw DemoError("perturbation config: bad field '" + k + "'");
  }
  if (!(c.p >= 0.0 && c.p <= 1.0) || !(c.duration_min > 0.0) || c.duration_max < c.duration_min)
    throw DemoError("perturbation config out of range");
  return c;
}

double PerturbationStream::apply(std::int64_t tick, double expert_steer) {
  if (tick <= last_tick_) throw std::logic_error("perturbation stream must advance in tick order");
  last_tick_ = tick;
  if (cfg_.enabled && tick % 10 == 0 && rng_.bernoulli(cfg_.p)) {
    Impulse imp;
    imp.start_tick = tick;
    imp.t0 = static_cast<double>(tick) * kDt;
    imp.tau = rng_.uniform(cfg_.duration_min, cfg_.duration_max);
    imp.sign = rng_.sign();
    imp.gamma = cfg_.intensity;
    active_.push_back(log_.size());
    log_.push_back(imp);
  }
  offset_ = 0.0;
  std::erase_if(active_, [&](size_t i) {
    const Impulse& imp = log_[i];
    const double phase = static_cast<double>(tick - imp.start_tick) * kDt;
    if (phase >= imp.tau) return true;
    offset_ += s_perturb_phase(phase, imp);
    return false;
  });
  return offset_ == 0.0 ? expert_steer : std::clamp(expert_steer + offset_, -1.0, 1.0);
}

RewardInput reward_input(const Measurements& m, double remaining_km) {
  return {m.tick, remaining_km, m.speed_kmh, m.total_damage(), m.sidewalk, m.opposite_lane};
}

RewardBreakdown reward_terms(const RewardInput& prev, const RewardInput& cur) {
  RewardBreakdown r;
  r.distance = 1000.0 * (prev.distance_km - cur.distance_km);
  r.speed = 0.05 * (cur.speed_kmh - prev.speed_kmh);
  r.collision = -0.00002 * (cur.damage - prev.damage);
  r.sidewalk = -2.0 * (cur.sidewalk - prev.sidewalk);
  r.opposite = -2.0 * (cur.opposite - prev.opposite);
  r.total = r.distance + r.speed + r.collision + r.sidewalk + r.opposite;
  return r;
}

RewardBreakdown reward(const RewardInput& prev, const RewardInput& cur) {
  if (cur.tick != prev.tick + 1)
    throw RewardError("reward needs consecutive ticks, got " + std::to_string(prev.tick) + " and " +
                      std::to_string(cur.tick));
  return reward_terms(prev, cur);
}

// --- demo files ---------------------------------------------------------------

json to_json(const DemoHeader& h) {
  return {{"type", "demo_header"},   {"version", h.version},     {"town", h.town},
          {"expert", h.expert},      {"meta", wire::to_json(h.meta)},
          {"perturbation", to_json(h.perturbation)}};
}

DemoHeader demo_header_from_json(const json& j) {
  try {
    if (!j.is_object() || j.size() != 6 || j.at("type") != "demo_header") throw DemoError("not a demo header");
    DemoHeader h;
    h.version = j.at("version").get<std::string>();
    if (h.version != kProtocolVersion) throw DemoError("unsupported demo version " + h.version);
    h.town = j.at("town").get<std::string>();
    h.expert = j.at("expert").get<std::string>();
    h.meta = wire::meta_from_json(j.at("meta"));
    h.perturbation = perturbation_from_json(j.at("perturbation"));
    return h;
  } catch (const json::exception& e) {
    throw DemoError(std::string("demo header: ") + e.what());
  } catch (const DecodeError& e) {
    throw DemoError(std::string("demo header: ") + e.what());
  }
}

json to_json(const DemoSample& s) {
  return {{"type", "sample"},
          {"tick", s.tick},
          {"command", to_string(s.command)},
          {"action", wire::to_json(s.action)},
          {"applied", wire::to_json(s.applied)},
          {"speed_kmh", s.speed_kmh},
          {"frame", wire::to_json(s.frame)}};
}

DemoSample demo_sample_from_json(const json& j) {
  try {
    if (!j.is_object() || j.size() != 7 || j.at("type") != "sample") throw DemoError("not a demo sample");
    DemoSample s;
    s.tick = j.at("tick").get<std::int64_t>();
    s.command = wire::command_from_json(j.at("command"));
    if (s.command == HighLevelCommand::GoalReached) throw DemoError("demo sample with goal_reached command");
    bool clamped = false;
    s.action = wire::control_from_json(j.at("action"), &clamped);
    if (clamped) throw DemoError("demo action out of range");
    s.applied = wire::control_from_json(j.at("applied"), &clamped);
    if (clamped) throw DemoError("demo applied action out of range");
    s.speed_kmh = j.at("speed_kmh").get<double>();
    s.frame = wire::frame_from_json(j.at("frame"));
    return s;
  } catch (const json::exception& e) {
    throw DemoError(std::string("demo sample: ") + e.what());
  } catch (const DecodeError& e) {
    throw DemoError(std::string("demo sample: ") + e.what());
  }
}

DemoWriter::DemoWriter(const std::filesystem::path& path) : path_(path) {
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw DemoError("cannot open " + path.string() + " for writing");
}

void DemoWriter::line(const json& j) {
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw DemoError("write failed on " + path_.string());
}

void DemoWriter::begin(const DemoHeader& header) {
  line(to_json(header));
  open_episode_ = true;
}

void DemoWriter::write(const DemoSample& sample) {
  if (!open_episode_) throw DemoError("demo sample written before a header");
  if (sample.command == HighLevelCommand::GoalReached) throw DemoError("goal_reached is not a driving command");
  line(to_json(sample));
  ++samples_;
}

std::vector<DemoEpisode> read_demo(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DemoError("cannot open " + path.string());
  std::vector<DemoEpisode> episodes;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    const bool last_unterminated = in.eof();
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception&) {
      if (last_unterminated) break;
      throw DemoError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    try {
      if (j.is_object() && j.value("type", "") == "demo_header") {
        episodes.push_back({demo_header_from_json(j), {}});
      } else {
        if (episodes.empty()) throw DemoError("sample before any header");
        episodes.back().samples.push_back(demo_sample_from_json(j));
      }
    } catch (const DemoError& e) {
      throw DemoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return episodes;
}

// --- recording ------------------------------------------------------------------

namespace {

RoutePlan plan_to_random_goal(const TownMap& town, const Pose& from, Rng& rng) {
  const auto& spawns = town.spawns.player;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Pose& goal = spawns[rng.index(spawns.size())];
    if (distance(goal.position, from.position) < 50.0) continue;
    try {
      return plan(town, from, goal);
    } catch (const RouteError&) {
    }
  }
  throw DemoError("no reachable goal from the current pose");
}

}  // namespace

RecordStats record_demo(Env& env, Agent& expert, const RecordOptions& opts, DemoWriter& out) {
  const TownMap& town = env.town();
  DemoHeader header;
  header.town = town.id;
  header.expert = expert.name();
  header.meta = opts.meta;
  header.perturbation = opts.perturbation;
  out.begin(header);

  Rng goals(mix_seed(opts.goal_seed));
  PerturbationStream noise(opts.perturbation);
  SensorFrame frame = env.reset(opts.meta);
  expert.reset(town);
  RouteFollower route(town, plan_to_random_goal(town, pose_of(frame.measurements), goals));
  RecordStats stats;
  for (std::int64_t i = 0; i < opts.ticks; ++i) {
    const Pose pose = pose_of(frame.measurements);
    route.update(pose);
    if (route.command() == HighLevelCommand::GoalReached) {
      ++stats.goals_reached;
      route = RouteFollower(town, plan_to_random_goal(town, pose, goals));
      route.update(pose);
    }
    DemoSample s;
    s.tick = frame.tick;
    s.command = route.command();
    s.action = clamp_control(expert.act(frame, s.command));
    s.applied = s.action;
    s.applied.steer = noise.apply(frame.tick, s.action.steer);
    s.speed_kmh = frame.measurements.speed_kmh;
    s.frame = std::move(frame);
    out.write(s);
    ++stats.samples;
    frame = env.step(s.applied, s.command);
  }
  stats.impulses = noise.impulses();
  return stats;
}

namespace {

/// First differing top-level key of two JSON objects, for divergence reports.
std::string first_difference(const json& a, const json& b) {
  for (const auto& [k, v] : a.items())
    if (!b.contains(k) || b[k] != v) return k;
  return "frame";
}

}  // namespace

ReplayResult replay_demo(Env& env, const DemoEpisode& episode) {
  ReplayResult r;
  if (episode.samples.empty()) return r;
  SensorFrame frame = env.reset(episode.header.meta);
  for (const auto& s : episode.samples) {
    if (!(frame == s.frame)) {
      r.ok = false;
      r.divergence_tick = s.tick;
      if (!(frame.measurements == s.frame.measurements))
        r.detail = "measurements." + first_difference(wire::to_json(s.frame.measurements), wire::to_json(frame.measurements));
      else if (frame.tick != s.frame.tick)
        r.detail = "tick";
      else
        r.detail = "scans";
      return r;
    }
    frame = env.step(s.applied, s.command);
    ++r.ticks;
  }
  return r;
}

}  // namespace microcarla
