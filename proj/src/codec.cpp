#include "microcarla/codec.hpp"

#include <bit>
#include <cmath>
#include <initializer_list>
#include <limits>

#include <openssl/evp.h>

namespace microcarla {

using nlohmann::json;

std::string to_string(DecodeError::Kind k) {
  switch (k) {
    case DecodeError::Kind::Truncated: return "truncated";
    case DecodeError::Kind::Oversize: return "oversize";
    case DecodeError::Kind::Schema: return "schema";
  }
  return "schema";
}

namespace {

[[noreturn]] void schema(const std::string& what) { throw DecodeError(DecodeError::Kind::Schema, what); }

/// Rejects keys outside `allowed`; the object check comes first.
const json& object(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) schema(std::string(what) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) schema(std::string(what) + ": unknown field '" + k + "'");
  }
  return j;
}

const json& field(const json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) schema(std::string(what) + ": missing field '" + key + "'");
  return *it;
}

double number(const json& v, const char* key) {
  if (!v.is_number()) schema(std::string("'") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) schema(std::string("'") + key + "' must be finite");
  return d;
}

std::int64_t integer(const json& v, const char* key, std::int64_t lo = std::numeric_limits<std::int64_t>::min(),
                     std::int64_t hi = std::numeric_limits<std::int64_t>::max()) {
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(hi)) schema(std::string("'") + key + "' out of range");
    return static_cast<std::int64_t>(u);
  }
  if (!v.is_number_integer()) schema(std::string("'") + key + "' must be an integer");
  const auto i = v.get<std::int64_t>();
  if (i < lo || i > hi) schema(std::string("'") + key + "' out of range");
  return i;
}

std::uint64_t unsigned64(const json& v, const char* key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  schema(std::string("'") + key + "' must be a non-negative integer");
}

int int32(const json& v, const char* key) {
  return static_cast<int>(integer(v, key, std::numeric_limits<int>::min(), std::numeric_limits<int>::max()));
}

bool boolean(const json& v, const char* key) {
  if (!v.is_boolean()) schema(std::string("'") + key + "' must be a boolean");
  return v.get<bool>();
}

const std::string& text(const json& v, const char* key) {
  if (!v.is_string()) schema(std::string("'") + key + "' must be a string");
  return v.get_ref<const std::string&>();
}

json vec(Vec2 v) { return json::array({v.x, v.y}); }

Vec2 vec_from(const json& v, const char* key) {
  if (!v.is_array() || v.size() != 2) schema(std::string("'") + key + "' must be [x, y]");
  return {number(v[0], key), number(v[1], key)};
}

std::optional<LightState> light_from_string(const std::string& s) {
  for (auto l : {LightState::Red, LightState::Yellow, LightState::Green})
    if (to_string(l) == s) return l;
  return std::nullopt;
}

/// nlohmann recurses per nesting level; bound it before parsing hostile input.
bool nesting_ok(std::string_view s, int limit) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (char c : s) {
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '[' || c == '{') {
      if (++depth > limit) return false;
    } else if (c == ']' || c == '}') --depth;
  }
  return true;
}

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

namespace wire {

std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  if (n == 0) return out;
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view in) {
  if (in.size() % 4 != 0) schema("base64 length must be a multiple of 4");
  for (std::size_t i = 0; i < in.size(); ++i) {
    const char c = in[i];
    const bool pad_ok = c == '=' && i + 2 >= in.size() && (i + 1 == in.size() || in[i + 1] == '=');
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' || pad_ok))
      schema("invalid base64 character");
  }
  std::vector<std::uint8_t> out(3 * in.size() / 4);
  if (in.empty()) return out;
  const int len = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(in.data()),
                                  static_cast<int>(in.size()));
  if (len < 0) schema("invalid base64");
  std::size_t pad = 0;
  if (in.back() == '=') ++pad;
  if (in.size() >= 2 && in[in.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(len) - pad);
  return out;
}

json to_json(const Control& c) {
  return {{"steer", c.steer}, {"throttle", c.throttle}, {"brake", c.brake}, {"hand_brake", c.hand_brake},
          {"reverse", c.reverse}};
}

Control control_from_json(const json& j, bool* clamped) {
  object(j, {"steer", "throttle", "brake", "hand_brake", "reverse"}, "control");
  Control c;
  if (j.contains("steer")) c.steer = number(j["steer"], "steer");
  if (j.contains("throttle")) c.throttle = number(j["throttle"], "throttle");
  if (j.contains("brake")) c.brake = number(j["brake"], "brake");
  if (j.contains("hand_brake")) c.hand_brake = boolean(j["hand_brake"], "hand_brake");
  if (j.contains("reverse")) c.reverse = boolean(j["reverse"], "reverse");
  return clamp_control(c, clamped);
}

json to_json(const CameraConfig& c) {
  return {{"kind", to_string(c.kind)}, {"x", c.x},     {"y", c.y},
          {"yaw", c.yaw},              {"fov", c.fov}, {"ray_count", c.ray_count},
          {"max_range", c.max_range}};
}

CameraConfig camera_from_json(const json& j) {
  object(j, {"kind", "x", "y", "yaw", "fov", "ray_count", "max_range"}, "camera");
  CameraConfig c;
  const auto kind = camera_kind_from_string(text(field(j, "kind", "camera"), "kind"));
  if (!kind) schema("camera: unknown kind");
  c.kind = *kind;
  if (j.contains("x")) c.x = number(j["x"], "x");
  if (j.contains("y")) c.y = number(j["y"], "y");
  if (j.contains("yaw")) c.yaw = number(j["yaw"], "yaw");
  if (j.contains("fov")) c.fov = number(j["fov"], "fov");
  if (j.contains("ray_count")) c.ray_count = int32(j["ray_count"], "ray_count");
  if (j.contains("max_range")) c.max_range = number(j["max_range"], "max_range");
  return c;
}

json to_json(const MetaCommand& m) {
  json cams = json::array();
  for (const auto& c : m.cameras) cams.push_back(to_json(c));
  return {{"num_vehicles", m.num_vehicles},
          {"num_pedestrians", m.num_pedestrians},
          {"weather", m.weather},
          {"seed_vehicles", m.seed_vehicles},
          {"seed_pedestrians", m.seed_pedestrians},
          {"cameras", cams},
          {"player_spawn_index", m.player_spawn_index}};
}

MetaCommand meta_from_json(const json& j) {
  object(j,
         {"num_vehicles", "num_pedestrians", "weather", "seed_vehicles", "seed_pedestrians", "cameras",
          "player_spawn_index"},
         "meta");
  MetaCommand m;
  if (j.contains("num_vehicles")) m.num_vehicles = int32(j["num_vehicles"], "num_vehicles");
  if (j.contains("num_pedestrians")) m.num_pedestrians = int32(j["num_pedestrians"], "num_pedestrians");
  if (m.num_vehicles < 0 || m.num_pedestrians < 0) schema("meta: agent counts must be >= 0");
  if (j.contains("weather")) m.weather = int32(j["weather"], "weather");
  if (j.contains("seed_vehicles")) m.seed_vehicles = unsigned64(j["seed_vehicles"], "seed_vehicles");
  if (j.contains("seed_pedestrians")) m.seed_pedestrians = unsigned64(j["seed_pedestrians"], "seed_pedestrians");
  if (j.contains("cameras")) {
    if (!j["cameras"].is_array()) schema("meta: cameras must be a list");
    for (const auto& c : j["cameras"]) m.cameras.push_back(camera_from_json(c));
  }
  if (j.contains("player_spawn_index")) m.player_spawn_index = int32(j["player_spawn_index"], "player_spawn_index");
  return m;
}

json to_json(const Measurements& m) {
  json agents = json::array();
  for (const auto& a : m.agents)
    agents.push_back({{"kind", a.kind == AgentInfo::Kind::Vehicle ? "vehicle" : "pedestrian"},
                      {"id", a.id},
                      {"position", vec(a.pose.position)},
                      {"heading", a.pose.heading},
                      {"length", a.length},
                      {"width", a.width},
                      {"speed", a.speed}});
  json lights = json::array();
  for (const auto& l : m.lights)
    lights.push_back({{"id", l.id}, {"position", vec(l.position)}, {"state", to_string(l.state)}});
  json limits = json::array();
  for (const auto& s : m.speed_limits) limits.push_back({{"position", vec(s.position)}, {"limit_kmh", s.limit_kmh}});
  return {{"tick", m.tick},
          {"sim_time", m.sim_time},
          {"position", vec(m.position)},
          {"orientation", vec(m.orientation)},
          {"speed_kmh", m.speed_kmh},
          {"acceleration", vec(m.acceleration)},
          {"collision_car", m.collision_car},
          {"collision_pedestrian", m.collision_pedestrian},
          {"collision_static", m.collision_static},
          {"opposite_lane", m.opposite_lane},
          {"sidewalk", m.sidewalk},
          {"agents", agents},
          {"lights", lights},
          {"speed_limits", limits}};
}

Measurements measurements_from_json(const json& j) {
  static const char* w = "measurements";
  object(j,
         {"tick", "sim_time", "position", "orientation", "speed_kmh", "acceleration", "collision_car",
          "collision_pedestrian", "collision_static", "opposite_lane", "sidewalk", "agents", "lights",
          "speed_limits"},
         w);
  Measurements m;
  m.tick = integer(field(j, "tick", w), "tick", 0);
  m.sim_time = number(field(j, "sim_time", w), "sim_time");
  m.position = vec_from(field(j, "position", w), "position");
  m.orientation = vec_from(field(j, "orientation", w), "orientation");
  m.speed_kmh = number(field(j, "speed_kmh", w), "speed_kmh");
  m.acceleration = vec_from(field(j, "acceleration", w), "acceleration");
  m.collision_car = number(field(j, "collision_car", w), "collision_car");
  m.collision_pedestrian = number(field(j, "collision_pedestrian", w), "collision_pedestrian");
  m.collision_static = number(field(j, "collision_static", w), "collision_static");
  m.opposite_lane = number(field(j, "opposite_lane", w), "opposite_lane");
  m.sidewalk = number(field(j, "sidewalk", w), "sidewalk");
  const json& agents = field(j, "agents", w);
  if (!agents.is_array()) schema("agents must be a list");
  for (const auto& a : agents) {
    object(a, {"kind", "id", "position", "heading", "length", "width", "speed"}, "agent");
    AgentInfo info;
    const std::string& kind = text(field(a, "kind", "agent"), "kind");
    if (kind == "vehicle") info.kind = AgentInfo::Kind::Vehicle;
    else if (kind == "pedestrian") info.kind = AgentInfo::Kind::Pedestrian;
    else schema("agent: unknown kind");
    info.id = int32(field(a, "id", "agent"), "id");
    info.pose.position = vec_from(field(a, "position", "agent"), "position");
    info.pose.heading = number(field(a, "heading", "agent"), "heading");
    info.length = number(field(a, "length", "agent"), "length");
    info.width = number(field(a, "width", "agent"), "width");
    info.speed = number(field(a, "speed", "agent"), "speed");
    m.agents.push_back(info);
  }
  const json& lights = field(j, "lights", w);
  if (!lights.is_array()) schema("lights must be a list");
  for (const auto& l : lights) {
    object(l, {"id", "position", "state"}, "light");
    LightInfo info;
    info.id = int32(field(l, "id", "light"), "id");
    info.position = vec_from(field(l, "position", "light"), "position");
    const auto st = light_from_string(text(field(l, "state", "light"), "state"));
    if (!st) schema("light: unknown state");
    info.state = *st;
    m.lights.push_back(info);
  }
  const json& limits = field(j, "speed_limits", w);
  if (!limits.is_array()) schema("speed_limits must be a list");
  for (const auto& s : limits) {
    object(s, {"position", "limit_kmh"}, "speed_limit");
    m.speed_limits.push_back({vec_from(field(s, "position", "speed_limit"), "position"),
                              number(field(s, "limit_kmh", "speed_limit"), "limit_kmh")});
  }
  return m;
}

json to_json(const Scan& s) {
  std::string data;
  std::size_t n = 0;
  if (s.kind == CameraKind::Depth) {
    n = s.depths.size();
    std::vector<std::uint8_t> bytes(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = std::bit_cast<std::uint32_t>(s.depths[i]);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
    }
    data = base64_encode(bytes.data(), bytes.size());
  } else {
    n = s.classes.size();
    data = base64_encode(s.classes.data(), n);
  }
  return {{"kind", to_string(s.kind)}, {"count", n}, {"data", data}};
}

Scan scan_from_json(const json& j) {
  object(j, {"kind", "count", "data"}, "scan");
  Scan s;
  const auto kind = camera_kind_from_string(text(field(j, "kind", "scan"), "kind"));
  if (!kind) schema("scan: unknown kind");
  s.kind = *kind;
  const auto n = static_cast<std::size_t>(integer(field(j, "count", "scan"), "count", 0, 1 << 24));
  const auto bytes = base64_decode(text(field(j, "data", "scan"), "data"));
  if (s.kind == CameraKind::Depth) {
    if (bytes.size() != 4 * n) schema("scan: depth payload size mismatch");
    s.depths.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
      s.depths[i] = std::bit_cast<float>(u);
    }
  } else {
    if (bytes.size() != n) schema("scan: class payload size mismatch");
    for (auto c : bytes)
      if (c >= kSemanticClassCount) schema("scan: class id outside the palette");
    s.classes = bytes;
  }
  return s;
}

json to_json(const SensorFrame& f) {
  json scans = json::array();
  for (const auto& s : f.scans) scans.push_back(to_json(s));
  return {{"tick", f.tick}, {"measurements", to_json(f.measurements)}, {"scans", scans}};
}

SensorFrame frame_from_json(const json& j) {
  object(j, {"tick", "measurements", "scans"}, "frame");
  SensorFrame f;
  f.tick = integer(field(j, "tick", "frame"), "tick", 0);
  f.measurements = measurements_from_json(field(j, "measurements", "frame"));
  const json& scans = field(j, "scans", "frame");
  if (!scans.is_array()) schema("frame: scans must be a list");
  for (const auto& s : scans) f.scans.push_back(scan_from_json(s));
  return f;
}

HighLevelCommand command_from_json(const json& j) {
  const auto c = command_from_string(text(j, "command"));
  if (!c) schema("unknown command");
  return *c;
}

}  // namespace wire

std::string type_name(const Message& m) {
  static const char* names[] = {"hello", "meta",  "control", "frame",       "error",       "town_request", "town",
                                "record", "record_ack", "close", "agent_reset", "agent_ready", "agent_act", "action"};
  return names[m.index()];
}

namespace {

json to_json(const Message& m) {
  json j = std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, msg::Hello>) {
          json o{{"version", v.version}};
          if (!v.town.empty()) o["town"] = v.town;
          return o;
        } else if constexpr (std::is_same_v<T, msg::Meta>) {
          return {{"meta", wire::to_json(v.meta)}};
        } else if constexpr (std::is_same_v<T, msg::ControlMsg>) {
          json o{{"control", wire::to_json(v.control)}};
          if (v.command) o["command"] = to_string(*v.command);
          return o;
        } else if constexpr (std::is_same_v<T, msg::Frame>) {
          json o{{"frame", wire::to_json(v.frame)}};
          if (v.clamped) o["clamped"] = true;
          return o;
        } else if constexpr (std::is_same_v<T, msg::Error>) {
          return {{"kind", v.kind}, {"message", v.message}};
        } else if constexpr (std::is_same_v<T, msg::Town>) {
          return {{"town", v.town}};
        } else if constexpr (std::is_same_v<T, msg::Record>) {
          json o{{"on", v.on}};
          if (!v.path.empty()) o["path"] = v.path;
          return o;
        } else if constexpr (std::is_same_v<T, msg::RecordAck>) {
          return {{"on", v.on}, {"path", v.path}, {"samples", v.samples}};
        } else if constexpr (std::is_same_v<T, msg::AgentReset>) {
          return {{"town", v.town}};
        } else if constexpr (std::is_same_v<T, msg::AgentReady>) {
          return {{"name", v.name}};
        } else if constexpr (std::is_same_v<T, msg::AgentAct>) {
          return {{"frame", wire::to_json(v.frame)}, {"command", to_string(v.command)}};
        } else if constexpr (std::is_same_v<T, msg::Action>) {
          return {{"control", wire::to_json(v.control)}};
        } else {
          return json::object();
        }
      },
      m);
  j["type"] = type_name(m);
  return j;
}

Message from_json(const json& j) {
  if (!j.is_object()) schema("message must be a JSON object");
  auto it = j.find("type");
  if (it == j.end() || !it->is_string()) schema("message needs a string 'type'");
  const std::string& type = it->get_ref<const std::string&>();
  if (type == "hello") {
    object(j, {"type", "version", "town"}, "hello");
    msg::Hello h;
    h.version = text(field(j, "version", "hello"), "version");
    if (j.contains("town")) h.town = text(j["town"], "town");
    return h;
  }
  if (type == "meta") {
    object(j, {"type", "meta"}, "meta");
    return msg::Meta{wire::meta_from_json(field(j, "meta", "meta"))};
  }
  if (type == "control") {
    object(j, {"type", "control", "command"}, "control");
    msg::ControlMsg c;
    c.control = wire::control_from_json(field(j, "control", "control"), &c.clamped);
    if (j.contains("command")) c.command = wire::command_from_json(j["command"]);
    return c;
  }
  if (type == "frame") {
    object(j, {"type", "frame", "clamped"}, "frame");
    msg::Frame f;
    f.frame = wire::frame_from_json(field(j, "frame", "frame"));
    if (j.contains("clamped")) f.clamped = boolean(j["clamped"], "clamped");
    return f;
  }
  if (type == "error") {
    object(j, {"type", "kind", "message"}, "error");
    return msg::Error{text(field(j, "kind", "error"), "kind"), text(field(j, "message", "error"), "message")};
  }
  if (type == "town_request") {
    object(j, {"type"}, "town_request");
    return msg::TownRequest{};
  }
  if (type == "town") {
    object(j, {"type", "town"}, "town");
    const json& t = field(j, "town", "town");
    if (!t.is_object()) schema("town payload must be an object");
    return msg::Town{t};
  }
  if (type == "record") {
    object(j, {"type", "on", "path"}, "record");
    msg::Record r;
    r.on = boolean(field(j, "on", "record"), "on");
    if (j.contains("path")) r.path = text(j["path"], "path");
    return r;
  }
  if (type == "record_ack") {
    object(j, {"type", "on", "path", "samples"}, "record_ack");
    return msg::RecordAck{boolean(field(j, "on", "record_ack"), "on"), text(field(j, "path", "record_ack"), "path"),
                          integer(field(j, "samples", "record_ack"), "samples", 0)};
  }
  if (type == "close") {
    object(j, {"type"}, "close");
    return msg::Close{};
  }
  if (type == "agent_reset") {
    object(j, {"type", "town"}, "agent_reset");
    return msg::AgentReset{text(field(j, "town", "agent_reset"), "town")};
  }
  if (type == "agent_ready") {
    object(j, {"type", "name"}, "agent_ready");
    return msg::AgentReady{text(field(j, "name", "agent_ready"), "name")};
  }
  if (type == "agent_act") {
    object(j, {"type", "frame", "command"}, "agent_act");
    return msg::AgentAct{wire::frame_from_json(field(j, "frame", "agent_act")),
                         wire::command_from_json(field(j, "command", "agent_act"))};
  }
  if (type == "action") {
    object(j, {"type", "control"}, "action");
    return msg::Action{wire::control_from_json(field(j, "control", "action"))};
  }
  schema("unknown message type '" + type + "'");
}

}  // namespace

std::string encode_payload(const Message& m) { return dump(to_json(m)); }

Message decode_payload(std::string_view text) {
  if (!nesting_ok(text, 64)) schema("JSON nested too deeply");
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    schema(std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

std::string encode(const Message& m) {
  const std::string payload = encode_payload(m);
  if (payload.size() > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "message exceeds 16 MiB");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((n >> s) & 0xff));
  out += payload;
  return out;
}

namespace {
std::uint32_t read_length(std::string_view b) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[0])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[3]));
}
}  // namespace

Message decode(std::string_view frame) {
  if (frame.size() < 4) throw DecodeError(DecodeError::Kind::Truncated, "frame shorter than its header");
  const std::uint32_t n = read_length(frame);
  if (n > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "declared length exceeds 16 MiB");
  if (frame.size() - 4 < n) throw DecodeError(DecodeError::Kind::Truncated, "frame shorter than declared length");
  if (frame.size() - 4 > n) schema("trailing bytes after frame");
  return decode_payload(frame.substr(4));
}

std::optional<std::string> FrameReader::next() {
  if (buffer_.size() < 4) return std::nullopt;
  const std::uint32_t n = read_length(buffer_);
  if (n > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "declared length exceeds 16 MiB");
  if (buffer_.size() - 4 < n) return std::nullopt;
  std::string payload = buffer_.substr(4, n);
  buffer_.erase(0, 4 + n);
  return payload;
}

}  // namespace microcarla
