#include "microcarla/town.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace microcarla {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const char* const kClassNames[kSemanticClassCount] = {
    "road", "lane_marking", "traffic_sign", "sidewalk", "fence", "pole",
    "wall", "building", "vegetation", "vehicle", "pedestrian", "other"};

[[noreturn]] void parse_fail(const std::string& msg) {
  throw TownError(TownError::Kind::Parse, "schema", "town file: " + msg);
}

[[noreturn]] void invalid(const std::string& invariant, const std::string& msg) {
  throw TownError(TownError::Kind::Validation, invariant,
                  "town invariant '" + invariant + "' violated: " + msg);
}

void require_object(const json& j, const std::string& ctx, std::initializer_list<const char*> keys) {
  if (!j.is_object()) parse_fail(ctx + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) parse_fail("unknown key '" + k + "' in " + ctx);
  for (const auto* k : keys)
    if (!j.contains(k)) parse_fail("missing key '" + std::string(k) + "' in " + ctx);
}

double num(const json& j, const std::string& ctx) {
  if (!j.is_number()) parse_fail(ctx + " must be a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) parse_fail(ctx + " must be an integer");
  return j.get<int>();
}

Vec2 point(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2) parse_fail(ctx + " must be [x, y]");
  return {num(j[0], ctx), num(j[1], ctx)};
}

Pose pose(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) parse_fail(ctx + " must be [x, y, heading]");
  return {{num(j[0], ctx), num(j[1], ctx)}, num(j[2], ctx)};
}

Polygon polygon(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() < 3) parse_fail(ctx + " must be a polygon of >= 3 points");
  Polygon p;
  for (const auto& q : j) p.push_back(point(q, ctx));
  return p;
}

template <typename T, typename F>
std::vector<T> array_of(const json& j, const std::string& ctx, F&& f) {
  if (!j.is_array()) parse_fail(ctx + " must be an array");
  std::vector<T> out;
  out.reserve(j.size());
  for (size_t i = 0; i < j.size(); ++i) out.push_back(f(j[i], ctx + "[" + std::to_string(i) + "]"));
  return out;
}

json to_json(Vec2 p) { return json::array({p.x, p.y}); }
json to_json(const Pose& p) { return json::array({p.position.x, p.position.y, p.heading}); }
json to_json(const Polygon& poly) {
  json a = json::array();
  for (const auto& p : poly) a.push_back(to_json(p));
  return a;
}

/// Distance from `origin` (inside a convex polygon) to its boundary along `dir`.
double exit_distance(const Polygon& poly, Vec2 origin, Vec2 dir) {
  double best = kInf;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    auto t = ray_segment(origin, dir, poly[i], poly[(i + 1) % n]);
    if (t && *t > 1e-12) best = std::min(best, *t);
  }
  return std::isfinite(best) ? best : 0.0;
}

/// Offsets a polyline sideways (left positive) with mitred joints.
std::vector<Vec2> offset_polyline(const std::vector<Vec2>& line, double offset) {
  const size_t n = line.size();
  std::vector<Vec2> out(n);
  for (size_t i = 0; i < n; ++i) {
    if (i == 0 || i == n - 1) {
      const Vec2 d = i == 0 ? normalized(line[1] - line[0]) : normalized(line[n - 1] - line[n - 2]);
      out[i] = line[i] + perp(d) * offset;
      continue;
    }
    const Vec2 d0 = normalized(line[i] - line[i - 1]);
    const Vec2 d1 = normalized(line[i + 1] - line[i]);
    const Vec2 bis = normalized(perp(d0) + perp(d1));
    const double c = dot(bis, perp(d0));
    out[i] = line[i] + bis * (offset / std::max(c, 0.2));
  }
  return out;
}

std::vector<Vec2> edge_polyline(const TownMap& t, const DirectedEdge& e) {
  std::vector<Vec2> line = t.roads[e.road_index].centerline;
  if (!e.forward) std::reverse(line.begin(), line.end());
  return line;
}

}  // namespace

std::string to_string(SemanticClass c) { return kClassNames[static_cast<int>(c)]; }

std::optional<SemanticClass> semantic_class_from_string(const std::string& s) {
  for (int i = 0; i < kSemanticClassCount; ++i)
    if (s == kClassNames[i]) return static_cast<SemanticClass>(i);
  return std::nullopt;
}

std::string to_string(LightState s) {
  switch (s) {
    case LightState::Red: return "red";
    case LightState::Yellow: return "yellow";
    case LightState::Green: return "green";
  }
  return "red";
}

std::string to_string(RegionKind k) {
  switch (k) {
    case RegionKind::OwnLane: return "own_lane";
    case RegionKind::OppositeLane: return "opposite_lane";
    case RegionKind::Sidewalk: return "sidewalk";
    case RegionKind::IntersectionBox: return "intersection_box";
    case RegionKind::OffMap: return "off_map";
  }
  return "off_map";
}

std::string to_string(TurnLabel t) {
  switch (t) {
    case TurnLabel::Straight: return "straight";
    case TurnLabel::Left: return "left";
    case TurnLabel::Right: return "right";
  }
  return "straight";
}

double RoadSegment::length() const {
  double l = 0.0;
  for (size_t i = 1; i < centerline.size(); ++i) l += distance(centerline[i - 1], centerline[i]);
  return l;
}

LightState TrafficLight::state_at(double t) const {
  double phase = std::fmod(t - green_start, cycle);
  if (phase < 0.0) phase += cycle;
  if (phase < green) return LightState::Green;
  if (phase < green + yellow) return LightState::Yellow;
  return LightState::Red;
}

// --- NavCostGrid ------------------------------------------------------------

NavCostGrid::NavCostGrid(Vec2 origin, double cell_size, int width, int height,
                         std::map<char, std::optional<double>> legend, std::vector<std::string> rows)
    : origin_(origin), cell_size_(cell_size), width_(width), height_(height),
      legend_(std::move(legend)), rows_(std::move(rows)) {
  costs_.assign(static_cast<size_t>(width_) * height_, kInf);
  min_cost_ = kInf;
  for (int j = 0; j < height_ && j < static_cast<int>(rows_.size()); ++j) {
    const auto& row = rows_[j];
    for (int i = 0; i < width_ && i < static_cast<int>(row.size()); ++i) {
      auto it = legend_.find(row[i]);
      if (it != legend_.end() && it->second) {
        costs_[static_cast<size_t>(j) * width_ + i] = *it->second;
        min_cost_ = std::min(min_cost_, *it->second);
      }
    }
  }
}

double NavCostGrid::cost(int i, int j) const {
  if (!in_grid(i, j)) return kInf;
  return costs_[static_cast<size_t>(j) * width_ + i];
}

std::pair<int, int> NavCostGrid::cell_of(Vec2 p) const {
  return {static_cast<int>(std::floor((p.x - origin_.x) / cell_size_)),
          static_cast<int>(std::floor((p.y - origin_.y) / cell_size_))};
}

Vec2 NavCostGrid::center_of(int i, int j) const {
  return {origin_.x + (i + 0.5) * cell_size_, origin_.y + (j + 0.5) * cell_size_};
}

double NavCostGrid::cost_at(Vec2 p) const {
  const auto [i, j] = cell_of(p);
  return cost(i, j);
}

// --- parsing ----------------------------------------------------------------

TownMap parse_town(const json& j) {
  require_object(j, "town", {"id", "roads", "intersections", "sidewalks", "obstacles", "spawns",
                             "lights", "speed_limits", "nav_grid", "declared_km"});
  TownMap t;
  if (!j["id"].is_string()) parse_fail("id must be a string");
  t.id = j["id"].get<std::string>();

  t.roads = array_of<RoadSegment>(j["roads"], "roads", [](const json& r, const std::string& ctx) {
    require_object(r, ctx, {"id", "centerline", "lanes_per_direction", "lane_width", "speed_limit", "from", "to"});
    RoadSegment s;
    s.id = integer(r["id"], ctx + ".id");
    s.centerline = array_of<Vec2>(r["centerline"], ctx + ".centerline", point);
    s.lanes_per_direction = integer(r["lanes_per_direction"], ctx + ".lanes_per_direction");
    s.lane_width = num(r["lane_width"], ctx + ".lane_width");
    s.speed_limit_kmh = num(r["speed_limit"], ctx + ".speed_limit");
    s.from_node = integer(r["from"], ctx + ".from");
    s.to_node = integer(r["to"], ctx + ".to");
    return s;
  });
  t.intersections = array_of<IntersectionNode>(j["intersections"], "intersections",
                                               [](const json& n, const std::string& ctx) {
    require_object(n, ctx, {"id", "position", "box"});
    return IntersectionNode{integer(n["id"], ctx + ".id"), point(n["position"], ctx + ".position"),
                            polygon(n["box"], ctx + ".box")};
  });
  t.sidewalks = array_of<Polygon>(j["sidewalks"], "sidewalks", polygon);
  t.obstacles = array_of<Obstacle>(j["obstacles"], "obstacles", [](const json& o, const std::string& ctx) {
    require_object(o, ctx, {"class", "polygon"});
    if (!o["class"].is_string()) parse_fail(ctx + ".class must be a string");
    auto cls = semantic_class_from_string(o["class"].get<std::string>());
    if (!cls) parse_fail(ctx + ".class is not a palette class");
    return Obstacle{*cls, polygon(o["polygon"], ctx + ".polygon")};
  });

  const json& sp = j["spawns"];
  require_object(sp, "spawns", {"player", "vehicles", "pedestrians"});
  t.spawns.player = array_of<Pose>(sp["player"], "spawns.player", pose);
  t.spawns.vehicles = array_of<Pose>(sp["vehicles"], "spawns.vehicles", pose);
  t.spawns.pedestrians = array_of<Vec2>(sp["pedestrians"], "spawns.pedestrians", point);

  t.lights = array_of<TrafficLight>(j["lights"], "lights", [](const json& l, const std::string& ctx) {
    require_object(l, ctx, {"id", "position", "intersection", "road", "cycle", "green_start", "green", "yellow"});
    TrafficLight tl;
    tl.id = integer(l["id"], ctx + ".id");
    tl.position = point(l["position"], ctx + ".position");
    tl.intersection = integer(l["intersection"], ctx + ".intersection");
    tl.road = integer(l["road"], ctx + ".road");
    tl.cycle = num(l["cycle"], ctx + ".cycle");
    tl.green_start = num(l["green_start"], ctx + ".green_start");
    tl.green = num(l["green"], ctx + ".green");
    tl.yellow = num(l["yellow"], ctx + ".yellow");
    return tl;
  });
  t.speed_limits = array_of<SpeedLimitSign>(j["speed_limits"], "speed_limits",
                                            [](const json& s, const std::string& ctx) {
    require_object(s, ctx, {"position", "limit_kmh"});
    return SpeedLimitSign{point(s["position"], ctx + ".position"), num(s["limit_kmh"], ctx + ".limit_kmh")};
  });

  const json& g = j["nav_grid"];
  require_object(g, "nav_grid", {"origin", "cell_size", "width", "height", "legend", "rows"});
  std::map<char, std::optional<double>> legend;
  if (!g["legend"].is_object()) parse_fail("nav_grid.legend must be an object");
  for (const auto& [k, v] : g["legend"].items()) {
    if (k.size() != 1) parse_fail("nav_grid.legend keys must be single characters");
    if (v.is_null()) legend[k[0]] = std::nullopt;
    else legend[k[0]] = num(v, "nav_grid.legend." + k);
  }
  auto rows = array_of<std::string>(g["rows"], "nav_grid.rows", [](const json& r, const std::string& ctx) {
    if (!r.is_string()) parse_fail(ctx + " must be a string");
    return r.get<std::string>();
  });
  t.nav_grid = NavCostGrid(point(g["origin"], "nav_grid.origin"), num(g["cell_size"], "nav_grid.cell_size"),
                           integer(g["width"], "nav_grid.width"), integer(g["height"], "nav_grid.height"),
                           std::move(legend), std::move(rows));
  t.declared_km = num(j["declared_km"], "declared_km");
  t.finalize();
  return t;
}

TownMap load_town(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TownError(TownError::Kind::Io, "file", "cannot open town file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw TownError(TownError::Kind::Parse, "json", std::string("malformed town file: ") + e.what());
  }
  return parse_town(j);
}

json town_to_json(const TownMap& t) {
  json j;
  j["id"] = t.id;
  j["roads"] = json::array();
  for (const auto& r : t.roads) {
    json c = json::array();
    for (const auto& p : r.centerline) c.push_back(to_json(p));
    j["roads"].push_back({{"id", r.id}, {"centerline", c}, {"lanes_per_direction", r.lanes_per_direction},
                          {"lane_width", r.lane_width}, {"speed_limit", r.speed_limit_kmh},
                          {"from", r.from_node}, {"to", r.to_node}});
  }
  j["intersections"] = json::array();
  for (const auto& n : t.intersections)
    j["intersections"].push_back({{"id", n.id}, {"position", to_json(n.position)}, {"box", to_json(n.box)}});
  j["sidewalks"] = json::array();
  for (const auto& s : t.sidewalks) j["sidewalks"].push_back(to_json(s));
  j["obstacles"] = json::array();
  for (const auto& o : t.obstacles)
    j["obstacles"].push_back({{"class", to_string(o.cls)}, {"polygon", to_json(o.polygon)}});
  json sp;
  sp["player"] = json::array();
  for (const auto& p : t.spawns.player) sp["player"].push_back(to_json(p));
  sp["vehicles"] = json::array();
  for (const auto& p : t.spawns.vehicles) sp["vehicles"].push_back(to_json(p));
  sp["pedestrians"] = json::array();
  for (const auto& p : t.spawns.pedestrians) sp["pedestrians"].push_back(to_json(p));
  j["spawns"] = sp;
  j["lights"] = json::array();
  for (const auto& l : t.lights)
    j["lights"].push_back({{"id", l.id}, {"position", to_json(l.position)}, {"intersection", l.intersection},
                           {"road", l.road}, {"cycle", l.cycle}, {"green_start", l.green_start},
                           {"green", l.green}, {"yellow", l.yellow}});
  j["speed_limits"] = json::array();
  for (const auto& s : t.speed_limits)
    j["speed_limits"].push_back({{"position", to_json(s.position)}, {"limit_kmh", s.limit_kmh}});
  json legend = json::object();
  for (const auto& [k, v] : t.nav_grid.legend()) legend[std::string(1, k)] = v ? json(*v) : json(nullptr);
  j["nav_grid"] = {{"origin", to_json(t.nav_grid.origin())}, {"cell_size", t.nav_grid.cell_size()},
                   {"width", t.nav_grid.width()}, {"height", t.nav_grid.height()},
                   {"legend", legend}, {"rows", t.nav_grid.rows()}};
  j["declared_km"] = t.declared_km;
  return j;
}

void save_town(const TownMap& town, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw TownError(TownError::Kind::Io, "file", "cannot write town file " + path.string());
  out << town_to_json(town).dump() << '\n';
}

std::filesystem::path resolve_town_path(const std::string& name) {
  namespace fs = std::filesystem;
  if (fs::exists(name) && fs::is_regular_file(name)) return name;
  const char* env = std::getenv("MICROCARLA_TOWNS");
  const fs::path dir = env && *env ? fs::path(env) : fs::path(MICROCARLA_TOWNS_DIR);
  std::string stem = name;
  if (stem.rfind("town_", 0) == 0) stem = stem.substr(5);
  for (const auto& cand : {dir / (name + ".json"), dir / (stem + ".json")})
    if (fs::exists(cand)) return cand;
  return dir / (stem + ".json");
}

// --- TownMap ----------------------------------------------------------------

bool TownMap::operator==(const TownMap& o) const {
  return id == o.id && roads == o.roads && intersections == o.intersections && sidewalks == o.sidewalks &&
         obstacles == o.obstacles && spawns == o.spawns && lights == o.lights &&
         speed_limits == o.speed_limits && nav_grid == o.nav_grid && declared_km == o.declared_km;
}

int TownMap::node_index(int node_id) const {
  auto it = node_index_.find(node_id);
  return it == node_index_.end() ? -1 : it->second;
}

int TownMap::road_index(int road_id) const {
  auto it = road_index_.find(road_id);
  return it == road_index_.end() ? -1 : it->second;
}

double TownMap::total_road_length() const {
  double l = 0.0;
  for (const auto& r : roads) l += r.length();
  return l;
}

std::vector<Vec2> TownMap::edge_line(int edge) const { return edge_polyline(*this, edges_[edge]); }

TurnLabel TownMap::turn_label(int from_edge, int to_edge, double straight_deg) const {
  const Vec2 u = edges_[from_edge].end_dir;
  const Vec2 v = edges_[to_edge].start_dir;
  const double ang = std::atan2(cross(u, v), dot(u, v)) * 180.0 / kPi;
  if (std::abs(ang) < straight_deg) return TurnLabel::Straight;
  return ang >= straight_deg ? TurnLabel::Left : TurnLabel::Right;
}

void TownMap::finalize() {
  node_index_.clear();
  road_index_.clear();
  for (size_t i = 0; i < intersections.size(); ++i) {
    if (!node_index_.emplace(intersections[i].id, static_cast<int>(i)).second)
      invalid("unique_ids", "duplicate intersection id " + std::to_string(intersections[i].id));
  }
  for (size_t i = 0; i < roads.size(); ++i) {
    const auto& r = roads[i];
    if (!road_index_.emplace(r.id, static_cast<int>(i)).second)
      invalid("unique_ids", "duplicate road id " + std::to_string(r.id));
    if (r.centerline.size() < 2) invalid("road_geometry", "road " + std::to_string(r.id) + " has < 2 points");
    if (!(r.lane_width > 0.0)) invalid("road_geometry", "road " + std::to_string(r.id) + " lane_width <= 0");
    if (r.lanes_per_direction < 1) invalid("road_geometry", "road " + std::to_string(r.id) + " has no lanes");
    for (size_t k = 1; k < r.centerline.size(); ++k)
      if (!(distance(r.centerline[k - 1], r.centerline[k]) > 0.0))
        invalid("road_geometry", "road " + std::to_string(r.id) + " has a zero-length piece");
    if (node_index(r.from_node) < 0 || node_index(r.to_node) < 0)
      invalid("road_geometry", "road " + std::to_string(r.id) + " references an unknown node");
    const auto& a = intersections[node_index(r.from_node)].position;
    const auto& b = intersections[node_index(r.to_node)].position;
    if (distance(a, r.centerline.front()) > 1e-6 || distance(b, r.centerline.back()) > 1e-6)
      invalid("road_geometry", "road " + std::to_string(r.id) + " does not end on its nodes");
  }
  for (const auto& n : intersections) {
    if (!is_convex(n.box) || !convex_contains(n.box, n.position))
      invalid("convex_regions", "intersection " + std::to_string(n.id) + " box is not convex around its node");
  }
  for (size_t i = 0; i < sidewalks.size(); ++i)
    if (!is_convex(sidewalks[i])) invalid("convex_regions", "sidewalk " + std::to_string(i) + " is not convex");
  for (size_t i = 0; i < obstacles.size(); ++i)
    if (!is_convex(obstacles[i].polygon))
      invalid("convex_regions", "obstacle " + std::to_string(i) + " is not convex");

  build_edges();
  build_regions();
  build_index();
  validate();
}

void TownMap::build_edges() {
  edges_.clear();
  degree_.assign(intersections.size(), 0);
  for (size_t i = 0; i < roads.size(); ++i) {
    const auto& r = roads[i];
    const auto& c = r.centerline;
    const int a = node_index(r.from_node), b = node_index(r.to_node);
    const Vec2 d0 = normalized(c[1] - c[0]);
    const Vec2 d1 = normalized(c[c.size() - 1] - c[c.size() - 2]);
    edges_.push_back({static_cast<int>(i), true, a, b, r.length(), d0, d1});
    edges_.push_back({static_cast<int>(i), false, b, a, r.length(), -d1, -d0});
    ++degree_[a];
    ++degree_[b];
  }
  successors_.assign(edges_.size(), {});
  for (size_t e = 0; e < edges_.size(); ++e)
    for (size_t f = 0; f < edges_.size(); ++f)
      if (edges_[f].from_node == edges_[e].to_node && (f != (e ^ 1) || degree_[edges_[e].to_node] == 1))
        successors_[e].push_back(static_cast<int>(f));

  trim_start_.assign(edges_.size(), 0.0);
  trim_end_.assign(edges_.size(), 0.0);
  for (size_t e = 0; e < edges_.size(); ++e) {
    const auto& ed = edges_[e];
    const auto& na = intersections[ed.from_node];
    const auto& nb = intersections[ed.to_node];
    trim_start_[e] = exit_distance(na.box, na.position, ed.start_dir);
    trim_end_[e] = exit_distance(nb.box, nb.position, -ed.end_dir);
  }
}

std::pair<Vec2, Vec2> TownMap::lane_line(int edge, int lane) const {
  const auto& ed = edges_[edge];
  const auto& road = roads[ed.road_index];
  const double off = -(lane + 0.5) * road.lane_width;
  const auto line = offset_polyline(edge_polyline(*this, ed), off);
  return {line.front(), line.back()};
}

void TownMap::build_regions() {
  lane_regions_.clear();
  regions_.clear();
  for (size_t n = 0; n < intersections.size(); ++n) {
    Region r{Region::Type::Box, static_cast<int>(n), ccw(intersections[n].box), {}};
    r.bounds = bounds_of(r.polygon);
    regions_.push_back(std::move(r));
  }
  for (size_t e = 0; e < edges_.size(); ++e) {
    const auto& ed = edges_[e];
    const auto& road = roads[ed.road_index];
    const auto line = edge_polyline(*this, ed);
    const double lo = trim_start_[e], hi = ed.length - trim_end_[e];
    double s = 0.0;
    for (size_t k = 1; k < line.size(); ++k) {
      const double len = distance(line[k - 1], line[k]);
      const double a = std::max(s, lo), b = std::min(s + len, hi);
      const Vec2 d = normalized(line[k] - line[k - 1]);
      if (b > a) {
        const Vec2 pa = line[k - 1] + d * (a - s), pb = line[k - 1] + d * (b - s);
        for (int lane = 0; lane < road.lanes_per_direction; ++lane) {
          const Vec2 n_in = perp(d) * (-lane * road.lane_width);
          const Vec2 n_out = perp(d) * (-(lane + 1) * road.lane_width);
          LaneRegion lr{{static_cast<int>(e), lane}, d, ccw(Polygon{pa + n_in, pa + n_out, pb + n_out, pb + n_in})};
          Region r{Region::Type::Lane, static_cast<int>(lane_regions_.size()), lr.polygon, bounds_of(lr.polygon)};
          lane_regions_.push_back(std::move(lr));
          regions_.push_back(std::move(r));
        }
      }
      s += len;
    }
  }
  for (size_t i = 0; i < sidewalks.size(); ++i) {
    Region r{Region::Type::Sidewalk, static_cast<int>(i), ccw(sidewalks[i]), {}};
    r.bounds = bounds_of(r.polygon);
    regions_.push_back(std::move(r));
  }
  obstacle_bounds_.clear();
  for (const auto& o : obstacles) obstacle_bounds_.push_back(bounds_of(o.polygon));

  bounds_ = Aabb{};
  for (const auto& r : regions_) {
    bounds_.extend(r.bounds.lo);
    bounds_.extend(r.bounds.hi);
  }
  for (const auto& b : obstacle_bounds_) {
    bounds_.extend(b.lo);
    bounds_.extend(b.hi);
  }
}

void TownMap::bucket_range(const Aabb& box, int& i0, int& j0, int& i1, int& j1) const {
  i0 = std::clamp(static_cast<int>(std::floor((box.lo.x - bounds_.lo.x) / bucket_)), 0, bw_ - 1);
  j0 = std::clamp(static_cast<int>(std::floor((box.lo.y - bounds_.lo.y) / bucket_)), 0, bh_ - 1);
  i1 = std::clamp(static_cast<int>(std::floor((box.hi.x - bounds_.lo.x) / bucket_)), 0, bw_ - 1);
  j1 = std::clamp(static_cast<int>(std::floor((box.hi.y - bounds_.lo.y) / bucket_)), 0, bh_ - 1);
}

void TownMap::build_index() {
  bw_ = std::max(1, static_cast<int>(std::ceil((bounds_.hi.x - bounds_.lo.x) / bucket_)) + 1);
  bh_ = std::max(1, static_cast<int>(std::ceil((bounds_.hi.y - bounds_.lo.y) / bucket_)) + 1);
  region_buckets_.assign(static_cast<size_t>(bw_) * bh_, {});
  obstacle_buckets_.assign(static_cast<size_t>(bw_) * bh_, {});
  int i0, j0, i1, j1;
  for (size_t r = 0; r < regions_.size(); ++r) {
    bucket_range(regions_[r].bounds, i0, j0, i1, j1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) region_buckets_[static_cast<size_t>(j) * bw_ + i].push_back(static_cast<int>(r));
  }
  for (size_t o = 0; o < obstacle_bounds_.size(); ++o) {
    bucket_range(obstacle_bounds_[o], i0, j0, i1, j1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) obstacle_buckets_[static_cast<size_t>(j) * bw_ + i].push_back(static_cast<int>(o));
  }
}

void TownMap::regions_near(const Aabb& box, std::vector<int>& out) const {
  out.clear();
  if (!box.overlaps(bounds_)) return;
  int i0, j0, i1, j1;
  bucket_range(box, i0, j0, i1, j1);
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i)
      for (int r : region_buckets_[static_cast<size_t>(j) * bw_ + i])
        if (regions_[r].bounds.overlaps(box)) out.push_back(r);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

void TownMap::obstacles_near(const Aabb& box, std::vector<int>& out) const {
  out.clear();
  if (!box.overlaps(bounds_)) return;
  int i0, j0, i1, j1;
  bucket_range(box, i0, j0, i1, j1);
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i)
      for (int o : obstacle_buckets_[static_cast<size_t>(j) * bw_ + i])
        if (obstacle_bounds_[o].overlaps(box)) out.push_back(o);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

RegionQuery TownMap::classify(Vec2 p, double heading) const {
  RegionQuery q;
  if (!bounds_.contains(p)) return q;
  int i0, j0, i1, j1;
  bucket_range(Aabb{p, p}, i0, j0, i1, j1);
  const auto& bucket = region_buckets_[static_cast<size_t>(j0) * bw_ + i0];
  const Vec2 h = unit_from_angle(heading);
  const Region* lane_hit = nullptr;
  const Region* walk_hit = nullptr;
  bool lane_aligned = false;
  for (int idx : bucket) {
    const Region& r = regions_[idx];
    if (!r.bounds.contains(p) || !convex_contains(r.polygon, p)) continue;
    switch (r.type) {
      case Region::Type::Box:
        q.kind = RegionKind::IntersectionBox;
        q.node = r.ref;
        return q;
      case Region::Type::Lane: {
        const bool aligned = dot(lane_regions_[r.ref].direction, h) >= 0.0;
        if (!lane_hit || (aligned && !lane_aligned)) {
          lane_hit = &r;
          lane_aligned = aligned;
        }
        break;
      }
      case Region::Type::Sidewalk:
        if (!walk_hit) walk_hit = &r;
        break;
    }
  }
  if (lane_hit) {
    q.kind = lane_aligned ? RegionKind::OwnLane : RegionKind::OppositeLane;
    q.lane = lane_regions_[lane_hit->ref].lane;
    q.wrong_way = !lane_aligned;
    return q;
  }
  if (walk_hit) q.kind = RegionKind::Sidewalk;
  return q;
}

std::optional<int> TownMap::box_at(Vec2 p) const {
  auto q = classify(p, 0.0);
  if (q.kind == RegionKind::IntersectionBox) return q.node;
  return std::nullopt;
}

std::optional<TownMap::LaneProjection> TownMap::project_to_lane(Vec2 p, double heading) const {
  const Vec2 h = unit_from_angle(heading);
  std::optional<LaneProjection> best;
  for (size_t e = 0; e < edges_.size(); ++e) {
    const auto& ed = edges_[e];
    const auto& road = roads[ed.road_index];
    const auto line = edge_polyline(*this, ed);
    for (int lane = 0; lane < road.lanes_per_direction; ++lane) {
      const auto ll = offset_polyline(line, -(lane + 0.5) * road.lane_width);
      double s0 = 0.0;
      for (size_t k = 1; k < ll.size(); ++k) {
        const Vec2 a = ll[k - 1], b = ll[k];
        const Vec2 d = normalized(b - a);
        const double len = distance(a, b);
        if (dot(d, h) < 0.0) {
          s0 += len;
          continue;
        }
        const double t = std::clamp(dot(p - a, d), 0.0, len);
        const Vec2 c = a + d * t;
        const double dist = distance(p, c);
        if (!best || dist < best->distance - 1e-12) {
          best = LaneProjection{{static_cast<int>(e), lane}, s0 + t, cross(d, p - c), dist};
        }
        s0 += len;
      }
    }
  }
  return best;
}

std::optional<TownMap::LaneProjection> TownMap::locate_pose(const Pose& pose) const {
  auto p = project_to_lane(pose.position, pose.heading);
  if (!p || p->distance > 0.5) return std::nullopt;
  return p;
}

void TownMap::validate() const {
  // Strong connectivity over legal (no U-turn) transitions.
  if (edges_.empty()) invalid("connectivity", "town has no roads");
  auto reach = [&](bool forward) {
    std::vector<std::vector<int>> adj(edges_.size());
    for (size_t e = 0; e < edges_.size(); ++e)
      for (int f : successors_[e]) {
        if (forward) adj[e].push_back(f);
        else adj[f].push_back(static_cast<int>(e));
      }
    std::vector<char> seen(edges_.size(), 0);
    std::deque<int> q{0};
    seen[0] = 1;
    size_t count = 1;
    while (!q.empty()) {
      int e = q.front();
      q.pop_front();
      for (int f : adj[e])
        if (!seen[f]) {
          seen[f] = 1;
          ++count;
          q.push_back(f);
        }
    }
    return count == edges_.size();
  };
  if (!reach(true) || !reach(false))
    invalid("connectivity", "road graph is not strongly connected over drivable directions");

  const double total_km = total_road_length() / 1000.0;
  if (std::abs(total_km - declared_km) > 0.01 * declared_km) {
    std::ostringstream os;
    os << "road length " << total_km << " km differs from declared " << declared_km << " km by more than 1%";
    invalid("drivable_length", os.str());
  }

  // The region partition must not overlap anywhere (shared edges are fine).
  std::vector<int> near;
  for (size_t a = 0; a < regions_.size(); ++a) {
    regions_near(regions_[a].bounds, near);
    for (int b : near) {
      if (b <= static_cast<int>(a)) continue;
      if (intersection_area(regions_[a].polygon, regions_[b].polygon) > 1e-6)
        invalid("disjoint_regions", "regions " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
    }
  }

  for (size_t i = 0; i < spawns.player.size(); ++i)
    if (classify(spawns.player[i].position, spawns.player[i].heading).kind != RegionKind::OwnLane)
      invalid("spawn_points", "player spawn " + std::to_string(i) + " is not on a drivable lane");
  for (size_t i = 0; i < spawns.vehicles.size(); ++i)
    if (classify(spawns.vehicles[i].position, spawns.vehicles[i].heading).kind != RegionKind::OwnLane)
      invalid("spawn_points", "vehicle spawn " + std::to_string(i) + " is not on a drivable lane");
  for (size_t i = 0; i < spawns.pedestrians.size(); ++i)
    if (!nav_grid.passable_at(spawns.pedestrians[i]))
      invalid("spawn_points", "pedestrian spawn " + std::to_string(i) + " is not on a finite-cost cell");

  // Nav grid shape and cost ordering.
  if (!(nav_grid.cell_size() > 0.0) || nav_grid.width() <= 0 || nav_grid.height() <= 0)
    invalid("nav_grid", "grid dimensions must be positive");
  if (static_cast<int>(nav_grid.rows().size()) != nav_grid.height())
    invalid("nav_grid", "row count does not match height");
  for (const auto& row : nav_grid.rows()) {
    if (static_cast<int>(row.size()) != nav_grid.width()) invalid("nav_grid", "row length does not match width");
    for (char c : row)
      if (!nav_grid.legend().count(c)) invalid("nav_grid", std::string("character '") + c + "' not in legend");
  }
  for (const auto& [k, v] : nav_grid.legend())
    if (v && !(*v >= 0.0)) invalid("nav_grid", "negative cost in legend");
  double max_walk = 0.0, min_road = kInf;
  for (int j = 0; j < nav_grid.height(); ++j) {
    for (int i = 0; i < nav_grid.width(); ++i) {
      const Vec2 c = nav_grid.center_of(i, j);
      const auto q = classify(c, 0.0);
      const double cost = nav_grid.cost(i, j);
      if (q.kind == RegionKind::Sidewalk && std::isfinite(cost)) max_walk = std::max(max_walk, cost);
      if (q.kind == RegionKind::OwnLane || q.kind == RegionKind::OppositeLane ||
          q.kind == RegionKind::IntersectionBox) {
        if (!std::isfinite(cost))
          invalid("nav_grid", "road cell (" + std::to_string(i) + "," + std::to_string(j) + ") is impassable");
        min_road = std::min(min_road, cost);
      }
    }
  }
  if (!(max_walk < min_road)) invalid("nav_grid", "sidewalk cells must be cheaper than road cells");

  for (const auto& l : lights) {
    const int n = node_index(l.intersection), r = road_index(l.road);
    if (n < 0 || r < 0) invalid("lights", "light " + std::to_string(l.id) + " references unknown ids");
    if (node_index(roads[r].from_node) != n && node_index(roads[r].to_node) != n)
      invalid("lights", "light " + std::to_string(l.id) + " road does not meet its intersection");
    if (!(l.cycle > 0.0) || l.green < 0.0 || l.yellow < 0.0 || l.green + l.yellow > l.cycle)
      invalid("lights", "light " + std::to_string(l.id) + " has an invalid cycle");
  }
}

// --- LanePath ---------------------------------------------------------------

void LanePath::push(Vec2 p) {
  if (!points_.empty()) {
    const double d = distance(points_.back(), p);
    if (d < 1e-9) return;
    cumulative_.push_back(cumulative_.back() + d);
  } else {
    cumulative_.push_back(0.0);
  }
  points_.push_back(p);
}

LanePath LanePath::build(const TownMap& town, const std::vector<int>& edges, int lane) {
  LanePath path;
  path.edges_ = edges;
  if (edges.empty()) return path;
  std::vector<std::vector<Vec2>> lines;
  for (int e : edges) {
    const auto& ed = town.edges()[e];
    const auto& road = town.roads[ed.road_index];
    auto line = edge_polyline(town, ed);
    lines.push_back(offset_polyline(line, -(std::min(lane, road.lanes_per_direction - 1) + 0.5) * road.lane_width));
  }
  // Each lane keeps its interior points; corners between lanes get fillets.
  Vec2 cursor = lines[0].front();
  path.push(cursor);
  for (size_t k = 0; k < lines.size(); ++k) {
    const auto& line = lines[k];
    for (size_t i = 1; i + 1 < line.size(); ++i) path.push(line[i]);
    if (k + 1 == lines.size()) {
      path.push(line.back());
      break;
    }
    const auto& next = lines[k + 1];
    const Vec2 u = normalized(line.back() - line[line.size() - 2]);
    const Vec2 v = normalized(next[1] - next[0]);
    const double theta = std::atan2(cross(u, v), dot(u, v));
    const Vec2 a = line.back();
    const Vec2 b = next.front();
    if (std::abs(theta) < 1e-6 || std::abs(std::abs(theta) - kPi) < 1e-6) {
      path.push(a);
      path.transition_begin_.push_back(path.length());
      path.node_s_.push_back(path.length());
      path.push(b);
      path.transition_end_.push_back(path.length());
      continue;
    }
    // Corner point where the two lane lines cross.
    const double denom = cross(u, v);
    const double t = cross(b - a, v) / denom;
    const Vec2 m = a + u * t;
    const double radius = theta > 0.0 ? kLeftTurnRadius : kRightTurnRadius;
    double tangent = radius * std::tan(std::abs(theta) / 2.0);
    const double before = distance(line[line.size() - 2], m);
    const double after = distance(m, next.size() > 1 ? next[1] : next[0]);
    tangent = std::min({tangent, 0.9 * before, 0.9 * after});
    const double r = tangent / std::tan(std::abs(theta) / 2.0);
    const Vec2 p0 = m - u * tangent;
    const Vec2 side = perp(u) * (theta > 0.0 ? 1.0 : -1.0);
    const Vec2 center = p0 + side * r;
    path.push(p0);
    path.transition_begin_.push_back(path.length());
    const int steps = std::max(2, static_cast<int>(std::ceil(std::abs(theta) / (kPi / 36.0))));
    const Vec2 r0 = p0 - center;
    for (int s = 1; s <= steps; ++s) {
      const double phi = theta * s / steps;
      path.push(center + rotate(r0, phi));
      if (s == steps / 2) path.node_s_.push_back(path.length());
    }
    path.transition_end_.push_back(path.length());
  }
  return path;
}

Vec2 LanePath::point_at(double s) const {
  if (points_.empty()) return {};
  if (s <= 0.0) return points_.front();
  if (s >= length()) return points_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  const size_t i = static_cast<size_t>(it - cumulative_.begin());
  const double seg = cumulative_[i] - cumulative_[i - 1];
  const double t = seg > 0.0 ? (s - cumulative_[i - 1]) / seg : 0.0;
  return points_[i - 1] + (points_[i] - points_[i - 1]) * t;
}

Vec2 LanePath::tangent_at(double s) const {
  if (points_.size() < 2) return {1.0, 0.0};
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), std::clamp(s, 0.0, length()));
  size_t i = static_cast<size_t>(it - cumulative_.begin());
  i = std::clamp<size_t>(i, 1, points_.size() - 1);
  return normalized(points_[i] - points_[i - 1]);
}

double LanePath::project(Vec2 p, double lo, double hi) const {
  if (points_.size() < 2) return 0.0;
  if (lo < 0.0) lo = 0.0;
  if (hi < 0.0) hi = length();
  double best_d = kInf, best_s = lo;
  for (size_t i = 1; i < points_.size(); ++i) {
    if (cumulative_[i] < lo || cumulative_[i - 1] > hi) continue;
    const Vec2 a = points_[i - 1], b = points_[i];
    const double len = cumulative_[i] - cumulative_[i - 1];
    const Vec2 d = (b - a) / len;
    const double t = std::clamp(dot(p - a, d), 0.0, len);
    const double dist = distance(p, a + d * t);
    if (dist < best_d - 1e-12) {
      best_d = dist;
      best_s = cumulative_[i - 1] + t;
    }
  }
  return std::clamp(best_s, lo, hi);
}

}  // namespace microcarla
