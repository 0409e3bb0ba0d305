#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microcarla/geometry.hpp"

namespace microcarla {

/// The 12-class semantic palette shared by town obstacles and semantic scans.
enum class SemanticClass : std::uint8_t {
  Road = 0,
  LaneMarking,
  TrafficSign,
  Sidewalk,
  Fence,
  Pole,
  Wall,
  Building,
  Vegetation,
  Vehicle,
  Pedestrian,
  Other,
};
inline constexpr int kSemanticClassCount = 12;

std::string to_string(SemanticClass c);
std::optional<SemanticClass> semantic_class_from_string(const std::string& s);

struct RoadSegment {
  int id = 0;
  std::vector<Vec2> centerline;  // from_node .. to_node
  int lanes_per_direction = 1;
  double lane_width = 3.5;
  double speed_limit_kmh = 30.0;
  int from_node = 0;
  int to_node = 0;

  double length() const;
  bool operator==(const RoadSegment&) const = default;
};

struct IntersectionNode {
  int id = 0;
  Vec2 position;
  Polygon box;
  bool operator==(const IntersectionNode&) const = default;
};

struct Obstacle {
  SemanticClass cls = SemanticClass::Other;
  Polygon polygon;
  bool operator==(const Obstacle&) const = default;
};

enum class LightState : std::uint8_t { Red, Yellow, Green };
std::string to_string(LightState s);

/// A signal head governing traffic that arrives at `intersection` along `road`.
struct TrafficLight {
  int id = 0;
  Vec2 position;
  int intersection = 0;
  int road = 0;
  double cycle = 30.0;
  double green_start = 0.0;
  double green = 11.0;
  double yellow = 3.0;

  LightState state_at(double t) const;
  bool operator==(const TrafficLight&) const = default;
};

struct SpeedLimitSign {
  Vec2 position;
  double limit_kmh = 30.0;
  bool operator==(const SpeedLimitSign&) const = default;
};

struct SpawnPoints {
  std::vector<Pose> player;
  std::vector<Pose> vehicles;
  std::vector<Vec2> pedestrians;
  bool operator==(const SpawnPoints&) const = default;
};

/// Pedestrian navigation cost map. Stored as rows of legend characters so
/// the file form is compact and lossless; `nullopt` legend entries are
/// impassable.
class NavCostGrid {
 public:
  NavCostGrid() = default;
  NavCostGrid(Vec2 origin, double cell_size, int width, int height,
              std::map<char, std::optional<double>> legend, std::vector<std::string> rows);

  Vec2 origin() const { return origin_; }
  double cell_size() const { return cell_size_; }
  int width() const { return width_; }
  int height() const { return height_; }
  const std::map<char, std::optional<double>>& legend() const { return legend_; }
  const std::vector<std::string>& rows() const { return rows_; }

  bool in_grid(int i, int j) const { return i >= 0 && j >= 0 && i < width_ && j < height_; }
  /// +inf when impassable or outside the grid.
  double cost(int i, int j) const;
  double cost_at(Vec2 p) const;
  bool passable_at(Vec2 p) const { return std::isfinite(cost_at(p)); }
  std::pair<int, int> cell_of(Vec2 p) const;
  Vec2 center_of(int i, int j) const;
  double min_cost() const { return min_cost_; }

  bool operator==(const NavCostGrid& o) const {
    return origin_ == o.origin_ && cell_size_ == o.cell_size_ && width_ == o.width_ &&
           height_ == o.height_ && legend_ == o.legend_ && rows_ == o.rows_;
  }

 private:
  Vec2 origin_;
  double cell_size_ = 1.0;
  int width_ = 0;
  int height_ = 0;
  std::map<char, std::optional<double>> legend_;
  std::vector<std::string> rows_;
  std::vector<double> costs_;
  double min_cost_ = 0.0;
};

enum class RegionKind : std::uint8_t { OwnLane, OppositeLane, Sidewalk, IntersectionBox, OffMap };
std::string to_string(RegionKind k);

/// A directed traversal of a road: edge index = 2 * road_index + (forward ? 0 : 1).
struct DirectedEdge {
  int road_index = 0;
  bool forward = true;
  int from_node = 0;  // node indices, not ids
  int to_node = 0;
  double length = 0.0;
  Vec2 start_dir;  // travel direction leaving from_node
  Vec2 end_dir;    // travel direction arriving at to_node
};

struct LaneRef {
  int edge = 0;
  int lane = 0;  // 0 is the rightmost lane of the travel direction
  bool operator==(const LaneRef&) const = default;
};

struct RegionQuery {
  RegionKind kind = RegionKind::OffMap;
  std::optional<LaneRef> lane;
  std::optional<int> node;  // for intersection boxes
  bool wrong_way = false;
};

enum class TurnLabel : std::uint8_t { Straight, Left, Right };
std::string to_string(TurnLabel t);

/// One convex drivable or walkable cell of the region partition.
struct Region {
  enum class Type : std::uint8_t { Box, Lane, Sidewalk } type = Type::Lane;
  int ref = 0;  // node index, lane-region index or sidewalk index
  Polygon polygon;  // counter-clockwise
  Aabb bounds;
};

struct LaneRegion {
  LaneRef lane;
  Vec2 direction;
  Polygon polygon;
};

class TownError : public std::runtime_error {
 public:
  enum class Kind { Io, Parse, Validation };
  TownError(Kind kind, std::string invariant, const std::string& msg)
      : std::runtime_error(msg), kind_(kind), invariant_(std::move(invariant)) {}
  Kind kind() const { return kind_; }
  /// Names the violated invariant for validation errors.
  const std::string& invariant() const { return invariant_; }

 private:
  Kind kind_;
  std::string invariant_;
};

/// Static town: authored geometry plus derived lookup structures. Immutable
/// after construction.
class TownMap {
 public:
  std::string id;
  std::vector<RoadSegment> roads;
  std::vector<IntersectionNode> intersections;
  std::vector<Polygon> sidewalks;
  std::vector<Obstacle> obstacles;
  SpawnPoints spawns;
  std::vector<TrafficLight> lights;
  std::vector<SpeedLimitSign> speed_limits;
  NavCostGrid nav_grid;
  double declared_km = 0.0;

  /// Authored content only; derived caches are ignored.
  bool operator==(const TownMap& o) const;

  /// Builds derived structures and checks every invariant. Throws TownError.
  void finalize();

  // --- derived queries -------------------------------------------------
  const std::vector<DirectedEdge>& edges() const { return edges_; }
  /// Legal next edges. U-turns are only legal at dead ends.
  const std::vector<int>& successors(int edge) const { return successors_[edge]; }
  int reverse_edge(int edge) const { return edge ^ 1; }
  int node_index(int node_id) const;
  int road_index(int road_id) const;
  int degree(int node) const { return degree_[node]; }
  bool is_junction(int node) const { return degree_[node] >= 3; }
  /// Straight below `straight_deg` of heading change, else left or right.
  TurnLabel turn_label(int from_edge, int to_edge, double straight_deg = 30.0) const;
  /// Road centre line in travel order.
  std::vector<Vec2> edge_line(int edge) const;
  double total_road_length() const;
  const std::vector<LaneRegion>& lane_regions() const { return lane_regions_; }
  const std::vector<Region>& regions() const { return regions_; }
  Aabb bounds() const { return bounds_; }

  /// Lane centre line offset for lane `lane` of `edge`, untrimmed
  /// (node-to-node), as start/end points.
  std::pair<Vec2, Vec2> lane_line(int edge, int lane = 0) const;
  /// Distance along the edge from from_node to where the lane leaves the
  /// start box / enters the end box.
  double trim_start(int edge) const { return trim_start_[edge]; }
  double trim_end(int edge) const { return trim_end_[edge]; }

  RegionQuery classify(Vec2 p, double heading) const;
  /// Intersection box node containing p, if any.
  std::optional<int> box_at(Vec2 p) const;

  /// Collects indices of regions / obstacles whose bounds overlap `box`.
  void regions_near(const Aabb& box, std::vector<int>& out) const;
  void obstacles_near(const Aabb& box, std::vector<int>& out) const;

  /// Projects a point onto the nearest lane whose travel direction is
  /// within 90 degrees of `heading`. Returns (lane, arc position along the
  /// edge, signed lateral offset, left positive).
  struct LaneProjection {
    LaneRef lane;
    double s = 0.0;
    double lateral = 0.0;
    double distance = 0.0;
  };
  std::optional<LaneProjection> project_to_lane(Vec2 p, double heading) const;

  /// Edge an authored spawn pose sits on, with its arc position.
  std::optional<LaneProjection> locate_pose(const Pose& pose) const;

 private:
  void build_edges();
  void build_regions();
  void build_index();
  void validate() const;

  std::vector<DirectedEdge> edges_;
  std::vector<std::vector<int>> successors_;
  std::vector<int> degree_;
  std::vector<double> trim_start_, trim_end_;
  std::vector<LaneRegion> lane_regions_;
  std::vector<Region> regions_;
  std::vector<Aabb> obstacle_bounds_;
  std::map<int, int> node_index_, road_index_;
  Aabb bounds_;

  // Uniform bucket grid over bounds_.
  double bucket_ = 10.0;
  int bw_ = 0, bh_ = 0;
  std::vector<std::vector<int>> region_buckets_, obstacle_buckets_;
  void bucket_range(const Aabb& box, int& i0, int& j0, int& i1, int& j1) const;
};

TownMap parse_town(const nlohmann::json& j);
TownMap load_town(const std::filesystem::path& path);
nlohmann::json town_to_json(const TownMap& town);
void save_town(const TownMap& town, const std::filesystem::path& path);

/// Resolves `name` to a town file: an existing path is used as-is,
/// otherwise `<dir>/<name>.json` where dir is $MICROCARLA_TOWNS or the
/// bundled towns directory.
std::filesystem::path resolve_town_path(const std::string& name);

/// Polyline along a sequence of connected lanes, with filleted corners at
/// every node where the direction changes.
class LanePath {
 public:
  static constexpr double kLeftTurnRadius = 8.0;
  static constexpr double kRightTurnRadius = 5.0;

  LanePath() = default;
  static LanePath build(const TownMap& town, const std::vector<int>& edges, int lane = 0);

  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<int>& edges() const { return edges_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;
  /// Arc position of the closest point; searches [lo, hi] when given.
  double project(Vec2 p, double lo = -1.0, double hi = -1.0) const;
  /// Arc position where the transition into edges()[k + 1] begins / ends.
  double transition_begin(size_t k) const { return transition_begin_[k]; }
  double transition_end(size_t k) const { return transition_end_[k]; }
  /// Arc position nearest to the node between edges k and k+1.
  double node_position(size_t k) const { return node_s_[k]; }

 private:
  void push(Vec2 p);
  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
  std::vector<int> edges_;
  std::vector<double> transition_begin_, transition_end_, node_s_;
};

}  // namespace microcarla
