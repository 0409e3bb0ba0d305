#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "microcarla/common.hpp"
#include "microcarla/town.hpp"

namespace microcarla {

class RouteError : public std::runtime_error {
 public:
  enum class Kind { Unreachable, OffRoute };
  RouteError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct PlannerConfig {
  double straight_deg = 30.0;  // turn label threshold
  double lookahead = 25.0;     // m before a labeled junction
  double goal_radius = 2.0;    // m
  double corridor = 20.0;      // m from the route centre line
};

/// Edge sequence from start to goal. Arc position u runs along the road
/// centre lines from 0 at the start projection to length at the goal.
struct RoutePlan {
  std::vector<int> edges;
  std::vector<int> nodes;  // node ids: from-node of edges[0], then every to-node
  std::vector<std::optional<TurnLabel>> labels;  // per transition edges[k] -> edges[k+1]
  double start_s = 0.0;  // along edges.front()
  double goal_s = 0.0;   // along edges.back()
  double length = 0.0;   // m
  std::vector<double> cumulative;  // u at the start of edges[k]; cumulative[0] = -start_s
  Pose goal;

  bool empty() const { return length == 0.0; }
  double length_km() const { return length / 1000.0; }
  /// u of the node between edges[k] and edges[k+1].
  double node_u(size_t k) const { return cumulative[k + 1]; }
};

struct RouteProjection {
  double u = 0.0;
  double distance = 0.0;  // from the centre line
  size_t edge_index = 0;  // into RoutePlan::edges
};

/// A* over directed edges. Throws RouteError::Unreachable.
RoutePlan plan(const TownMap& town, const Pose& start, const Pose& goal, const PlannerConfig& cfg = {});

/// Closest route point. With `hint` >= 0 the search prefers a window
/// around that arc position, which keeps progress monotone on routes that
/// pass the same place twice. nullopt beyond the corridor.
std::optional<RouteProjection> project_on_route(const RoutePlan& plan, const TownMap& town, Vec2 p,
                                                double hint = -1.0, const PlannerConfig& cfg = {});

/// Throws RouteError::OffRoute.
HighLevelCommand current_command(const RoutePlan& plan, const Pose& pose, const TownMap& town, double hint = -1.0,
                                 const PlannerConfig& cfg = {});
/// km. Throws RouteError::OffRoute.
double remaining_distance(const RoutePlan& plan, const Pose& pose, const TownMap& town, double hint = -1.0,
                          const PlannerConfig& cfg = {});

/// km along the optimal route.
double shortest_route_length(const TownMap& town, const Pose& a, const Pose& b);

/// Stateful wrapper that carries the progress hint between ticks.
class RouteFollower {
 public:
  RouteFollower() = default;
  RouteFollower(const TownMap& town, RoutePlan plan, PlannerConfig cfg = {})
      : town_(&town), plan_(std::move(plan)), cfg_(cfg) {}

  const RoutePlan& plan() const { return plan_; }
  /// Updates progress; replans from the pose when off-route.
  void update(const Pose& pose);
  HighLevelCommand command() const { return command_; }
  double remaining_km() const { return remaining_km_; }
  double progress() const { return progress_; }
  int replans() const { return replans_; }

 private:
  const TownMap* town_ = nullptr;
  RoutePlan plan_;
  PlannerConfig cfg_;
  double progress_ = 0.0;
  double remaining_km_ = 0.0;
  HighLevelCommand command_ = HighLevelCommand::FollowLane;
  int replans_ = 0;
};

}  // namespace microcarla
