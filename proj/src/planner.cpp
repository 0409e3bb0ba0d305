#include "microcarla/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace microcarla {

namespace {

struct Located {
  int edge;
  double s;  // along the centre line
};

/// Closest point of `line` with arc position in [lo, hi].
std::pair<double, double> project_polyline(const std::vector<Vec2>& line, Vec2 p, double lo, double hi) {
  double best_s = lo, best_d = std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (size_t k = 1; k < line.size(); ++k) {
    const double len = distance(line[k - 1], line[k]);
    const double a = std::max(s, lo), b = std::min(s + len, hi);
    if (b >= a && len > 0.0) {
      const Vec2 d = (line[k] - line[k - 1]) / len;
      const double t = std::clamp(dot(p - line[k - 1], d), a - s, b - s);
      const double dist = distance(p, line[k - 1] + d * t);
      if (dist < best_d) {
        best_d = dist;
        best_s = s + t;
      }
    }
    s += len;
  }
  return {best_s, best_d};
}

Vec2 point_on_polyline(const std::vector<Vec2>& line, double s) {
  for (size_t k = 1; k < line.size(); ++k) {
    const double len = distance(line[k - 1], line[k]);
    if (s <= len || k + 1 == line.size()) return line[k - 1] + normalized(line[k] - line[k - 1]) * std::min(s, len);
    s -= len;
  }
  return line.back();
}

Located locate(const TownMap& town, const Pose& pose, const char* what) {
  const auto lp = town.project_to_lane(pose.position, pose.heading);
  if (!lp) throw RouteError(RouteError::Kind::Unreachable, std::string(what) + " is not near any lane");
  const int e = lp->lane.edge;
  const auto [s, d] = project_polyline(town.edge_line(e), pose.position, 0.0, town.edges()[e].length);
  (void)d;
  return {e, s};
}

}  // namespace

RoutePlan plan(const TownMap& town, const Pose& start, const Pose& goal, const PlannerConfig& cfg) {
  const Located a = locate(town, start, "start");
  const Located b = locate(town, goal, "goal");
  const auto& edges = town.edges();

  RoutePlan r;
  r.start_s = a.s;
  r.goal_s = b.s;
  r.goal = goal;

  std::vector<int> route;
  if (a.edge == b.edge && b.s >= a.s) {
    route = {a.edge};
  } else {
    const Vec2 goal_point = point_on_polyline(town.edge_line(b.edge), b.s);
    auto h = [&](int e) { return distance(town.intersections[edges[e].from_node].position, goal_point); };

    constexpr int kStart = -1;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> best(edges.size(), inf);
    std::vector<int> parent(edges.size(), kStart);
    struct Entry {
      double f, g;
      int edge;
      bool terminal;
      bool operator>(const Entry& o) const {
        if (f != o.f) return f > o.f;
        if (terminal != o.terminal) return !terminal;
        return edge > o.edge;
      }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    const double g0 = edges[a.edge].length - a.s;
    for (int f : town.successors(a.edge)) {
      if (g0 < best[f]) {
        best[f] = g0;
        parent[f] = kStart;
        open.push({g0 + h(f), g0, f, false});
      }
    }
    bool found = false;
    while (!open.empty()) {
      const Entry cur = open.top();
      open.pop();
      if (cur.terminal) {
        found = true;
        break;
      }
      if (cur.g > best[cur.edge]) continue;
      if (cur.edge == b.edge) open.push({cur.g + b.s, cur.g, cur.edge, true});
      const double ng = cur.g + edges[cur.edge].length;
      for (int f : town.successors(cur.edge)) {
        if (ng < best[f]) {
          best[f] = ng;
          parent[f] = cur.edge;
          open.push({ng + h(f), ng, f, false});
        }
      }
    }
    if (!found) throw RouteError(RouteError::Kind::Unreachable, "goal is unreachable from start");
    for (int e = b.edge;; e = parent[e]) {
      route.push_back(e);
      if (parent[e] == kStart) break;
    }
    route.push_back(a.edge);
    std::reverse(route.begin(), route.end());
  }

  r.edges = route;
  r.nodes.push_back(town.intersections[edges[route[0]].from_node].id);
  r.cumulative.push_back(-a.s);
  for (size_t k = 0; k < route.size(); ++k) {
    r.nodes.push_back(town.intersections[edges[route[k]].to_node].id);
    r.cumulative.push_back(r.cumulative.back() + edges[route[k]].length);
    if (k + 1 < route.size()) {
      const int node = edges[route[k]].to_node;
      if (town.is_junction(node)) r.labels.push_back(town.turn_label(route[k], route[k + 1], cfg.straight_deg));
      else r.labels.push_back(std::nullopt);
    }
  }
  r.length = r.cumulative[route.size() - 1] + b.s;
  if (std::abs(r.length) < 1e-12) r.length = 0.0;
  return r;
}

std::optional<RouteProjection> project_on_route(const RoutePlan& plan, const TownMap& town, Vec2 p, double hint,
                                                const PlannerConfig& cfg) {
  std::optional<RouteProjection> global, local;
  for (size_t k = 0; k < plan.edges.size(); ++k) {
    const int e = plan.edges[k];
    const double lo = k == 0 ? plan.start_s : 0.0;
    const double hi = k + 1 == plan.edges.size() ? plan.goal_s : town.edges()[e].length;
    const auto [s, d] = project_polyline(town.edge_line(e), p, lo, hi);
    if (d > cfg.corridor) continue;
    const RouteProjection rp{std::clamp(plan.cumulative[k] + s, 0.0, plan.length), d, k};
    if (!global || d < global->distance) global = rp;
    if (hint >= 0.0 && rp.u >= hint - 10.0 && rp.u <= hint + 60.0 && (!local || d < local->distance)) local = rp;
  }
  return local ? local : global;
}

HighLevelCommand current_command(const RoutePlan& plan, const Pose& pose, const TownMap& town, double hint,
                                 const PlannerConfig& cfg) {
  if (distance(pose.position, plan.goal.position) <= cfg.goal_radius) return HighLevelCommand::GoalReached;
  const auto rp = project_on_route(plan, town, pose.position, hint, cfg);
  if (!rp) throw RouteError(RouteError::Kind::OffRoute, "pose is off the route corridor");
  for (size_t k = 0; k < plan.labels.size(); ++k) {
    if (!plan.labels[k]) continue;
    // The command holds until the car has left the junction box.
    const double exit_u = plan.node_u(k) + town.trim_start(plan.edges[k + 1]);
    if (rp->u > exit_u) continue;
    if (plan.node_u(k) - rp->u > cfg.lookahead) break;
    switch (*plan.labels[k]) {
      case TurnLabel::Straight:
        return HighLevelCommand::Straight;
      case TurnLabel::Left:
        return HighLevelCommand::Left;
      case TurnLabel::Right:
        return HighLevelCommand::Right;
    }
  }
  return HighLevelCommand::FollowLane;
}

double remaining_distance(const RoutePlan& plan, const Pose& pose, const TownMap& town, double hint,
                          const PlannerConfig& cfg) {
  const auto rp = project_on_route(plan, town, pose.position, hint, cfg);
  if (!rp) throw RouteError(RouteError::Kind::OffRoute, "pose is off the route corridor");
  return std::max(0.0, plan.length - rp->u) / 1000.0;
}

double shortest_route_length(const TownMap& town, const Pose& a, const Pose& b) {
  return plan(town, a, b).length_km();
}

void RouteFollower::update(const Pose& pose) {
  auto rp = project_on_route(plan_, *town_, pose.position, progress_, cfg_);
  if (!rp) {
    try {
      plan_ = microcarla::plan(*town_, pose, plan_.goal, cfg_);
      ++replans_;
      progress_ = 0.0;
    } catch (const RouteError&) {
      command_ = HighLevelCommand::FollowLane;
      return;
    }
    rp = project_on_route(plan_, *town_, pose.position, 0.0, cfg_);
    if (!rp) {
      command_ = HighLevelCommand::FollowLane;
      return;
    }
  }
  progress_ = rp->u;
  remaining_km_ = std::max(0.0, plan_.length - rp->u) / 1000.0;
  command_ = current_command(plan_, pose, *town_, progress_, cfg_);
}

}  // namespace microcarla
