#pragma once

#include <array>
#include <utility>
#include <vector>

#include "microcarla/town.hpp"

namespace toy {

using microcarla::Polygon;
using microcarla::Pose;
using microcarla::TownMap;
using microcarla::Vec2;

/// Axis-aligned town with no sidewalks: nodes, undirected roads, and
/// optional player spawns. Boxes follow the bundled-town convention.
inline TownMap make_town(const std::vector<Vec2>& nodes, const std::vector<std::pair<int, int>>& roads,
                         std::vector<Pose> spawns = {}, double speed_kmh = 30.0) {
  TownMap t;
  t.id = "toy";
  std::vector<std::array<bool, 4>> dirs(nodes.size(), {false, false, false, false});  // +x, -x, +y, -y
  double total = 0.0;
  int rid = 0;
  for (auto [a, b] : roads) {
    microcarla::RoadSegment r;
    r.id = rid++;
    r.centerline = {nodes[a], nodes[b]};
    r.speed_limit_kmh = speed_kmh;
    r.from_node = a;
    r.to_node = b;
    total += r.length();
    t.roads.push_back(r);
    const Vec2 d = nodes[b] - nodes[a];
    auto mark = [&](int n, Vec2 v) {
      if (std::abs(v.x) > std::abs(v.y)) dirs[n][v.x > 0 ? 0 : 1] = true;
      else dirs[n][v.y > 0 ? 2 : 3] = true;
    };
    mark(a, d);
    mark(b, -d);
  }
  for (size_t i = 0; i < nodes.size(); ++i) {
    const auto& d = dirs[i];
    const double px = d[0] ? 6.5 : 3.5, nx = d[1] ? 6.5 : 3.5, py = d[2] ? 6.5 : 3.5, ny = d[3] ? 6.5 : 3.5;
    const Vec2 c = nodes[i];
    t.intersections.push_back({static_cast<int>(i), c,
                               Polygon{{c.x - nx, c.y - ny}, {c.x + px, c.y - ny}, {c.x + px, c.y + py},
                                       {c.x - nx, c.y + py}}});
  }
  t.spawns.player = spawns;
  t.spawns.vehicles = spawns;
  t.nav_grid = microcarla::NavCostGrid({-1e4, -1e4}, 1.0, 1, 1, {{'R', 10.0}}, {"R"});
  t.declared_km = total / 1000.0;
  t.finalize();
  return t;
}

/// Pose on the right-hand lane of road `r`, `s` metres from its from-node.
inline Pose lane_pose(const TownMap& t, int edge, double s) {
  const auto [a, b] = t.lane_line(edge, 0);
  const Vec2 d = microcarla::normalized(b - a);
  return {a + d * s, microcarla::angle_of(d)};
}

}  // namespace toy
