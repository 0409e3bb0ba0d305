#pragma once

#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "microcarla/rng.hpp"
#include "toy_town.hpp"

namespace oracle {

using namespace microcarla;

/// Random connected town on a jittered lattice with at most `max_nodes` nodes.
/// Draws again when the drivable graph is not strongly connected.
inline TownMap random_lattice_town(Rng& rng, int max_nodes = 10);

inline TownMap lattice_attempt(Rng& rng, int max_nodes = 10) {
  const int cols = 4, rows = 3;
  std::vector<double> xs{0.0}, ys{0.0};
  for (int i = 1; i < cols; ++i) xs.push_back(xs.back() + rng.uniform(40.0, 120.0));
  for (int j = 1; j < rows; ++j) ys.push_back(ys.back() + rng.uniform(40.0, 120.0));
  const int target = 2 + static_cast<int>(rng.index(max_nodes - 1));
  auto id = [&](int i, int j) { return j * cols + i; };
  std::vector<int> chosen{static_cast<int>(rng.index(cols * rows))};
  std::set<std::pair<int, int>> links;
  auto neighbours = [&](int c) {
    std::vector<int> out;
    const int i = c % cols, j = c / cols;
    if (i > 0) out.push_back(id(i - 1, j));
    if (i + 1 < cols) out.push_back(id(i + 1, j));
    if (j > 0) out.push_back(id(i, j - 1));
    if (j + 1 < rows) out.push_back(id(i, j + 1));
    return out;
  };
  auto in = [&](int c) { return std::find(chosen.begin(), chosen.end(), c) != chosen.end(); };
  while (static_cast<int>(chosen.size()) < target) {
    const int from = chosen[rng.index(chosen.size())];
    const auto nb = neighbours(from);
    const int to = nb[rng.index(nb.size())];
    if (in(to)) continue;
    chosen.push_back(to);
    links.insert({std::min(from, to), std::max(from, to)});
  }
  for (int a : chosen)
    for (int b : neighbours(a))
      if (a < b && in(b) && rng.bernoulli(0.5)) links.insert({a, b});
  std::vector<Vec2> nodes;
  std::vector<int> index(cols * rows, -1);
  for (int c : chosen) {
    index[c] = static_cast<int>(nodes.size());
    nodes.push_back({xs[c % cols], ys[c / cols]});
  }
  std::vector<std::pair<int, int>> roads;
  for (auto [a, b] : links) {
    if (rng.bernoulli(0.5)) std::swap(a, b);
    roads.push_back({index[a], index[b]});
  }
  TownMap t = toy::make_town(nodes, roads);
  const Pose p = toy::lane_pose(t, 0, t.trim_start(0) + 1.0);
  t.spawns.player = {p};
  t.spawns.vehicles = {p};
  t.finalize();
  return t;
}

inline TownMap random_lattice_town(Rng& rng, int max_nodes) {
  for (;;) {
    try {
      return lattice_attempt(rng, max_nodes);
    } catch (const TownError&) {
    }
  }
}

/// Lane pose on `edge` at least half a metre clear of both boxes.
inline Pose random_lane_pose(const TownMap& t, Rng& rng, int* edge_out = nullptr, double* s_out = nullptr) {
  const int e = static_cast<int>(rng.index(t.edges().size()));
  const double lo = t.trim_start(e) + 0.5, hi = t.edges()[e].length - t.trim_end(e) - 0.5;
  const double s = rng.uniform(lo, hi);
  if (edge_out) *edge_out = e;
  if (s_out) *s_out = s;
  return toy::lane_pose(t, e, s);
}

/// Exhaustive shortest route over edge-simple walks, independent of the
/// planner's search.
inline double brute_force_route(const TownMap& t, int e0, double s0, int eg, double sg) {
  if (e0 == eg && sg >= s0) return sg - s0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> used(t.edges().size(), 0);
  std::function<void(int, double)> dfs = [&](int e, double g) {
    if (g >= best) return;
    if (e == eg) best = std::min(best, g + sg);
    used[e] = 1;
    for (int f : t.successors(e))
      if (!used[f]) dfs(f, g + t.edges()[e].length);
    used[e] = 0;
  };
  for (int f : t.successors(e0)) dfs(f, t.edges()[e0].length - s0);
  return best;
}

}  // namespace oracle
