#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <unordered_map>
#include <vector>

namespace microcarla {

template <typename Node>
struct SearchResult {
  std::vector<Node> path;  // start .. goal inclusive
  double cost = 0.0;
};

/// Generic A* over an implicit graph.
///
/// `neighbors(n, emit)` must call `emit(next, edge_cost)` for each successor;
/// `heuristic(n)` must never overestimate the remaining cost. Ties on f are
/// broken by insertion order so results are deterministic.
template <typename Node, typename Neighbors, typename Heuristic, typename IsGoal,
          typename Hash = std::hash<Node>>
  requires std::invocable<Heuristic, const Node&> && std::predicate<IsGoal, const Node&>
std::optional<SearchResult<Node>> astar(const std::vector<std::pair<Node, double>>& starts,
                                        Neighbors&& neighbors, Heuristic&& heuristic,
                                        IsGoal&& is_goal) {
  struct Entry {
    double f;
    double g;
    std::uint64_t order;
    Node node;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.f != b.f) return a.f > b.f;
    return a.order > b.order;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  std::unordered_map<Node, double, Hash> best;
  std::unordered_map<Node, Node, Hash> parent;
  std::uint64_t order = 0;

  for (const auto& [node, g0] : starts) {
    auto it = best.find(node);
    if (it != best.end() && it->second <= g0) continue;
    best[node] = g0;
    open.push({g0 + heuristic(node), g0, order++, node});
  }

  while (!open.empty()) {
    Entry cur = open.top();
    open.pop();
    if (cur.g > best[cur.node]) continue;
    if (is_goal(cur.node)) {
      SearchResult<Node> out;
      out.cost = cur.g;
      Node n = cur.node;
      out.path.push_back(n);
      for (auto it = parent.find(n); it != parent.end(); it = parent.find(n)) {
        n = it->second;
        out.path.push_back(n);
      }
      std::reverse(out.path.begin(), out.path.end());
      return out;
    }
    neighbors(cur.node, [&](const Node& next, double cost) {
      const double g = cur.g + cost;
      auto it = best.find(next);
      if (it != best.end() && it->second <= g) return;
      best[next] = g;
      parent.insert_or_assign(next, cur.node);
      open.push({g + heuristic(next), g, order++, next});
    });
  }
  return std::nullopt;
}

}  // namespace microcarla
