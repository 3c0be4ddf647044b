#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sigmma/dataset.hpp"

namespace sigmma {

// Tile subdivision scales. A tile splits into b x b equal blocks per axis
// with b = 4 (micro), 2 (meso), 1 (macro); block side is m / b, so the macro
// block is the whole tile and the micro grid matches the 4x4 image crops.
enum class Scale { micro = 0, meso = 1, macro = 2 };

inline const char* scale_name(Scale s) {
  switch (s) {
    case Scale::micro: return "micro";
    case Scale::meso: return "meso";
    default: return "macro";
  }
}

inline int scale_subdivisions(Scale s) {
  switch (s) {
    case Scale::micro: return 4;
    case Scale::meso: return 2;
    default: return 1;
  }
}

inline std::pair<int, int> block_index(double x, double y, Scale scale,
                                       std::size_t m) {
  const double md = static_cast<double>(m);
  if (x < 0.0 || x >= md || y < 0.0 || y >= md)
    throw std::invalid_argument(
        "block_index: coordinate (" + std::to_string(x) + ", " +
        std::to_string(y) + ") outside tile of side " + std::to_string(m));
  const int b = scale_subdivisions(scale);
  const double side = md / b;
  int bx = static_cast<int>(x / side);
  int by = static_cast<int>(y / side);
  bx = std::min(bx, b - 1);
  by = std::min(by, b - 1);
  return {bx, by};
}

using EdgeList = std::vector<std::pair<int, int>>;  // undirected, u < v

// Static per-tile spatial structure: node coordinates, proximity edges inside
// each micro block, and block membership per scale. Edge additions at coarser
// scales happen during the encoder forward pass and are tracked there.
struct CellGraph {
  std::size_t m = 0;
  std::vector<std::pair<double, double>> coords;
  EdgeList edges_micro;

  std::size_t size() const { return coords.size(); }

  std::pair<int, int> block_of(int node, Scale scale) const {
    return block_index(coords[node].first, coords[node].second, scale, m);
  }

  bool same_block(int u, int v, Scale scale) const {
    return block_of(u, scale) == block_of(v, scale);
  }
};

// Symmetric k-nearest-neighbour edges, built independently inside each micro
// block (union symmetrization). Distance ties break toward the lower node
// index. Blocks with a single cell contribute no edges.
inline CellGraph build_micro_graph(
    const std::vector<std::pair<double, double>>& coords, std::size_t m,
    int k) {
  if (k < 1) throw std::invalid_argument("build_micro_graph: k must be >= 1");
  CellGraph g;
  g.m = m;
  g.coords = coords;

  std::map<std::pair<int, int>, std::vector<int>> by_block;
  for (int i = 0; i < static_cast<int>(coords.size()); ++i)
    by_block[block_index(coords[i].first, coords[i].second, Scale::micro, m)]
        .push_back(i);

  std::set<std::pair<int, int>> edges;
  for (const auto& [block, members] : by_block) {
    if (members.size() < 2) continue;
    for (int u : members) {
      std::vector<std::pair<double, int>> order;
      order.reserve(members.size() - 1);
      for (int v : members) {
        if (v == u) continue;
        const double dx = coords[u].first - coords[v].first;
        const double dy = coords[u].second - coords[v].second;
        order.push_back({dx * dx + dy * dy, v});
      }
      std::sort(order.begin(), order.end());
      const int take = std::min<int>(k, static_cast<int>(order.size()));
      for (int t = 0; t < take; ++t) {
        const int v = order[t].second;
        edges.insert({std::min(u, v), std::max(u, v)});
      }
    }
  }
  g.edges_micro.assign(edges.begin(), edges.end());
  return g;
}

inline CellGraph build_micro_graph(const TilePair& tile, std::size_t m, int k) {
  std::vector<std::pair<double, double>> coords;
  coords.reserve(tile.cells.size());
  for (const auto& c : tile.cells) coords.push_back({c.x, c.y});
  return build_micro_graph(coords, m, k);
}

inline Scale predecessor_scale(Scale s) {
  if (s == Scale::meso) return Scale::micro;
  if (s == Scale::macro) return Scale::meso;
  throw std::invalid_argument("predecessor_scale: micro has no predecessor");
}

// Candidate pairs for stochastic edge addition at `scale`: unordered pairs
// that share a block at the target scale but not at the finer predecessor
// scale and are not already connected. With c_max > 0 each node keeps only
// its c_max nearest candidate partners (a pair survives if either endpoint
// keeps it); c_max = 0 keeps everything.
inline EdgeList candidate_pairs(const CellGraph& g, Scale scale,
                                const EdgeList& existing_edges,
                                std::size_t c_max = 0) {
  if (scale == Scale::micro)
    throw std::invalid_argument("candidate_pairs: micro scale has no candidates");
  const Scale finer = predecessor_scale(scale);
  const int n = static_cast<int>(g.size());

  std::set<std::pair<int, int>> existing(existing_edges.begin(),
                                         existing_edges.end());
  std::vector<std::pair<int, int>> target_block(n), finer_block(n);
  for (int i = 0; i < n; ++i) {
    target_block[i] = g.block_of(i, scale);
    finer_block[i] = g.block_of(i, finer);
  }

  EdgeList all;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) {
      if (target_block[u] != target_block[v]) continue;
      if (finer_block[u] == finer_block[v]) continue;
      if (existing.count({u, v})) continue;
      all.push_back({u, v});
    }
  if (c_max == 0 || all.empty()) return all;

  // distance-ascending per-node truncation
  std::vector<std::vector<std::pair<double, std::size_t>>> per_node(n);
  for (std::size_t e = 0; e < all.size(); ++e) {
    const auto [u, v] = all[e];
    const double dx = g.coords[u].first - g.coords[v].first;
    const double dy = g.coords[u].second - g.coords[v].second;
    const double d2 = dx * dx + dy * dy;
    per_node[u].push_back({d2, e});
    per_node[v].push_back({d2, e});
  }
  std::vector<char> keep(all.size(), 0);
  for (int u = 0; u < n; ++u) {
    auto& lst = per_node[u];
    std::sort(lst.begin(), lst.end(),
              [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return all[a.second] < all[b.second];
              });
    for (std::size_t t = 0; t < std::min(c_max, lst.size()); ++t)
      keep[lst[t].second] = 1;
  }
  EdgeList out;
  for (std::size_t e = 0; e < all.size(); ++e)
    if (keep[e]) out.push_back(all[e]);
  return out;
}

// Debug export of per-scale edge lists as `scale,u,v` rows.
inline void export_edges_csv(
    const std::array<EdgeList, 3>& realized_per_scale,
    const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("export_edges_csv: cannot write " + path);
  f << "scale,u,v\n";
  for (int s = 0; s < 3; ++s)
    for (const auto& [u, v] : realized_per_scale[s])
      f << scale_name(static_cast<Scale>(s)) << ',' << u << ',' << v << '\n';
}

}  // namespace sigmma
