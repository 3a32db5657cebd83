#pragma once

// Independent reference computations used only by tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "cppnet/grid_map.hpp"

namespace cppnet::testing {

/// Free cells reachable from `from`, by explicit stack flood fill.
inline int flood_count(std::span<const std::uint8_t> occ, int rows, int cols, int from, bool diagonal) {
  std::vector<char> seen(occ.size(), 0);
  std::vector<int> stack{from};
  seen[static_cast<std::size_t>(from)] = 1;
  int count = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    ++count;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if ((dr == 0 && dc == 0) || (!diagonal && dr != 0 && dc != 0)) continue;
        int r = v / cols + dr, c = v % cols + dc;
        if (r < 0 || r >= rows || c < 0 || c >= cols) continue;
        int w = r * cols + c;
        if (occ[static_cast<std::size_t>(w)] || seen[static_cast<std::size_t>(w)]) continue;
        seen[static_cast<std::size_t>(w)] = 1;
        stack.push_back(w);
      }
    }
  }
  return count;
}

/// Floyd-Warshall over free cells in row-major slot order; diagonal moves cost
/// sqrt(2) when enabled.
inline std::vector<std::vector<double>> floyd_costs(const GridMap& map, bool diagonal) {
  auto cells = map.free_cells();
  const std::size_t n = cells.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (std::size_t j = 0; j < n; ++j) {
      int dr = std::abs(cells[i].row - cells[j].row), dc = std::abs(cells[i].col - cells[j].col);
      if (dr + dc == 1) d[i][j] = map.cell_size();
      else if (diagonal && dr == 1 && dc == 1) d[i][j] = std::sqrt(2.0) * map.cell_size();
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

/// Minimum open-path length from `start` by enumerating every order.
inline double enumerate_optimum(const std::vector<std::vector<double>>& d, int start) {
  std::vector<int> rest;
  for (int i = 0; i < static_cast<int>(d.size()); ++i)
    if (i != start) rest.push_back(i);
  double best = std::numeric_limits<double>::infinity();
  do {
    double len = 0;
    int prev = start;
    for (int v : rest) {
      len += d[static_cast<std::size_t>(prev)][static_cast<std::size_t>(v)];
      prev = v;
    }
    best = std::min(best, len);
  } while (std::next_permutation(rest.begin(), rest.end()));
  return best;
}

}  // namespace cppnet::testing
