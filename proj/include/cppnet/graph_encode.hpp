#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cppnet/errors.hpp"
#include "cppnet/grid_map.hpp"

namespace cppnet {

using IndicatorMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct EncodeOptions {
  Connectivity connectivity = Connectivity::four;
  bool normalize_coords = false;  // divide centers by the longer map side
};

/// Fixed-capacity graph view of a map. Slots [0, n_free) hold the free cells
/// in row-major order; slots [n_free, n_max) are padding with zero
/// coordinates, zero distances and zero indicator.
struct ScenarioGraph {
  int n_max = 0;
  int n_free = 0;
  int rows = 0;
  int cols = 0;
  Connectivity connectivity = Connectivity::four;
  Eigen::Matrix<double, Eigen::Dynamic, 2> coords;
  Eigen::MatrixXd dist;
  IndicatorMatrix indicator;
  std::vector<int> slot_of_cell;  // rows*cols entries, -1 for obstacles
  std::vector<Cell> cell_of_slot;  // n_free entries

  int slot(Cell c) const {
    if (c.row < 0 || c.row >= rows || c.col < 0 || c.col >= cols) throw Error(Errc::out_of_range, "cell outside grid");
    int s = slot_of_cell[static_cast<std::size_t>(c.row * cols + c.col)];
    if (s < 0) throw Error(Errc::out_of_range, "cell is an obstacle");
    return s;
  }
};

inline ScenarioGraph encode(const GridMap& map, int n_max, const EncodeOptions& options = {}) {
  const auto cells = map.free_cells();
  const int n_free = static_cast<int>(cells.size());
  if (n_free > n_max) {
    throw Error(Errc::capacity_exceeded,
                std::to_string(n_free) + " free cells exceed capacity " + std::to_string(n_max));
  }
  ScenarioGraph g;
  g.n_max = n_max;
  g.n_free = n_free;
  g.rows = map.rows();
  g.cols = map.cols();
  g.connectivity = options.connectivity;
  g.cell_of_slot = cells;
  g.slot_of_cell.assign(static_cast<std::size_t>(map.cell_count()), -1);
  for (int s = 0; s < n_free; ++s) g.slot_of_cell[static_cast<std::size_t>(map.index(cells[s]))] = s;

  const double scale = options.normalize_coords ? 1.0 / (std::max(map.rows(), map.cols()) * map.cell_size()) : 1.0;
  g.coords.setZero(n_max, 2);
  for (int s = 0; s < n_free; ++s) {
    g.coords(s, 0) = (cells[s].col + 0.5) * map.cell_size() * scale;
    g.coords(s, 1) = (cells[s].row + 0.5) * map.cell_size() * scale;
  }

  g.dist.setZero(n_max, n_max);
  g.indicator.setZero(n_max, n_max);
  for (int i = 0; i < n_free; ++i) {
    g.indicator(i, i) = 2;
    for (const Move& m : moves(options.connectivity)) {
      Cell nb{cells[i].row + m.dr, cells[i].col + m.dc};
      if (!map.is_free(nb)) continue;
      int j = g.slot_of_cell[static_cast<std::size_t>(map.index(nb))];
      g.indicator(i, j) = 1;
      g.dist(i, j) = (g.coords.row(i) - g.coords.row(j)).norm();
    }
  }
  return g;
}

inline Cell decode_node(const ScenarioGraph& graph, int slot) {
  if (slot < 0 || slot >= graph.n_free) {
    throw Error(Errc::out_of_range, "slot " + std::to_string(slot) + " is not a real node");
  }
  return graph.cell_of_slot[static_cast<std::size_t>(slot)];
}

}  // namespace cppnet
