#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cppnet/errors.hpp"

namespace cppnet {

struct Cell {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

enum class Connectivity { four = 4, eight = 8 };

/// Grid moves in a fixed order: orthogonal first, then diagonal. Every
/// search in the library iterates them in this order.
struct Move {
  int dr;
  int dc;
  bool diagonal;
};

inline constexpr std::array<Move, 8> kMoves{{
    {-1, 0, false}, {0, -1, false}, {0, 1, false}, {1, 0, false},
    {-1, -1, true}, {-1, 1, true}, {1, -1, true}, {1, 1, true},
}};

inline std::span<const Move> moves(Connectivity conn) {
  return {kMoves.data(), conn == Connectivity::four ? 4u : 8u};
}

/// Occupancy tiling of a rectangular area into square cells. Obstacle cells
/// are true in `occupancy`. The start cell is always free.
class GridMap {
 public:
  GridMap() = default;

  GridMap(int rows, int cols, double cell_size, std::vector<std::uint8_t> occupancy, Cell start)
      : rows_(rows), cols_(cols), cell_size_(cell_size), occupancy_(std::move(occupancy)), start_(start) {
    if (rows < 1 || cols < 1) throw Error(Errc::invalid_argument, "grid needs at least one row and column");
    if (!(cell_size > 0) || !std::isfinite(cell_size)) throw Error(Errc::invalid_argument, "cell size must be positive");
    if (occupancy_.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
      throw Error(Errc::shape_mismatch, "occupancy size does not match rows*cols");
    }
    for (auto& v : occupancy_) v = v ? 1 : 0;
    if (!contains(start)) throw Error(Errc::invalid_argument, "start cell outside the grid");
    if (is_obstacle(start)) throw Error(Errc::invalid_argument, "start cell is an obstacle");
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int cell_count() const noexcept { return rows_ * cols_; }
  double cell_size() const noexcept { return cell_size_; }
  Cell start() const noexcept { return start_; }
  std::span<const std::uint8_t> occupancy() const noexcept { return occupancy_; }

  bool contains(Cell c) const noexcept { return c.row >= 0 && c.row < rows_ && c.col >= 0 && c.col < cols_; }
  int index(Cell c) const noexcept { return c.row * cols_ + c.col; }
  Cell cell(int index) const noexcept { return {index / cols_, index % cols_}; }
  bool is_obstacle(Cell c) const noexcept { return occupancy_[static_cast<std::size_t>(index(c))] != 0; }
  bool is_free(Cell c) const noexcept { return contains(c) && !is_obstacle(c); }

  int obstacle_count() const noexcept {
    int n = 0;
    for (auto v : occupancy_) n += v;
    return n;
  }
  int free_count() const noexcept { return cell_count() - obstacle_count(); }
  double density() const noexcept { return static_cast<double>(obstacle_count()) / cell_count(); }

  /// Free cells in row-major order; position in this list is the node slot.
  std::vector<Cell> free_cells() const {
    std::vector<Cell> out;
    out.reserve(static_cast<std::size_t>(free_count()));
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c)
        if (!is_obstacle({r, c})) out.push_back({r, c});
    return out;
  }

  friend bool operator==(const GridMap&, const GridMap&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  double cell_size_ = 1.0;
  std::vector<std::uint8_t> occupancy_;
  Cell start_{};
};

/// Calls f(neighbor, step_length_m) for every free neighbor of `c`.
template <class F>
void for_each_neighbor(const GridMap& map, Cell c, Connectivity conn, F&& f) {
  for (const Move& m : moves(conn)) {
    Cell n{c.row + m.dr, c.col + m.dc};
    if (map.is_free(n)) f(n, m.diagonal ? map.cell_size() * std::sqrt(2.0) : map.cell_size());
  }
}

inline bool adjacent(Cell a, Cell b, Connectivity conn) noexcept {
  int dr = std::abs(a.row - b.row);
  int dc = std::abs(a.col - b.col);
  if (conn == Connectivity::four) return dr + dc == 1;
  return std::max(dr, dc) == 1;
}

/// Number of free cells reachable from the start cell.
inline int reachable_count(const GridMap& map, Connectivity conn) {
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(map.cell_count()), 0);
  std::deque<Cell> queue{map.start()};
  seen[static_cast<std::size_t>(map.index(map.start()))] = 1;
  int count = 0;
  while (!queue.empty()) {
    Cell c = queue.front();
    queue.pop_front();
    ++count;
    for_each_neighbor(map, c, conn, [&](Cell n, double) {
      auto& s = seen[static_cast<std::size_t>(map.index(n))];
      if (!s) {
        s = 1;
        queue.push_back(n);
      }
    });
  }
  return count;
}

inline bool is_connected(const GridMap& map, Connectivity conn) {
  return reachable_count(map, conn) == map.free_count();
}

}  // namespace cppnet
