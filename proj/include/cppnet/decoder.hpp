#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "cppnet/edge_probe.hpp"
#include "cppnet/errors.hpp"
#include "cppnet/gcn_model.hpp"
#include "cppnet/graph_encode.hpp"
#include "cppnet/grid_map.hpp"
#include "cppnet/io.hpp"
#include "cppnet/scenario.hpp"
#include "cppnet/tsp_oracle.hpp"

namespace cppnet {

struct PathSegment {
  std::vector<Cell> cells;  // from..to inclusive
  double length = 0;
};

/// A* over free cells. Heuristic: straight-line distance between cell
/// centers. Open-list order: lower f, then higher g, then lower cell index.
inline PathSegment astar(const GridMap& map, Cell from, Cell to, Connectivity conn = Connectivity::four) {
  if (!map.is_free(from) || !map.is_free(to)) throw Error(Errc::invalid_argument, "A* endpoints must be free cells");
  const auto cells = static_cast<std::size_t>(map.cell_count());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(cells, inf);
  std::vector<int> parent(cells, -1);
  std::vector<char> closed(cells, 0);
  auto heuristic = [&](Cell c) {
    return map.cell_size() * std::hypot(static_cast<double>(c.row - to.row), static_cast<double>(c.col - to.col));
  };
  // (f, -g, index): lexicographic min = lower f, higher g, lower index.
  using Entry = std::tuple<double, double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  const int src = map.index(from);
  const int dst = map.index(to);
  g[static_cast<std::size_t>(src)] = 0;
  open.push({heuristic(from), -0.0, src});
  while (!open.empty()) {
    auto [f, neg_g, u] = open.top();
    open.pop();
    auto uu = static_cast<std::size_t>(u);
    if (closed[uu]) continue;
    closed[uu] = 1;
    if (u == dst) break;
    for_each_neighbor(map, map.cell(u), conn, [&](Cell nb, double step) {
      const auto v = static_cast<std::size_t>(map.index(nb));
      if (closed[v]) return;
      const double ng = g[uu] + step;
      if (ng < g[v]) {
        g[v] = ng;
        parent[v] = u;
        open.push({ng + heuristic(nb), -ng, static_cast<int>(v)});
      }
    });
  }
  if (!closed[static_cast<std::size_t>(dst)]) throw Error(Errc::connectivity_failure, "A* found no path");
  PathSegment seg;
  seg.length = g[static_cast<std::size_t>(dst)];
  for (int v = dst; v != -1; v = parent[static_cast<std::size_t>(v)]) seg.cells.push_back(map.cell(v));
  std::reverse(seg.cells.begin(), seg.cells.end());
  return seg;
}

template <class H>
concept HeatSource = requires(H& h, int i, int j) {
  { h(i, j) } -> std::convertible_to<double>;
};

/// Greedy tour construction over a heat graph.
///
/// From the current node, candidates are the unvisited nodes within grid
/// radius r (number of moves under the graph's connectivity), starting at
/// r = 1 and growing until one exists. The candidate with the highest
/// symmetrized probability (p_ij + p_ji) / 2 is taken; ties go to the lower
/// slot. Every step visits exactly one new node.
template <HeatSource Heat>
Tour greedy_decode(Heat&& heat, const ScenarioGraph& graph, int start) {
  const int n = graph.n_free;
  if (start < 0 || start >= n) throw Error(Errc::out_of_range, "start slot is not a real node");
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> depth(static_cast<std::size_t>(n), -1);
  std::vector<int> frontier, next, touched;
  Tour tour;
  tour.order.reserve(static_cast<std::size_t>(n));
  tour.order.push_back(start);
  visited[static_cast<std::size_t>(start)] = 1;
  int current = start;
  while (static_cast<int>(tour.order.size()) < n) {
    // Breadth-first rings around the current cell until one holds an
    // unvisited node.
    frontier.assign(1, current);
    touched.assign(1, current);
    depth[static_cast<std::size_t>(current)] = 0;
    int best = -1;
    double best_p = -1;
    while (best < 0 && !frontier.empty()) {
      next.clear();
      for (int u : frontier) {
        const Cell cu = graph.cell_of_slot[static_cast<std::size_t>(u)];
        for (const Move& m : moves(graph.connectivity)) {
          const Cell cv{cu.row + m.dr, cu.col + m.dc};
          if (cv.row < 0 || cv.row >= graph.rows || cv.col < 0 || cv.col >= graph.cols) continue;
          const int v = graph.slot_of_cell[static_cast<std::size_t>(cv.row * graph.cols + cv.col)];
          if (v < 0 || depth[static_cast<std::size_t>(v)] >= 0) continue;
          depth[static_cast<std::size_t>(v)] = depth[static_cast<std::size_t>(u)] + 1;
          touched.push_back(v);
          next.push_back(v);
        }
      }
      for (int v : next) {
        if (visited[static_cast<std::size_t>(v)]) continue;
        const double p = 0.5 * (static_cast<double>(heat(current, v)) + static_cast<double>(heat(v, current)));
        if (p > best_p || (p == best_p && v < best)) {
          best = v;
          best_p = p;
        }
      }
      frontier.swap(next);
    }
    for (int v : touched) depth[static_cast<std::size_t>(v)] = -1;
    if (best < 0) throw Error(Errc::connectivity_failure, "unvisited nodes unreachable from the current cell");
    visited[static_cast<std::size_t>(best)] = 1;
    tour.order.push_back(best);
    current = best;
  }
  return tour;
}

inline Tour greedy_decode(const Eigen::MatrixXd& heat, const ScenarioGraph& graph, int start) {
  return greedy_decode([&heat](int i, int j) { return heat(i, j); }, graph, start);
}

struct Trajectory {
  Tour tour;
  std::vector<Cell> path;  // stitched cell sequence, consecutive cells adjacent
  double length = 0;
  double inference_ms = 0;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Joins consecutive tour cells with A* shortest paths. Tour slots index the
/// map's free cells in row-major order.
inline Trajectory stitch(const Tour& tour, const GridMap& map, Connectivity conn = Connectivity::four) {
  const auto cells = map.free_cells();
  Trajectory t;
  t.tour = tour;
  if (tour.order.empty()) return t;
  t.path.push_back(cells[static_cast<std::size_t>(tour.order[0])]);
  for (std::size_t k = 1; k < tour.order.size(); ++k) {
    auto seg = astar(map, cells[static_cast<std::size_t>(tour.order[k - 1])],
                     cells[static_cast<std::size_t>(tour.order[k])], conn);
    t.path.insert(t.path.end(), seg.cells.begin() + 1, seg.cells.end());
    t.length += seg.length;
  }
  t.tour.length = t.length;
  return t;
}

struct PlanOptions {
  Connectivity connectivity = Connectivity::four;
  bool dense_forward = false;  // evaluate the full heat graph instead of probing pairs on demand
};

/// encode -> eval-mode network -> greedy decode -> A* stitching, timed.
template <class S>
Trajectory plan(const GridMap& map, const ModelParams<S>& params, const PlanOptions& options = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  EncodeOptions enc;
  enc.connectivity = options.connectivity;
  enc.normalize_coords = params.config.normalize_coords;
  const ScenarioGraph graph = encode(map, params.config.n_max, enc);
  const int start = graph.slot(map.start());
  Tour tour;
  if (options.dense_forward) {
    tour = greedy_decode(infer_heat(params, graph), graph, start);
  } else {
    EdgeProbe<S> probe(params, graph);
    tour = greedy_decode(probe, graph, start);
  }
  Trajectory t = stitch(tour, map, options.connectivity);
  t.inference_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return t;
}

// ---------------------------------------------------------------------------
// Trajectory files

inline constexpr std::string_view kTrajectoryMagic = "cpp-traj";

inline std::string to_text(const Trajectory& t, std::string_view scenario_hash) {
  std::string out = std::string(kTrajectoryMagic) + " v1\n";
  out += "scenario " + std::string(scenario_hash) + "\n";
  out += "tour";
  for (int s : t.tour.order) out += " " + std::to_string(s);
  out += "\npath";
  for (const Cell& c : t.path) out += " " + std::to_string(c.row) + "," + std::to_string(c.col);
  out += "\nlength " + format_double(t.length) + "\n";
  out += "inference_ms " + format_double(t.inference_ms) + "\n";
  return out;
}

struct TrajectoryFile {
  std::string scenario_hash;
  Trajectory trajectory;
};

inline TrajectoryFile parse_trajectory(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(Errc::parse_error, "empty trajectory file");
  auto head = split_whitespace(lines[0]);
  if (head.size() != 2 || head[0] != kTrajectoryMagic) throw Error(Errc::parse_error, "not a trajectory file");
  if (head[1] != "v1") throw Error(Errc::format_version_mismatch, "trajectory version " + std::string(head[1]));
  if (lines.size() != 6) throw Error(Errc::parse_error, "trajectory file must have 6 lines");
  auto field = [&](std::size_t line, std::string_view key) {
    auto f = split_whitespace(lines[line]);
    if (f.empty() || f[0] != key) throw Error(Errc::parse_error, "expected '" + std::string(key) + "' line");
    f.erase(f.begin());
    return f;
  };
  TrajectoryFile out;
  auto hash = field(1, "scenario");
  if (hash.size() != 1) throw Error(Errc::parse_error, "malformed scenario line");
  out.scenario_hash = std::string(hash[0]);
  for (auto s : field(2, "tour")) out.trajectory.tour.order.push_back(parse_int<int>(s));
  for (auto s : field(3, "path")) {
    auto rc = split_char(s, ',');
    if (rc.size() != 2) throw Error(Errc::parse_error, "malformed path cell");
    out.trajectory.path.push_back({parse_int<int>(rc[0]), parse_int<int>(rc[1])});
  }
  auto len = field(4, "length");
  auto ms = field(5, "inference_ms");
  if (len.size() != 1 || ms.size() != 1) throw Error(Errc::parse_error, "malformed scalar line");
  out.trajectory.length = parse_double(len[0]);
  out.trajectory.tour.length = out.trajectory.length;
  out.trajectory.inference_ms = parse_double(ms[0]);
  return out;
}

}  // namespace cppnet
