#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cppnet/errors.hpp"
#include "cppnet/grid_map.hpp"
#include "cppnet/io.hpp"
#include "cppnet/random.hpp"

namespace cppnet {

/// Shortest collision-free grid-path lengths between free cells, indexed by
/// node slot (row-major free-cell order).
struct CostMatrix {
  int n = 0;
  Eigen::MatrixXd cost;

  double operator()(int i, int j) const { return cost(i, j); }
};

inline CostMatrix cost_matrix(const GridMap& map, Connectivity conn = Connectivity::four) {
  const auto cells = map.free_cells();
  const int n = static_cast<int>(cells.size());
  std::vector<int> slot(static_cast<std::size_t>(map.cell_count()), -1);
  for (int s = 0; s < n; ++s) slot[static_cast<std::size_t>(map.index(cells[s]))] = s;

  CostMatrix out;
  out.n = n;
  out.cost.setConstant(n, n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[static_cast<std::size_t>(src)] = 0;
    heap.push({0.0, src});
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(u)]) continue;
      for_each_neighbor(map, cells[static_cast<std::size_t>(u)], conn, [&](Cell nb, double step) {
        int v = slot[static_cast<std::size_t>(map.index(nb))];
        double nd = d + step;
        if (nd < dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = nd;
          heap.push({nd, v});
        }
      });
    }
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(dist[static_cast<std::size_t>(v)])) {
        throw Error(Errc::connectivity_failure, "free cells are not connected");
      }
      out.cost(src, v) = dist[static_cast<std::size_t>(v)];
    }
  }
  // Diagonal steps make the summation order direction-dependent, so the two
  // directions can differ in the last bit. Keep the matrix exactly symmetric.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.cost(j, i) = out.cost(i, j);
  return out;
}

/// Open path over all nodes; no return leg.
struct Tour {
  std::vector<int> order;
  double length = 0.0;

  friend bool operator==(const Tour&, const Tour&) = default;
};

inline double tour_length(const CostMatrix& costs, std::span<const int> order) {
  double len = 0;
  for (std::size_t k = 1; k < order.size(); ++k) len += costs(order[k - 1], order[k]);
  return len;
}

inline bool is_permutation_from(std::span<const int> order, int n, int start) {
  if (order.size() != static_cast<std::size_t>(n) || order.empty() || order[0] != start) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : order) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) return false;
    seen[static_cast<std::size_t>(v)] = 1;
  }
  return true;
}

inline constexpr double kCostTieTolerance = 1e-9;

/// Greedy nearest-neighbor path. Among equally near candidates the lowest
/// slot wins when seed == 0; any other seed ranks tied candidates by a
/// seeded random priority instead.
inline Tour nearest_neighbor(const CostMatrix& costs, int start, std::uint64_t seed = 0) {
  const int n = costs.n;
  if (start < 0 || start >= n) throw Error(Errc::out_of_range, "start slot out of range");
  std::vector<std::uint64_t> priority(static_cast<std::size_t>(n));
  if (seed == 0) {
    std::iota(priority.begin(), priority.end(), 0);
  } else {
    Rng rng(seed);
    for (auto& p : priority) p = rng();
  }
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  Tour tour;
  tour.order.reserve(static_cast<std::size_t>(n));
  int current = start;
  visited[static_cast<std::size_t>(start)] = 1;
  tour.order.push_back(start);
  for (int step = 1; step < n; ++step) {
    int best = -1;
    for (int v = 0; v < n; ++v) {
      if (visited[static_cast<std::size_t>(v)]) continue;
      if (best < 0) {
        best = v;
        continue;
      }
      double dv = costs(current, v);
      double db = costs(current, best);
      if (dv < db - kCostTieTolerance ||
          (dv <= db + kCostTieTolerance && priority[static_cast<std::size_t>(v)] < priority[static_cast<std::size_t>(best)])) {
        best = v;
      }
    }
    visited[static_cast<std::size_t>(best)] = 1;
    tour.order.push_back(best);
    current = best;
  }
  tour.length = tour_length(costs, tour.order);
  return tour;
}

/// Length change from reversing order[a..b] (1 <= a < b < n) in an open path.
inline double two_opt_delta(const CostMatrix& costs, std::span<const int> order, std::size_t a, std::size_t b) {
  const int prev = order[a - 1];
  const int first = order[a];
  const int last = order[b];
  double delta = costs(prev, last) - costs(prev, first);
  if (b + 1 < order.size()) {
    const int next = order[b + 1];
    delta += costs(first, next) - costs(last, next);
  }
  return delta;
}

inline constexpr double kImprovementEpsilon = 1e-9;

/// First-improvement 2-opt on an open path: scan (a, b) pairs in order, apply
/// the first strictly improving reversal, restart the scan. Position 0 never
/// moves. Terminates because every applied move lowers the length.
inline Tour improve_two_opt(const CostMatrix& costs, Tour tour) {
  auto& order = tour.order;
  const std::size_t n = order.size();
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t a = 1; a + 1 < n && !improved; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        if (two_opt_delta(costs, order, a, b) < -kImprovementEpsilon) {
          std::reverse(order.begin() + static_cast<std::ptrdiff_t>(a), order.begin() + static_cast<std::ptrdiff_t>(b) + 1);
          improved = true;
          break;
        }
      }
    }
  }
  tour.length = tour_length(costs, order);
  return tour;
}

inline Tour two_opt(const CostMatrix& costs, int start, std::uint64_t seed = 0) {
  if (costs.n < 1) throw Error(Errc::invalid_argument, "empty cost matrix");
  return improve_two_opt(costs, nearest_neighbor(costs, start, seed));
}

inline constexpr int kBruteForceLimit = 10;

/// Exact open-path optimum by enumeration; the lexicographically first order
/// wins ties.
inline Tour brute_force(const CostMatrix& costs, int start) {
  const int n = costs.n;
  if (n > kBruteForceLimit) throw Error(Errc::too_large, std::to_string(n) + " nodes exceed the enumeration limit");
  if (start < 0 || start >= n) throw Error(Errc::out_of_range, "start slot out of range");
  std::vector<int> rest;
  for (int v = 0; v < n; ++v)
    if (v != start) rest.push_back(v);
  Tour best;
  best.length = std::numeric_limits<double>::infinity();
  std::vector<int> order(static_cast<std::size_t>(n));
  order[0] = start;
  do {
    std::copy(rest.begin(), rest.end(), order.begin() + 1);
    double len = tour_length(costs, order);
    if (len < best.length - kImprovementEpsilon) {
      best.length = len;
      best.order = order;
    }
  } while (std::next_permutation(rest.begin(), rest.end()));
  best.length = tour_length(costs, best.order);
  return best;
}

/// Symmetric 0/1 matrix marking consecutive tour pairs.
using LabelGraph = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline LabelGraph tour_to_labels(const Tour& tour, int n_max) {
  LabelGraph labels = LabelGraph::Zero(n_max, n_max);
  for (std::size_t k = 1; k < tour.order.size(); ++k) {
    int i = tour.order[k - 1];
    int j = tour.order[k];
    if (i < 0 || j < 0 || i >= n_max || j >= n_max) throw Error(Errc::out_of_range, "tour slot beyond capacity");
    labels(i, j) = 1;
    labels(j, i) = 1;
  }
  return labels;
}

inline int slot_of(const GridMap& map, Cell cell) {
  int slot = 0;
  for (int idx = 0; idx < map.index(cell); ++idx) slot += map.is_obstacle(map.cell(idx)) ? 0 : 1;
  return slot;
}

/// Ground-truth tour for a scenario: grid-path costs, nearest-neighbor
/// start, 2-opt.
inline Tour label_tour(const GridMap& map, Connectivity conn = Connectivity::four, std::uint64_t seed = 0) {
  return two_opt(cost_matrix(map, conn), slot_of(map, map.start()), seed);
}

// ---------------------------------------------------------------------------
// Label cache files: header, then the tour's consecutive pairs in order.

inline constexpr std::string_view kLabelsMagic = "cpp-labels";

inline std::string labels_to_text(std::string_view scenario_hash, const Tour& tour) {
  std::string out = std::string(kLabelsMagic) + " v1 " + std::string(scenario_hash) + " " +
                    std::to_string(tour.order.size()) + "\n";
  if (tour.order.size() == 1) out += std::to_string(tour.order[0]) + "\n";
  for (std::size_t k = 1; k < tour.order.size(); ++k) {
    out += std::to_string(tour.order[k - 1]) + " " + std::to_string(tour.order[k]) + "\n";
  }
  return out;
}

struct LabelFile {
  std::string scenario_hash;
  std::vector<int> order;
};

inline LabelFile parse_labels(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(Errc::parse_error, "empty label file");
  auto head = split_whitespace(lines[0]);
  if (head.size() < 2 || head[0] != kLabelsMagic) throw Error(Errc::parse_error, "not a label file");
  if (head[1] != "v1") throw Error(Errc::format_version_mismatch, "label version " + std::string(head[1]));
  if (head.size() != 4) throw Error(Errc::parse_error, "malformed label header");
  LabelFile out;
  out.scenario_hash = std::string(head[2]);
  const auto nodes = parse_int<std::size_t>(head[3]);
  if (nodes == 0) throw Error(Errc::parse_error, "label file with no nodes");
  if (nodes == 1) {
    if (lines.size() != 2) throw Error(Errc::parse_error, "single-node label file needs its slot");
    out.order.push_back(parse_int<int>(lines[1]));
    return out;
  }
  if (lines.size() != nodes) throw Error(Errc::parse_error, "label pair count mismatch");
  for (std::size_t k = 1; k < nodes; ++k) {
    auto f = split_whitespace(lines[k]);
    if (f.size() != 2) throw Error(Errc::parse_error, "malformed label pair");
    int i = parse_int<int>(f[0]);
    int j = parse_int<int>(f[1]);
    if (k == 1) out.order.push_back(i);
    else if (out.order.back() != i) throw Error(Errc::parse_error, "label pairs do not form a path");
    out.order.push_back(j);
  }
  return out;
}

/// Directory of `<scenario_hash>.labels` files.
class LabelCache {
 public:
  explicit LabelCache(fs::path dir) : dir_(std::move(dir)) {}

  fs::path path_for(std::string_view hash) const { return dir_ / (std::string(hash) + ".labels"); }

  std::optional<std::vector<int>> find(std::string_view hash) const {
    auto p = path_for(hash);
    if (!fs::exists(p)) return std::nullopt;
    auto file = parse_labels(read_file(p));
    if (file.scenario_hash != hash) throw Error(Errc::parse_error, "label cache key mismatch in " + p.string());
    return file.order;
  }

  void store(std::string_view hash, const Tour& tour) const { write_file_atomic(path_for(hash), labels_to_text(hash, tour)); }

 private:
  fs::path dir_;
};

}  // namespace cppnet
