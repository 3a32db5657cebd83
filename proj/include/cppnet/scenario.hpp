#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cppnet/errors.hpp"
#include "cppnet/grid_map.hpp"
#include "cppnet/io.hpp"
#include "cppnet/parallel.hpp"
#include "cppnet/random.hpp"

namespace cppnet {

/// How obstacles are drawn.
///  - rejection: uniform layout, redrawn until the free cells are connected.
///    Fails near 50% density on small grids, where almost no uniform layout
///    is connected.
///  - connected: obstacles placed one at a time, each uniformly among the
///    free cells whose blocking keeps the rest connected. Never fails.
enum class Placement { rejection, connected };

inline std::string_view to_string(Placement p) { return p == Placement::rejection ? "rejection" : "connected"; }

inline Placement parse_placement(std::string_view s) {
  if (s == "rejection") return Placement::rejection;
  if (s == "connected") return Placement::connected;
  throw Error(Errc::invalid_argument, "unknown placement '" + std::string(s) + "'");
}

struct GenerateOptions {
  Connectivity connectivity = Connectivity::four;
  std::optional<Cell> start;  // defaults to the top-left cell
  int max_retries = 1000;
  Placement placement = Placement::rejection;
};

namespace detail {

/// Cut vertices of the free-cell graph (Tarjan low-link, iterative). The
/// free cells must be connected.
inline std::vector<char> cut_cells(const GridMap& map, Connectivity conn) {
  const auto n = static_cast<std::size_t>(map.cell_count());
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < map.cell_count(); ++i) {
    if (!map.is_free(map.cell(i))) continue;
    for_each_neighbor(map, map.cell(i), conn, [&](Cell nb, double) { adj[static_cast<std::size_t>(i)].push_back(map.index(nb)); });
  }
  std::vector<int> disc(n, -1), low(n, 0), parent(n, -1), children(n, 0);
  std::vector<std::size_t> next(n, 0);
  std::vector<char> cut(n, 0);
  const int root = map.index(map.start());
  int clock = 0;
  std::vector<int> stack{root};
  disc[static_cast<std::size_t>(root)] = low[static_cast<std::size_t>(root)] = clock++;
  while (!stack.empty()) {
    const int v = stack.back();
    const auto vv = static_cast<std::size_t>(v);
    if (next[vv] < adj[vv].size()) {
      const int w = adj[vv][next[vv]++];
      const auto ww = static_cast<std::size_t>(w);
      if (disc[ww] < 0) {
        parent[ww] = v;
        ++children[vv];
        disc[ww] = low[ww] = clock++;
        stack.push_back(w);
      } else if (w != parent[vv]) {
        low[vv] = std::min(low[vv], disc[ww]);
      }
      continue;
    }
    stack.pop_back();
    if (const int u = parent[vv]; u >= 0) {
      const auto uu = static_cast<std::size_t>(u);
      low[uu] = std::min(low[uu], low[vv]);
      if (u != root && low[vv] >= disc[uu]) cut[uu] = 1;
    }
  }
  if (children[static_cast<std::size_t>(root)] > 1) cut[static_cast<std::size_t>(root)] = 1;
  return cut;
}

}  // namespace detail

/// Random obstacle map with exactly round(density * rows * cols) obstacles
/// outside the start cell and connected free cells; see Placement. Rejection
/// redraws come from derived sub-seeds.
inline GridMap generate_scenario(int rows, int cols, double cell_size, double density, std::uint64_t seed,
                                 const GenerateOptions& options = {}) {
  if (!(density >= 0.0 && density <= 0.5)) {
    throw Error(Errc::invalid_density, "density " + format_double(density) + " outside [0, 0.5]");
  }
  if (rows < 2 || cols < 2) throw Error(Errc::invalid_argument, "rows and cols must be at least 2");
  const int cells = rows * cols;
  const Cell start = options.start.value_or(Cell{0, 0});
  if (start.row < 0 || start.row >= rows || start.col < 0 || start.col >= cols) {
    throw Error(Errc::invalid_argument, "start cell outside the grid");
  }
  const int obstacles = static_cast<int>(std::lround(density * cells));
  if (cells - obstacles < 2) throw Error(Errc::invalid_density, "fewer than two free cells");

  const int start_index = start.row * cols + start.col;
  if (options.placement == Placement::connected) {
    Rng rng(derive_seed(seed, 0));
    std::vector<std::uint8_t> occupancy(static_cast<std::size_t>(cells), 0);
    std::vector<int> pool;
    for (int k = 0; k < obstacles; ++k) {
      const auto cut = detail::cut_cells(GridMap(rows, cols, cell_size, occupancy, start), options.connectivity);
      pool.clear();
      for (int i = 0; i < cells; ++i)
        if (i != start_index && !occupancy[static_cast<std::size_t>(i)] && !cut[static_cast<std::size_t>(i)]) pool.push_back(i);
      // A connected graph with two or more vertices has two non-cut
      // vertices, so one of them is not the start and the pool is nonempty.
      occupancy[static_cast<std::size_t>(pool[uniform_index(rng, pool.size())])] = 1;
    }
    return GridMap(rows, cols, cell_size, std::move(occupancy), start);
  }
  std::vector<int> candidates;
  candidates.reserve(static_cast<std::size_t>(cells - 1));
  for (int i = 0; i < cells; ++i)
    if (i != start_index) candidates.push_back(i);

  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::vector<int> pool = candidates;
    std::vector<std::uint8_t> occupancy(static_cast<std::size_t>(cells), 0);
    // Partial Fisher-Yates: the first `obstacles` entries are a uniform sample.
    for (int k = 0; k < obstacles; ++k) {
      auto pick = static_cast<std::size_t>(k) + uniform_index(rng, pool.size() - static_cast<std::size_t>(k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick]);
      occupancy[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])] = 1;
    }
    GridMap map(rows, cols, cell_size, std::move(occupancy), start);
    if (is_connected(map, options.connectivity)) return map;
  }
  throw Error(Errc::connectivity_failure, "no connected layout within " + std::to_string(options.max_retries) +
                                              " retries (density " + format_double(density) + ")");
}

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw Error(Errc::parse_error, "unknown split tag '" + std::string(s) + "'");
}

struct ScenarioSet {
  std::vector<GridMap> scenarios;
  std::vector<Split> splits;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return scenarios.size(); }

  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == which) out.push_back(i);
    return out;
  }

  std::vector<GridMap> subset(Split which) const {
    std::vector<GridMap> out;
    for (auto i : indices(which)) out.push_back(scenarios[i]);
    return out;
  }

  friend bool operator==(const ScenarioSet&, const ScenarioSet&) = default;
};

struct SplitRatios {
  double train = 1.0;
  double validation = 0.0;
  double test = 0.0;
};

struct DatasetSpec {
  int count = 0;
  int rows = 10;
  int cols = 10;
  double cell_size = 1.0;
  double density_lo = 0.0;
  double density_hi = 0.5;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  // Connected placement: rejection cannot reach the upper end of the
  // default density range.
  GenerateOptions generate{Connectivity::four, std::nullopt, 1000, Placement::connected};
};

/// Validation and test sizes are floor(count * ratio); the remainder goes
/// to train.
inline std::array<int, 3> split_sizes(int count, const SplitRatios& r) {
  auto part = [&](double ratio) { return static_cast<int>(std::floor(count * ratio + 1e-9)); };
  int val = part(r.validation);
  int test = part(r.test);
  return {count - val - test, val, test};
}

inline ScenarioSet dataset_build(const DatasetSpec& spec) {
  const auto& r = spec.ratios;
  if (r.train < 0 || r.validation < 0 || r.test < 0 || std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) {
    throw Error(Errc::invalid_argument, "split ratios must be non-negative and sum to 1");
  }
  if (spec.count < 3) throw Error(Errc::invalid_argument, "dataset needs at least 3 scenarios");
  if (!(spec.density_lo <= spec.density_hi)) throw Error(Errc::invalid_argument, "empty density range");

  const auto n = static_cast<std::size_t>(spec.count);
  ScenarioSet set;
  set.seed = spec.seed;
  set.scenarios.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const std::uint64_t sub = derive_seed(spec.seed, i);
    Rng rng(sub);
    const double density = uniform(rng, spec.density_lo, spec.density_hi);
    try {
      set.scenarios[i] =
          generate_scenario(spec.rows, spec.cols, spec.cell_size, density, derive_seed(sub, 1), spec.generate);
    } catch (const Error& e) {
      throw Error(e.code(), "scenario " + std::to_string(i) + ": " + e.what());
    }
  });

  const auto sizes = split_sizes(spec.count, r);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, ~0ULL));
  shuffle(order, rng);
  set.splits.assign(n, Split::train);
  for (std::size_t k = 0; k < n; ++k) {
    auto rank = static_cast<int>(k);
    if (rank >= sizes[0] + sizes[1]) set.splits[order[k]] = Split::test;
    else if (rank >= sizes[0]) set.splits[order[k]] = Split::validation;
  }
  return set;
}

// ---------------------------------------------------------------------------
// Text formats

inline constexpr std::string_view kScenarioMagic = "cpp-scenario";
inline constexpr std::string_view kScenarioSetMagic = "cpp-scenario-set";

inline std::string to_text(const GridMap& map) {
  std::string out;
  out += std::string(kScenarioMagic) + " v1 " + std::to_string(map.rows()) + " " + std::to_string(map.cols()) + " " +
         format_double(map.cell_size()) + " " + std::to_string(map.start().row) + " " +
         std::to_string(map.start().col) + "\n";
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) out += map.is_obstacle({r, c}) ? '#' : '.';
    out += '\n';
  }
  return out;
}

inline GridMap parse_scenario(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(Errc::parse_error, "empty scenario file");
  auto head = split_whitespace(lines[0]);
  if (head.size() < 2 || head[0] != kScenarioMagic) throw Error(Errc::parse_error, "not a scenario file");
  if (head[1] != "v1") throw Error(Errc::format_version_mismatch, "scenario version " + std::string(head[1]));
  if (head.size() != 7) throw Error(Errc::parse_error, "malformed scenario header");
  const int rows = parse_int<int>(head[2]);
  const int cols = parse_int<int>(head[3]);
  const double cell_size = parse_double(head[4]);
  const Cell start{parse_int<int>(head[5]), parse_int<int>(head[6])};
  if (rows < 1 || cols < 1 || rows > 100000 || cols > 100000) throw Error(Errc::parse_error, "bad grid shape");
  if (lines.size() != static_cast<std::size_t>(rows) + 1) {
    throw Error(Errc::parse_error, "expected " + std::to_string(rows) + " grid rows, found " +
                                       std::to_string(lines.size() - 1));
  }
  std::vector<std::uint8_t> occ;
  occ.reserve(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    auto line = lines[static_cast<std::size_t>(r) + 1];
    if (line.size() != static_cast<std::size_t>(cols)) throw Error(Errc::parse_error, "grid row width mismatch");
    for (char ch : line) {
      if (ch == '.') occ.push_back(0);
      else if (ch == '#') occ.push_back(1);
      else throw Error(Errc::parse_error, std::string("unexpected grid character '") + ch + "'");
    }
  }
  try {
    return GridMap(rows, cols, cell_size, std::move(occ), start);
  } catch (const Error& e) {
    throw Error(Errc::parse_error, e.what());
  }
}

/// Content hash of the canonical scenario text; keys label caches and
/// benchmark records.
inline std::string scenario_hash(const GridMap& map) { return hex64(fnv1a64(to_text(map))); }

inline void save_scenario(const GridMap& map, const fs::path& path) { write_file_atomic(path, to_text(map)); }

inline GridMap load_scenario(const fs::path& path) { return parse_scenario(read_file(path)); }

inline std::string scenario_file_name(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "scenario_" + digits + ".txt";
}

inline constexpr std::string_view kManifestName = "manifest.txt";

/// Writes one file per scenario plus a manifest into `dir`.
inline void save_scenarios(const ScenarioSet& set, const fs::path& dir) {
  if (set.splits.size() != set.scenarios.size()) throw Error(Errc::shape_mismatch, "split tags do not match scenarios");
  std::string manifest = std::string(kScenarioSetMagic) + " v1 " + std::to_string(set.seed) + " " +
                         std::to_string(set.scenarios.size()) + "\n";
  for (std::size_t i = 0; i < set.scenarios.size(); ++i) {
    const auto name = scenario_file_name(i);
    save_scenario(set.scenarios[i], dir / name);
    manifest += name + " " + to_string(set.splits[i]) + "\n";
  }
  write_file_atomic(dir / kManifestName, manifest);
}

/// Accepts the directory written by save_scenarios or its manifest path.
inline ScenarioSet load_scenarios(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / kManifestName : path;
  const fs::path dir = manifest_path.parent_path();
  const std::string text = read_file(manifest_path);
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(Errc::parse_error, "empty manifest");
  auto head = split_whitespace(lines[0]);
  if (head.size() < 2 || head[0] != kScenarioSetMagic) throw Error(Errc::parse_error, "not a scenario manifest");
  if (head[1] != "v1") throw Error(Errc::format_version_mismatch, "manifest version " + std::string(head[1]));
  if (head.size() != 4) throw Error(Errc::parse_error, "malformed manifest header");
  ScenarioSet set;
  set.seed = parse_int<std::uint64_t>(head[2]);
  const auto count = parse_int<std::size_t>(head[3]);
  if (lines.size() != count + 1) throw Error(Errc::parse_error, "manifest lists a different number of scenarios");
  for (std::size_t i = 0; i < count; ++i) {
    auto fields = split_whitespace(lines[i + 1]);
    if (fields.size() != 2) throw Error(Errc::parse_error, "malformed manifest entry");
    set.scenarios.push_back(load_scenario(dir / std::string(fields[0])));
    set.splits.push_back(parse_split(fields[1]));
  }
  return set;
}

}  // namespace cppnet
