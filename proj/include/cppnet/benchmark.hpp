#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "cppnet/decoder.hpp"
#include "cppnet/errors.hpp"
#include "cppnet/io.hpp"
#include "cppnet/parallel.hpp"
#include "cppnet/scenario.hpp"
#include "cppnet/tsp_oracle.hpp"

namespace cppnet {

enum class Method { two_opt, learned };

inline constexpr std::array kMethods{Method::two_opt, Method::learned};

inline std::string_view to_string(Method m) { return m == Method::two_opt ? "two_opt" : "learned"; }

inline Method parse_method(std::string_view s) {
  if (s == "two_opt") return Method::two_opt;
  if (s == "learned") return Method::learned;
  throw Error(Errc::parse_error, "unknown method '" + std::string(s) + "'");
}

struct BenchRecord {
  std::string scenario_hash;
  double density = 0;
  Method method = Method::two_opt;
  double length = 0;     // meters
  double wall_time = 0;  // seconds

  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

struct BenchFailure {
  std::string scenario_hash;
  Method method = Method::two_opt;
  std::string message;
};

struct BenchOptions {
  Connectivity connectivity = Connectivity::four;
  bool timing = true;  // false records 0 s; true also pins a single worker
  unsigned workers = worker_count();
};

struct BenchResult {
  std::vector<BenchRecord> records;
  std::vector<BenchFailure> failures;
};

/// Baseline: cost matrix, nearest-neighbor start, 2-opt, A* stitching.
inline Trajectory solve_two_opt(const GridMap& map, Connectivity conn = Connectivity::four) {
  const CostMatrix costs = cost_matrix(map, conn);
  return stitch(two_opt(costs, slot_of(map, map.start())), map, conn);
}

/// Both methods on every map. Pairs (hash, method) already present in
/// `existing` are kept as they are and not rerun, so an interrupted sweep can
/// resume. Records come out in map order, two_opt before learned; existing
/// records for other scenarios follow in their original order. A failing
/// scenario is reported in `failures` and the sweep continues.
template <class S>
BenchResult run_benchmark(std::span<const GridMap> maps, const ModelParams<S>& params, const BenchOptions& options = {},
                          std::span<const BenchRecord> existing = {}) {
  std::map<std::pair<std::string, Method>, std::size_t> have;
  for (std::size_t k = 0; k < existing.size(); ++k) have.emplace(std::pair{existing[k].scenario_hash, existing[k].method}, k);

  struct Slot {
    std::optional<BenchRecord> record;
    std::optional<BenchFailure> failure;
  };
  std::vector<std::string> hashes(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) hashes[i] = scenario_hash(maps[i]);
  std::vector<Slot> slots(maps.size() * kMethods.size());
  const unsigned workers = options.timing ? 1u : options.workers;
  parallel_for(
      slots.size(),
      [&](std::size_t s) {
        const std::size_t i = s / kMethods.size();
        const Method method = kMethods[s % kMethods.size()];
        if (auto it = have.find({hashes[i], method}); it != have.end()) {
          slots[s].record = existing[it->second];
          return;
        }
        const GridMap& map = maps[i];
        try {
          const auto t0 = std::chrono::steady_clock::now();
          Trajectory t;
          if (method == Method::two_opt) {
            t = solve_two_opt(map, options.connectivity);
          } else {
            PlanOptions po;
            po.connectivity = options.connectivity;
            t = plan(map, params, po);
          }
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          slots[s].record = BenchRecord{hashes[i], map.density(), method, t.length, options.timing ? secs : 0.0};
        } catch (const std::exception& e) {
          slots[s].failure = BenchFailure{hashes[i], method, e.what()};
        }
      },
      workers);

  BenchResult out;
  std::vector<char> used(existing.size(), 0);
  for (const auto& s : slots) {
    if (s.record) {
      out.records.push_back(*s.record);
      if (auto it = have.find({s.record->scenario_hash, s.record->method}); it != have.end()) used[it->second] = 1;
    }
    if (s.failure) out.failures.push_back(*s.failure);
  }
  for (std::size_t k = 0; k < existing.size(); ++k)
    if (!used[k]) out.records.push_back(existing[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Summary statistics

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quantile by linear interpolation between order statistics at position
/// q * (n - 1) of the sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline FiveNumber five_number(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::empty_records, "no values to summarize");
  std::sort(v.begin(), v.end());
  return {v.front(), quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75), v.back()};
}

struct MethodSummary {
  Method method = Method::two_opt;
  std::size_t count = 0;
  FiveNumber length;
  FiveNumber wall_time;
};

/// One entry per method present, in two_opt, learned order.
inline std::vector<MethodSummary> summarize(std::span<const BenchRecord> records) {
  if (records.empty()) throw Error(Errc::empty_records, "no benchmark records");
  std::vector<MethodSummary> out;
  for (Method m : kMethods) {
    std::vector<double> len, time;
    for (const auto& r : records) {
      if (r.method != m) continue;
      len.push_back(r.length);
      time.push_back(r.wall_time);
    }
    if (len.empty()) continue;
    out.push_back({m, len.size(), five_number(len), five_number(time)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kRecordsHeader = "scenario_hash,density,method,length_m,wall_time_s";

inline std::string records_csv(std::span<const BenchRecord> records) {
  std::string out = std::string(kRecordsHeader) + "\n";
  for (const auto& r : records) {
    out += r.scenario_hash + "," + format_double(r.density) + "," + std::string(to_string(r.method)) + "," +
           format_double(r.length) + "," + format_double(r.wall_time) + "\n";
  }
  return out;
}

inline std::vector<BenchRecord> parse_records(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kRecordsHeader) throw Error(Errc::parse_error, "missing records CSV header");
  std::vector<BenchRecord> out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    auto f = split_char(lines[k], ',');
    if (f.size() != 5) throw Error(Errc::parse_error, "records line " + std::to_string(k + 1) + ": expected 5 fields");
    out.push_back({std::string(f[0]), parse_double(f[1]), parse_method(f[2]), parse_double(f[3]), parse_double(f[4])});
  }
  return out;
}

inline std::string summary_csv(std::span<const MethodSummary> summary) {
  std::string out = "# quartiles: linear interpolation at position q*(n-1) of the sorted sample\n";
  out += "method,metric,count,min,q1,median,q3,max\n";
  auto row = [&](const MethodSummary& s, std::string_view metric, const FiveNumber& f) {
    out += std::string(to_string(s.method)) + "," + std::string(metric) + "," + std::to_string(s.count) + "," +
           format_double(f.min) + "," + format_double(f.q1) + "," + format_double(f.median) + "," +
           format_double(f.q3) + "," + format_double(f.max) + "\n";
  };
  for (const auto& s : summary) {
    row(s, "length_m", s.length);
    row(s, "wall_time_s", s.wall_time);
  }
  return out;
}

}  // namespace cppnet
