#include <gtest/gtest.h>

#include <algorithm>
#include <regex>

#include "cppnet/benchmark.hpp"
#include "cppnet/svg.hpp"
#include "test_support.hpp"

using namespace cppnet;
using cppnet::testing::map_from;

namespace {

ModelParams<double> tiny_params() {
  ModelConfig c;
  c.hidden = 6;
  c.conv_layers = 2;
  c.n_max = 100;
  return init_params(c, 1);
}

std::vector<GridMap> some_maps(int n) {
  std::vector<GridMap> maps;
  for (int i = 0; i < n; ++i) maps.push_back(generate_scenario(6, 6, 1.0, 0.05 * i, static_cast<std::uint64_t>(i)));
  return maps;
}

BenchRecord rec(Method m, double len) { return {"h", 0.1, m, len, len / 10}; }

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Summarize, SingleRecord) {
  std::vector r{rec(Method::learned, 7.0)};
  auto s = summarize(r);
  ASSERT_EQ(s.size(), 1u);
  const auto& f = s[0].length;
  EXPECT_EQ(f.min, 7.0);
  EXPECT_EQ(f.q1, 7.0);
  EXPECT_EQ(f.median, 7.0);
  EXPECT_EQ(f.q3, 7.0);
  EXPECT_EQ(f.max, 7.0);
}

TEST(Summarize, TextbookQuartiles) {
  std::vector<BenchRecord> r;
  for (double v : {4.0, 1.0, 5.0, 3.0, 2.0}) r.push_back(rec(Method::two_opt, v));
  auto s = summarize(r);
  EXPECT_EQ(s[0].length.median, 3.0);
  EXPECT_EQ(s[0].length.q1, 2.0);
  EXPECT_EQ(s[0].length.q3, 4.0);
  EXPECT_DOUBLE_EQ(five_number({1, 2, 3, 4}).q1, 1.75);
}

TEST(Summarize, PermutationInvariantAndEmpty) {
  std::vector<BenchRecord> r;
  for (int i = 0; i < 9; ++i) r.push_back(rec(i % 2 ? Method::learned : Method::two_opt, (i * 7) % 11));
  auto a = summarize(r);
  std::reverse(r.begin(), r.end());
  std::rotate(r.begin(), r.begin() + 3, r.end());
  auto b = summarize(r);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].length.q1, b[k].length.q1);
    EXPECT_EQ(a[k].wall_time.q3, b[k].wall_time.q3);
  }
  try {
    summarize(std::vector<BenchRecord>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_records);
  }
}

TEST(RunBenchmark, BothMethodsSameMetric) {
  auto maps = some_maps(5);
  BenchOptions o;
  o.timing = false;
  auto res = run_benchmark(maps, tiny_params(), o);
  ASSERT_EQ(res.records.size(), 10u);
  EXPECT_TRUE(res.failures.empty());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& a = res.records[2 * i];
    const auto& b = res.records[2 * i + 1];
    EXPECT_EQ(a.method, Method::two_opt);
    EXPECT_EQ(b.method, Method::learned);
    EXPECT_EQ(a.scenario_hash, scenario_hash(maps[i]));
    EXPECT_EQ(a.wall_time, 0.0);
    // Counting bound: k cells need k - 1 unit moves.
    EXPECT_GE(a.length, maps[i].free_count() - 1);
    EXPECT_GE(b.length, maps[i].free_count() - 1);
    EXPECT_EQ(a.length, solve_two_opt(maps[i]).length);
    EXPECT_EQ(b.length, plan(maps[i], tiny_params()).length);
  }
}

TEST(RunBenchmark, TimingModeRecordsPositiveTimes) {
  auto maps = some_maps(2);
  auto res = run_benchmark(maps, tiny_params());
  for (const auto& r : res.records) EXPECT_GT(r.wall_time, 0.0);
}

TEST(RunBenchmark, ResumeSkipsExistingAndMatchesFullRun) {
  auto maps = some_maps(4);
  BenchOptions o;
  o.timing = false;
  auto full = run_benchmark(maps, tiny_params(), o);
  std::vector<BenchRecord> partial(full.records.begin(), full.records.begin() + 3);
  partial[0].length = -1;  // marker: must be kept, not recomputed
  auto resumed = run_benchmark(maps, tiny_params(), o, partial);
  ASSERT_EQ(resumed.records.size(), full.records.size());
  EXPECT_EQ(resumed.records[0].length, -1);
  for (std::size_t k = 1; k < full.records.size(); ++k) EXPECT_EQ(resumed.records[k], full.records[k]);
}

TEST(RunBenchmark, FailuresDoNotAbortSweep) {
  auto maps = some_maps(2);
  maps.insert(maps.begin() + 1, generate_scenario(11, 11, 1.0, 0.0, 1));  // 121 cells > n_max
  BenchOptions o;
  o.timing = false;
  auto res = run_benchmark(maps, tiny_params(), o);
  ASSERT_EQ(res.failures.size(), 1u);
  EXPECT_EQ(res.failures[0].method, Method::learned);
  EXPECT_EQ(res.records.size(), 5u);
}

TEST(RecordsCsv, RoundTrip) {
  std::vector<BenchRecord> r{{"00aa", 0.25, Method::two_opt, 80.5, 0.001}, {"00aa", 0.25, Method::learned, 82, 0}};
  auto text = records_csv(r);
  EXPECT_EQ(text, "scenario_hash,density,method,length_m,wall_time_s\n00aa,0.25,two_opt,80.5,0.001\n"
                  "00aa,0.25,learned,82,0\n");
  EXPECT_EQ(parse_records(text), r);
  EXPECT_THROW(parse_records("bad\n"), Error);
  EXPECT_THROW(parse_records(std::string(kRecordsHeader) + "\nx,1,two_opt,1\n"), Error);
  EXPECT_THROW(parse_records(std::string(kRecordsHeader) + "\nx,1,greedy,1,0\n"), Error);
}

TEST(Svg, TrajectoryStructure) {
  auto m = map_from({"..", ".."});
  auto t = stitch(Tour{{0, 1, 3, 2}, 0}, m);
  auto svg = render_trajectory(m, t);
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  std::smatch match;
  ASSERT_TRUE(std::regex_search(svg, match, std::regex("points=\"([^\"]*)\"")));
  EXPECT_EQ(count(match[1].str(), ",") , 4u);
  EXPECT_EQ(count(svg, "class=\"obstacle\""), 0u);
  EXPECT_EQ(svg, render_trajectory(m, t));
}

TEST(Svg, OneObstacleRect) {
  auto m = map_from({".#", ".."});
  auto t = stitch(Tour{{0, 1, 2}, 0}, m);
  EXPECT_EQ(count(render_trajectory(m, t), "class=\"obstacle\""), 1u);
}

TEST(Svg, BoxPlotDeterministic) {
  std::vector<BenchRecord> r;
  for (int i = 0; i < 6; ++i) r.push_back(rec(i % 2 ? Method::learned : Method::two_opt, 10 + i));
  auto s = summarize(r);
  auto a = render_summary(s);
  EXPECT_EQ(a, render_summary(s));
  EXPECT_EQ(count(a, "class=\"box\""), 2u);
  EXPECT_EQ(count(a, "class=\"median\""), 2u);
}
