#include <gtest/gtest.h>

#include "cppnet/scenario.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cppnet;
using cppnet::testing::flood_count;

namespace {

void expect_valid(const GridMap& m, int obstacles, Connectivity conn) {
  EXPECT_EQ(m.obstacle_count(), obstacles);
  EXPECT_TRUE(m.is_free({0, 0}));
  EXPECT_EQ(flood_count(m.occupancy(), m.rows(), m.cols(), m.index(m.start()), conn == Connectivity::eight),
            m.free_count());
}

GenerateOptions with(Placement p, Connectivity c = Connectivity::four) {
  GenerateOptions o;
  o.placement = p;
  o.connectivity = c;
  return o;
}

}  // namespace

TEST(GenerateScenario, ZeroDensityIsOpen) {
  auto m = generate_scenario(10, 10, 1.0, 0.0, 123);
  EXPECT_EQ(m.free_count(), 100);
  EXPECT_EQ(m.obstacle_count(), 0);
}

TEST(GenerateScenario, TenPercentSeedSeven) {
  auto m = generate_scenario(10, 10, 1.0, 0.10, 7);
  expect_valid(m, 10, Connectivity::four);
  EXPECT_EQ(m.start(), (Cell{0, 0}));
}

TEST(GenerateScenario, TwoByTwoHalf) {
  auto m = generate_scenario(2, 2, 1.0, 0.5, 1);
  expect_valid(m, 2, Connectivity::four);
  // Of the three placements that keep (0,0) free, only the diagonal pair
  // {(0,1),(1,0)} disconnects; the free pair must be adjacent.
  auto cells = m.free_cells();
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(std::abs(cells[0].row - cells[1].row) + std::abs(cells[0].col - cells[1].col), 1);
}

TEST(GenerateScenario, RejectsBadDensity) {
  for (double d : {-0.1, 0.51, std::nan("")}) {
    try {
      generate_scenario(5, 5, 1.0, d, 1);
      FAIL() << d;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::invalid_density);
    }
  }
}

TEST(GenerateScenario, ConnectivityFailureWhenRetriesExhausted) {
  GenerateOptions o;
  o.max_retries = 3;
  try {
    generate_scenario(10, 10, 1.0, 0.5, 1, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::connectivity_failure);
  }
}

TEST(GenerateScenario, PropertiesAcrossSeeds) {
  for (auto placement : {Placement::rejection, Placement::connected}) {
    for (auto conn : {Connectivity::four, Connectivity::eight}) {
      for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const double density = 0.3 * static_cast<double>(seed % 5) / 4;
        auto m = generate_scenario(7, 9, 0.5, density, seed, with(placement, conn));
        expect_valid(m, static_cast<int>(std::lround(density * 63)), conn);
        EXPECT_EQ(m, generate_scenario(7, 9, 0.5, density, seed, with(placement, conn)));
      }
    }
  }
}

TEST(GenerateScenario, ConnectedPlacementReachesHalfDensity) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto m = generate_scenario(10, 10, 1.0, 0.5, seed, with(Placement::connected));
    expect_valid(m, 50, Connectivity::four);
  }
}

TEST(CutCells, MatchesRemovalOracle) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto conn = seed % 2 ? Connectivity::eight : Connectivity::four;
    auto m = generate_scenario(6, 6, 1.0, 0.35, seed, with(Placement::connected, conn));
    auto cut = detail::cut_cells(m, conn);
    for (int i = 0; i < m.cell_count(); ++i) {
      if (m.is_obstacle(m.cell(i))) {
        EXPECT_FALSE(cut[static_cast<std::size_t>(i)]);
        continue;
      }
      std::vector<std::uint8_t> occ(m.occupancy().begin(), m.occupancy().end());
      occ[static_cast<std::size_t>(i)] = 1;
      int from = -1;
      for (int j = 0; j < m.cell_count() && from < 0; ++j)
        if (!occ[static_cast<std::size_t>(j)]) from = j;
      const bool disconnects = from >= 0 && flood_count(occ, 6, 6, from, conn == Connectivity::eight) != m.free_count() - 1;
      EXPECT_EQ(static_cast<bool>(cut[static_cast<std::size_t>(i)]), disconnects) << "seed " << seed << " cell " << i;
    }
  }
}

TEST(DatasetBuild, SplitSizes1384) {
  DatasetSpec spec;
  spec.count = 1384;
  spec.ratios = {1024.0 / 1384, 200.0 / 1384, 160.0 / 1384};
  spec.seed = 5;
  auto s = split_sizes(spec.count, spec.ratios);
  EXPECT_EQ(s, (std::array<int, 3>{1024, 200, 160}));
}

TEST(DatasetBuild, FullScaleDatasetBuildsWithExpectedSplits) {
  DatasetSpec spec;
  spec.count = 1384;
  spec.ratios = {1024.0 / 1384, 200.0 / 1384, 160.0 / 1384};
  spec.seed = 11;
  auto set = dataset_build(spec);
  EXPECT_EQ(set.indices(Split::train).size(), 1024u);
  EXPECT_EQ(set.indices(Split::validation).size(), 200u);
  EXPECT_EQ(set.indices(Split::test).size(), 160u);
  double max_density = 0;
  for (const auto& m : set.scenarios) max_density = std::max(max_density, m.density());
  EXPECT_GT(max_density, 0.45);
}

TEST(DatasetBuild, ZeroDensityOnePerSplit) {
  DatasetSpec spec;
  spec.count = 3;
  spec.density_hi = 0.0;
  spec.ratios = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  auto set = dataset_build(spec);
  for (const auto& m : set.scenarios) EXPECT_EQ(m.obstacle_count(), 0);
  for (auto sp : {Split::train, Split::validation, Split::test}) EXPECT_EQ(set.indices(sp).size(), 1u);
}

TEST(DatasetBuild, DeterministicAndIndependentOfWorkers) {
  DatasetSpec spec;
  spec.count = 30;
  spec.ratios = {0.6, 0.2, 0.2};
  spec.seed = 9;
  auto a = dataset_build(spec);
  EXPECT_EQ(a, dataset_build(spec));
  EXPECT_NE(a, [&] {
    auto s = spec;
    s.seed = 10;
    return dataset_build(s);
  }());
}

TEST(DatasetBuild, RejectsBadRatiosAndCount) {
  DatasetSpec spec;
  spec.count = 10;
  spec.ratios = {0.5, 0.2, 0.2};
  EXPECT_THROW(dataset_build(spec), Error);
  spec.ratios = {1, 0, 0};
  spec.count = 2;
  EXPECT_THROW(dataset_build(spec), Error);
}

TEST(DatasetBuild, ErrorsCarryScenarioIndex) {
  DatasetSpec spec;
  spec.count = 5;
  spec.density_lo = spec.density_hi = 0.5;
  spec.generate.placement = Placement::rejection;
  spec.generate.max_retries = 2;
  try {
    dataset_build(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::connectivity_failure);
    EXPECT_NE(std::string(e.what()).find("scenario 0"), std::string::npos);
  }
}

TEST(ScenarioText, RoundTripAndHeader) {
  auto m = cppnet::testing::map_from({"..#", "#..", "..."}, 1.5);
  auto text = to_text(m);
  EXPECT_EQ(text, "cpp-scenario v1 3 3 1.5 0 0\n..#\n#..\n...\n");
  EXPECT_EQ(parse_scenario(text), m);
}

TEST(ScenarioText, RejectsMalformed) {
  auto code = [](std::string_view t) {
    try {
      parse_scenario(t);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::invalid_argument;
  };
  EXPECT_EQ(code("cpp-scenario v2 1 2 1 0 0\n..\n"), Errc::format_version_mismatch);
  EXPECT_EQ(code("cpp-scenario v1 2 2 1 0 0\n..\n"), Errc::parse_error);
  EXPECT_EQ(code("cpp-scenario v1 1 2 1 0 0\n.x\n"), Errc::parse_error);
  EXPECT_EQ(code("junk\n"), Errc::parse_error);
}

TEST(ScenarioSetFiles, RoundTripTruncationAndEmpty) {
  auto dir = fs::temp_directory_path() / "cppnet_scenario_set_test";
  fs::remove_all(dir);
  DatasetSpec spec;
  spec.count = 12;
  spec.rows = 6;
  spec.cols = 5;
  spec.ratios = {0.5, 0.25, 0.25};
  spec.seed = 3;
  auto set = dataset_build(spec);
  save_scenarios(set, dir);
  EXPECT_EQ(load_scenarios(dir), set);
  EXPECT_EQ(load_scenarios(dir / "manifest.txt"), set);
  EXPECT_EQ(read_file(dir / scenario_file_name(0)), to_text(set.scenarios[0]));

  auto text = read_file(dir / "manifest.txt");
  write_file_atomic(dir / "manifest.txt", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_scenarios(dir), Error);
  auto scen = read_file(dir / scenario_file_name(0));
  write_file_atomic(dir / "manifest.txt", text);
  write_file_atomic(dir / scenario_file_name(0), scen.substr(0, scen.size() - 4));
  EXPECT_THROW(load_scenarios(dir), Error);

  ScenarioSet empty;
  empty.seed = 4;
  save_scenarios(empty, dir / "empty");
  auto back = load_scenarios(dir / "empty");
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.seed, 4u);
  fs::remove_all(dir);
}
