#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cppnet/checkpoint.hpp"
#include "cppnet/edge_probe.hpp"
#include "cppnet/gcn_model.hpp"
#include "cppnet/scenario.hpp"
#include "gradient_check.hpp"
#include "test_support.hpp"

using namespace cppnet;
using cppnet::testing::map_from;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 6;
  c.conv_layers = 3;
  c.mlp_layers = 2;
  c.n_max = 20;
  return c;
}

struct Labeled {
  ScenarioGraph graph;
  LabelGraph labels;
};

Labeled labeled(const GridMap& map, int n_max) {
  auto tour = label_tour(map);
  return {encode(map, n_max), tour_to_labels(tour, n_max)};
}

}  // namespace

std::span<const ScenarioGraph* const> one(const ScenarioGraph* const& g) { return {&g, 1}; }

TEST(GcnGradient, MatchesCentralDifferencesTrainMode) {
  auto map = map_from({"...", ".#.", "..."});
  auto ex = labeled(map, 8);
  auto params = cppnet::testing::random_params(small_config(), 3);
  const ScenarioGraph* gs[] = {&ex.graph};
  const LabelGraph* ls[] = {&ex.labels};
  auto r = cppnet::testing::check_gradients(params, gs, ls, Mode::train);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << " analytic " << r.worst_analytic << " numeric "
                                   << r.worst_numeric;
}

TEST(GcnGradient, MatchesCentralDifferencesEvalModeWithPadding) {
  auto map = map_from({"..#", "...", "#.."});
  auto ex = labeled(map, 10);
  auto params = cppnet::testing::random_params(small_config(), 11);
  const ScenarioGraph* gs[] = {&ex.graph};
  const LabelGraph* ls[] = {&ex.labels};
  auto r = cppnet::testing::check_gradients(params, gs, ls, Mode::eval);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
}

TEST(GcnGradient, BatchOfTwoGraphsTrainMode) {
  auto a = labeled(map_from({"...", ".#.", "..."}), 8);
  auto b = labeled(map_from({"....", "#..."}), 9);
  auto params = cppnet::testing::random_params(small_config(), 5);
  const ScenarioGraph* gs[] = {&a.graph, &b.graph};
  const LabelGraph* ls[] = {&a.labels, &b.labels};
  auto r = cppnet::testing::check_gradients(params, gs, ls, Mode::train);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
}

TEST(GcnInit, DeterministicAndBounded) {
  ModelConfig c;  // h = 50, L = 3, mlp = 2
  auto a = init_params(c, 42);
  auto b = init_params(c, 42);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(c, 43));
  EXPECT_EQ(a.node_in_w.size(), 100);
  EXPECT_EQ(a.edge_in_w.rows(), 25);
  EXPECT_EQ(a.ind_in_w.rows(), 25);
  EXPECT_EQ(a.layers.size(), 3u);
  EXPECT_EQ(a.mlp.size(), 2u);
  EXPECT_EQ(a.mlp.back().weight.rows(), 1);
  EXPECT_LE(a.node_in_w.cwiseAbs().maxCoeff(), 1 / std::sqrt(2.0));
  EXPECT_LE(a.layers[0].w3.cwiseAbs().maxCoeff(), 1 / std::sqrt(50.0));
  EXPECT_TRUE(a.layers[1].node_bn.gamma.isOnes());
  EXPECT_TRUE(a.layers[1].edge_bn.beta.isZero());
}

TEST(GcnConfig, RejectsOddHidden) {
  ModelConfig c;
  c.hidden = 7;
  EXPECT_THROW(c.validate(), Error);
  c.hidden = 8;
  c.conv_layers = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(GcnEmbed, LinearInCoordinates) {
  auto map = map_from({"...", "..."});
  auto g = encode(map, 8);
  auto p = init_params(small_config(), 1);
  p.node_in_b.setZero();
  auto base = embed_input(one(&g), p);
  // Slot 0 sits at (0.5, 0.5); shift it to the origin to test the zero case.
  ScenarioGraph origin = g;
  origin.coords.row(0).setZero();
  EXPECT_TRUE(embed_input(one(&origin), p)[0].node.row(0).isZero());
  p.node_in_w *= 2;
  auto doubled = embed_input(one(&g), p);
  EXPECT_TRUE(doubled[0].node.isApprox(2 * base[0].node, 0));
  // Padding pair (7, 6): e = 0, delta = 0, zero biases -> zero embedding.
  p.edge_in_b.setZero();
  auto e = embed_input(one(&g), p);
  EXPECT_TRUE(e[0].edge.row(7 * 8 + 6).isZero());
}

TEST(GcnConv, ZeroFeaturesStayZero) {
  auto map = map_from({"...", "..."});
  auto g = encode(map, 6);
  auto p = init_params(small_config(), 2);
  auto topo = std::vector{GraphTopology::from(g)};
  BatchFeatures<double> in(1);
  in[0].node.setZero(6, 6);
  in[0].edge.setZero(36, 6);
  auto out = conv_forward<double>(in, topo, p.layers[0], Mode::eval);
  EXPECT_TRUE(out[0].node.isZero());
  EXPECT_TRUE(out[0].edge.isZero());
}

TEST(GcnHead, ZeroOutputLayerGivesHalf) {
  auto map = map_from({"..", ".."});
  auto g = encode(map, 5);
  auto p = init_params(small_config(), 4);
  p.mlp.back().weight.setZero();
  p.mlp.back().bias.setZero();
  auto heat = infer_heat(p, g);
  EXPECT_TRUE((heat.array() == 0.5).all());
}

TEST(GcnHead, ProbabilitiesStrictlyInsideUnitInterval) {
  auto map = map_from({"....", ".#..", "...."});
  auto g = encode(map, 12);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto heat = infer_heat(cppnet::testing::random_params(small_config(), seed), g);
    EXPECT_GT(heat.minCoeff(), 0.0);
    EXPECT_LT(heat.maxCoeff(), 1.0);
  }
}

TEST(GcnForward, EvalModeBitIdenticalTwice) {
  auto g = encode(map_from({"...", ".#.", "..."}), 8);
  auto p = cppnet::testing::random_params(small_config(), 9);
  EXPECT_EQ(infer_heat(p, g), infer_heat(p, g));
}

TEST(GcnForward, PermutationEquivariant) {
  auto g = encode(map_from({"....", ".#..", "..#."}), 10);
  auto p = cppnet::testing::random_params(small_config(), 6);
  const int n = g.n_max;
  std::vector<int> rho(static_cast<std::size_t>(n));
  std::iota(rho.begin(), rho.end(), 0);
  Rng rng(17);
  shuffle(rho, rng);
  // Relabel: new slot rho[i] holds old slot i.
  ScenarioGraph q = g;
  for (int i = 0; i < n; ++i) {
    q.coords.row(rho[i]) = g.coords.row(i);
    for (int j = 0; j < n; ++j) {
      q.dist(rho[i], rho[j]) = g.dist(i, j);
      q.indicator(rho[i], rho[j]) = g.indicator(i, j);
    }
  }
  // Every slot counts as real so batch statistics would also be invariant.
  q.n_free = n;
  g.n_free = n;
  auto a = infer_heat(p, g);
  auto b = infer_heat(p, q);
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(a(i, j) - b(rho[i], rho[j])));
  EXPECT_LT(worst, 1e-12);
}

TEST(GcnForward, PaddingIsInert) {
  auto map = map_from({"...#", "....", "#..."});
  auto p = cppnet::testing::random_params(small_config(), 8);
  auto tight = infer_heat(p, encode(map, 10));
  auto padded = infer_heat(p, encode(map, 20));
  EXPECT_LT((tight - padded.topLeftCorner(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GcnLoss, PerfectPredictionNearZeroAndBalancedWeights) {
  auto ex = labeled(map_from({"..", ".."}), 4);
  Matrix<double> P = ex.labels.cast<double>();
  const Matrix<double> ps[] = {P};
  const LabelGraph* ls[] = {&ex.labels};
  const int nr[] = {4};
  auto r = weighted_bce<double>(ps, ls, nr);
  EXPECT_LT(r.loss, 1e-6);
  // 2x2 open path: 6 of 12 ordered pairs are tour edges.
  EXPECT_EQ(r.positives, 6u);
  EXPECT_DOUBLE_EQ(r.pos_weight, 1.0);
  EXPECT_DOUBLE_EQ(r.neg_weight, 1.0);
}

TEST(GcnLoss, DegenerateBatchThrows) {
  auto g = encode(map_from({".."}), 2);
  LabelGraph y = LabelGraph::Ones(2, 2);
  Matrix<double> P = Matrix<double>::Constant(2, 2, 0.5);
  const Matrix<double> ps[] = {P};
  const LabelGraph* ls[] = {&y};
  const int nr[] = {2};
  try {
    weighted_bce<double>(ps, ls, nr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_batch);
  }
}

TEST(EdgeProbe, MatchesDenseForward) {
  auto map = map_from({".....", ".##..", ".....", "..#.."});
  auto g = encode(map, 20);
  auto p = cppnet::testing::random_params(small_config(), 21);
  auto dense = infer_heat(p, g);
  EdgeProbe<double> probe(p, g);
  for (int i = 0; i < g.n_free; ++i)
    for (int j = 0; j < g.n_free; ++j) EXPECT_NEAR(probe(i, j), dense(i, j), 1e-12) << i << "," << j;
}

TEST(EdgeProbe, FloatModelTracksDouble) {
  auto map = map_from({"....", "....", "...."});
  auto g = encode(map, 12);
  auto p = cppnet::testing::random_params(small_config(), 2);
  auto pf = cast_params<float>(p);
  EdgeProbe<double> pd(p, g);
  EdgeProbe<float> ps(pf, g);
  EXPECT_NEAR(ps(0, 5), pd(0, 5), 1e-4);
  EXPECT_NEAR(ps(3, 4), pd(3, 4), 1e-4);
}

TEST(Checkpoint, ExactRoundTrip) {
  auto p = cppnet::testing::random_params(small_config(), 13);
  auto bytes = checkpoint_bytes(p);
  auto q = parse_checkpoint(bytes);
  EXPECT_TRUE(p == q);
  EXPECT_EQ(checkpoint_bytes(q), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  auto bytes = checkpoint_bytes(init_params(small_config(), 1));
  auto expect_code = [](const std::string& b, Errc code) {
    try {
      parse_checkpoint(b);
      FAIL() << "accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  expect_code(bytes.substr(0, bytes.size() - 3), Errc::parse_error);
  expect_code(bytes + "x", Errc::parse_error);
  expect_code("NOTACKPT" + bytes.substr(8), Errc::parse_error);
  auto v2 = bytes;
  v2[8] = 2;
  expect_code(v2, Errc::format_version_mismatch);
}
