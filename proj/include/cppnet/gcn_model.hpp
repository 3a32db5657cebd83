#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cppnet/errors.hpp"
#include "cppnet/graph_encode.hpp"
#include "cppnet/io.hpp"
#include "cppnet/random.hpp"
#include "cppnet/tsp_oracle.hpp"

namespace cppnet {

struct ModelConfig {
  int hidden = 50;
  int conv_layers = 3;
  int mlp_layers = 2;
  int n_max = 100;
  bool normalize_coords = false;

  void validate() const {
    if (hidden < 2 || hidden % 2 != 0) throw Error(Errc::invalid_argument, "hidden width must be even and >= 2");
    if (conv_layers < 1) throw Error(Errc::invalid_argument, "need at least one graph convolution layer");
    if (mlp_layers < 1) throw Error(Errc::invalid_argument, "need at least one MLP layer");
    if (n_max < 1) throw Error(Errc::invalid_argument, "graph capacity must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { train, eval };

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowArray = Eigen::Array<S, 1, Eigen::Dynamic>;

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;  // weight of the current batch in running stats
inline constexpr double kGateEpsilon = 1e-20;
inline constexpr double kProbabilityClamp = 1e-7;

template <class S>
struct BatchNorm {
  Vector<S> gamma, beta, running_mean, running_var;
};

template <class S>
struct ConvLayer {
  Matrix<S> w1, w2, w3, w4, w5;  // h x h each
  BatchNorm<S> node_bn, edge_bn;
};

template <class S>
struct DenseLayer {
  Matrix<S> weight;  // out x in
  Vector<S> bias;
};

/// All learnable tensors plus batch-norm running statistics.
///
/// Input layer: node embedding `node_in_w * x + node_in_b` (h x 2), edge
/// embedding `[edge_in_w * e + edge_in_b ; ind_in_w * delta]` (two h/2 halves
/// stacked). Each conv layer carries five h x h maps: w1 self, w2 neighbor
/// message, w3 edge, w4 source node, w5 target node. The MLP maps an edge
/// feature to one logit.
template <class S>
struct ModelParams {
  ModelConfig config;
  Matrix<S> node_in_w;
  Vector<S> node_in_b;
  Matrix<S> edge_in_w;
  Vector<S> edge_in_b;
  Matrix<S> ind_in_w;
  std::vector<ConvLayer<S>> layers;
  std::vector<DenseLayer<S>> mlp;
};

enum class TensorKind { weight, running_stat };

/// Calls f(name, tensor, kind) for every tensor in checkpoint order.
template <class P, class F>
void visit_tensors(P& p, F&& f) {
  f(std::string("input.node.weight"), p.node_in_w, TensorKind::weight);
  f(std::string("input.node.bias"), p.node_in_b, TensorKind::weight);
  f(std::string("input.edge.weight"), p.edge_in_w, TensorKind::weight);
  f(std::string("input.edge.bias"), p.edge_in_b, TensorKind::weight);
  f(std::string("input.indicator.weight"), p.ind_in_w, TensorKind::weight);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "conv" + std::to_string(l) + ".";
    f(pre + "w1", L.w1, TensorKind::weight);
    f(pre + "w2", L.w2, TensorKind::weight);
    f(pre + "w3", L.w3, TensorKind::weight);
    f(pre + "w4", L.w4, TensorKind::weight);
    f(pre + "w5", L.w5, TensorKind::weight);
    for (auto* bn : {&L.node_bn, &L.edge_bn}) {
      const std::string b = pre + (bn == &L.node_bn ? "node_bn." : "edge_bn.");
      f(b + "gamma", bn->gamma, TensorKind::weight);
      f(b + "beta", bn->beta, TensorKind::weight);
      f(b + "running_mean", bn->running_mean, TensorKind::running_stat);
      f(b + "running_var", bn->running_var, TensorKind::running_stat);
    }
  }
  for (std::size_t k = 0; k < p.mlp.size(); ++k) {
    const std::string pre = "mlp" + std::to_string(k) + ".";
    f(pre + "weight", p.mlp[k].weight, TensorKind::weight);
    f(pre + "bias", p.mlp[k].bias, TensorKind::weight);
  }
}

/// Flat view of one tensor, for optimizers and checks that treat all
/// parameters uniformly.
template <class S>
struct TensorView {
  std::string name;
  S* data;
  Eigen::Index rows;
  Eigen::Index cols;
  TensorKind kind;

  Eigen::Index size() const { return rows * cols; }
  std::span<S> span() const { return {data, static_cast<std::size_t>(size())}; }
};

template <class S>
std::vector<TensorView<S>> tensor_views(ModelParams<S>& p) {
  std::vector<TensorView<S>> out;
  visit_tensors(p, [&](std::string name, auto& t, TensorKind kind) {
    out.push_back({std::move(name), t.data(), t.rows(), t.cols(), kind});
  });
  return out;
}

/// Shape skeleton with every tensor zero (running variance included).
template <class S>
ModelParams<S> zero_params(const ModelConfig& config) {
  config.validate();
  const int h = config.hidden;
  const int half = h / 2;
  ModelParams<S> p;
  p.config = config;
  p.node_in_w.setZero(h, 2);
  p.node_in_b.setZero(h);
  p.edge_in_w.setZero(half, 1);
  p.edge_in_b.setZero(half);
  p.ind_in_w.setZero(half, 1);
  p.layers.resize(static_cast<std::size_t>(config.conv_layers));
  for (auto& L : p.layers) {
    for (auto* w : {&L.w1, &L.w2, &L.w3, &L.w4, &L.w5}) w->setZero(h, h);
    for (auto* bn : {&L.node_bn, &L.edge_bn}) {
      bn->gamma.setZero(h);
      bn->beta.setZero(h);
      bn->running_mean.setZero(h);
      bn->running_var.setZero(h);
    }
  }
  p.mlp.resize(static_cast<std::size_t>(config.mlp_layers));
  for (int k = 0; k < config.mlp_layers; ++k) {
    const int out = k + 1 == config.mlp_layers ? 1 : h;
    p.mlp[static_cast<std::size_t>(k)].weight.setZero(out, h);
    p.mlp[static_cast<std::size_t>(k)].bias.setZero(out);
  }
  return p;
}

template <class S>
ModelParams<S> zeros_like(const ModelParams<S>& p) {
  return zero_params<S>(p.config);
}

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// for weights and the biases that follow them; batch-norm scale 1, shift 0,
/// running mean 0, running variance 1.
template <class S = double>
ModelParams<S> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = zero_params<S>(config);
  Rng rng(seed);
  auto fill = [&](auto& t, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(uniform(rng, -bound, bound));
  };
  const double h = config.hidden;
  fill(p.node_in_w, 2);
  fill(p.node_in_b, 2);
  fill(p.edge_in_w, 1);
  fill(p.edge_in_b, 1);
  fill(p.ind_in_w, 1);
  for (auto& L : p.layers) {
    for (auto* w : {&L.w1, &L.w2, &L.w3, &L.w4, &L.w5}) fill(*w, h);
    for (auto* bn : {&L.node_bn, &L.edge_bn}) {
      bn->gamma.setOnes();
      bn->running_var.setOnes();
    }
  }
  for (auto& d : p.mlp) {
    fill(d.weight, h);
    fill(d.bias, h);
  }
  return p;
}

template <class T, class S>
ModelParams<T> cast_params(const ModelParams<S>& src) {
  auto out = zero_params<T>(src.config);
  auto from = tensor_views(const_cast<ModelParams<S>&>(src));
  auto to = tensor_views(out);
  for (std::size_t t = 0; t < to.size(); ++t)
    for (Eigen::Index i = 0; i < to[t].size(); ++i) to[t].data[i] = static_cast<T>(from[t].data[i]);
  return out;
}

template <class S>
bool operator==(const ModelParams<S>& a, const ModelParams<S>& b) {
  if (!(a.config == b.config)) return false;
  auto va = tensor_views(const_cast<ModelParams<S>&>(a));
  auto vb = tensor_views(const_cast<ModelParams<S>&>(b));
  for (std::size_t t = 0; t < va.size(); ++t) {
    if (va[t].rows != vb[t].rows || va[t].cols != vb[t].cols) return false;
    if (std::memcmp(va[t].data, vb[t].data, sizeof(S) * static_cast<std::size_t>(va[t].size())) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph topology and per-graph feature tensors

/// Neighborhood j ~ i (indicator == 1) in CSR form. `n` is the slot count
/// (capacity) and `n_real` the number of real nodes, which occupy the first
/// slots.
struct GraphTopology {
  int n = 0;
  int n_real = 0;
  std::vector<int> offset;
  std::vector<int> neighbor;

  static GraphTopology from(const ScenarioGraph& g) {
    GraphTopology t;
    t.n = g.n_max;
    t.n_real = g.n_free;
    t.offset.assign(static_cast<std::size_t>(t.n) + 1, 0);
    for (int i = 0; i < t.n; ++i) {
      for (int j = 0; j < t.n; ++j)
        if (g.indicator(i, j) == 1) t.neighbor.push_back(j);
      t.offset[static_cast<std::size_t>(i) + 1] = static_cast<int>(t.neighbor.size());
    }
    return t;
  }
};

/// Node features are n x h; edge features are n^2 x h with row i*n + j
/// holding the directed edge i -> j.
template <class S>
struct Features {
  Matrix<S> node;
  Matrix<S> edge;
};

template <class S>
using BatchFeatures = std::vector<Features<S>>;

template <class S>
RowArray<S> row_array(const Vector<S>& v) {
  return v.transpose().array();
}

template <class S>
BatchFeatures<S> embed_input(std::span<const ScenarioGraph* const> graphs, const ModelParams<S>& p) {
  const int h = p.config.hidden;
  const int half = h / 2;
  if (p.node_in_w.rows() != h || p.edge_in_w.rows() != half || p.ind_in_w.rows() != half) {
    throw Error(Errc::shape_mismatch, "input layer shapes do not match the model config");
  }
  BatchFeatures<S> out(graphs.size());
  const RowArray<S> w_edge = p.edge_in_w.col(0).transpose().array();
  const RowArray<S> b_edge = row_array<S>(p.edge_in_b);
  const RowArray<S> w_ind = p.ind_in_w.col(0).transpose().array();
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const ScenarioGraph& graph = *graphs[g];
    if (graph.n_max > p.config.n_max) throw Error(Errc::shape_mismatch, "graph capacity exceeds model capacity");
    const int n = graph.n_max;
    auto& f = out[g];
    f.node.noalias() = graph.coords.cast<S>() * p.node_in_w.transpose();
    f.node.rowwise() += p.node_in_b.transpose();
    f.edge.resize(static_cast<Eigen::Index>(n) * n, h);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        auto row = f.edge.row(static_cast<Eigen::Index>(i) * n + j).array();
        row.head(half) = static_cast<S>(graph.dist(i, j)) * w_edge + b_edge;
        row.tail(half) = static_cast<S>(graph.indicator(i, j)) * w_ind;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over the real rows of a batch

namespace detail {

/// Calls f(first_row, row_count) for every contiguous block of real rows.
template <class F>
void for_each_real_block(const GraphTopology& t, bool edges, F&& f) {
  if (!edges) {
    if (t.n_real > 0) f(Eigen::Index{0}, Eigen::Index{t.n_real});
    return;
  }
  for (int i = 0; i < t.n_real; ++i) f(static_cast<Eigen::Index>(i) * t.n, Eigen::Index{t.n_real});
}

inline Eigen::Index real_count(std::span<const GraphTopology> topo, bool edges) {
  Eigen::Index m = 0;
  for (const auto& t : topo) m += edges ? Eigen::Index{t.n_real} * t.n_real : Eigen::Index{t.n_real};
  return m;
}

template <class S>
struct Moments {
  Vector<S> mean;
  Vector<S> var;  // biased
};

template <class S>
Moments<S> batch_moments(const std::vector<Matrix<S>>& pre, std::span<const GraphTopology> topo, bool edges, int h) {
  const auto m = real_count(topo, edges);
  Moments<S> out;
  out.mean.setZero(h);
  out.var.setZero(h);
  if (m == 0) return out;
  for (std::size_t g = 0; g < pre.size(); ++g) {
    for_each_real_block(topo[g], edges, [&](Eigen::Index r, Eigen::Index c) {
      out.mean += pre[g].middleRows(r, c).colwise().sum().transpose();
    });
  }
  out.mean /= static_cast<S>(m);
  const RowArray<S> mu = row_array<S>(out.mean);
  for (std::size_t g = 0; g < pre.size(); ++g) {
    for_each_real_block(topo[g], edges, [&](Eigen::Index r, Eigen::Index c) {
      out.var += (pre[g].middleRows(r, c).array().rowwise() - mu).square().colwise().sum().matrix().transpose();
    });
  }
  out.var /= static_cast<S>(m);
  return out;
}

template <class S>
Vector<S> inverse_std(const Vector<S>& var) {
  return (var.array() + static_cast<S>(kBatchNormEpsilon)).rsqrt().matrix();
}

template <class S>
void sigmoid_inplace(Eigen::Ref<Matrix<S>> m) {
  m = (static_cast<S>(1) + (-m.array()).exp()).inverse().matrix();
}

}  // namespace detail

template <class S>
struct LayerCache {
  std::vector<Matrix<S>> node_hat;  // normalized pre-activations
  std::vector<Matrix<S>> edge_hat;
  std::vector<Matrix<S>> gate;   // sigmoid(e_ij) per CSR entry
  std::vector<Matrix<S>> denom;  // sum of gates + epsilon, per node
  std::vector<Matrix<S>> msg;    // x_j W2^T per node
  Vector<S> node_inv_std, edge_inv_std;
  Vector<S> node_batch_mean, node_batch_var, edge_batch_mean, edge_batch_var;
};

/// One residual gated graph-convolution layer over a batch. In train mode the
/// batch-norm statistics are taken jointly over the real nodes (and real
/// node pairs) of every graph in the batch; padding rows are normalized with
/// the same statistics but never contribute to them. Eval mode uses the
/// running statistics.
template <class S>
BatchFeatures<S> conv_forward(const BatchFeatures<S>& in, std::span<const GraphTopology> topo, const ConvLayer<S>& p,
                              Mode mode, LayerCache<S>* cache = nullptr) {
  const int h = static_cast<int>(p.w1.rows());
  const std::size_t B = in.size();
  std::vector<Matrix<S>> pre_node(B), pre_edge(B), gate(B), denom(B), msg(B);
  const S gate_eps = static_cast<S>(kGateEpsilon);

  for (std::size_t g = 0; g < B; ++g) {
    const auto& X = in[g].node;
    const auto& E = in[g].edge;
    const auto& t = topo[g];
    const int n = t.n;
    if (X.rows() != n || X.cols() != h || E.rows() != static_cast<Eigen::Index>(n) * n || E.cols() != h) {
      throw Error(Errc::shape_mismatch, "feature shapes do not match the layer");
    }
    msg[g].noalias() = X * p.w2.transpose();
    pre_node[g].noalias() = X * p.w1.transpose();
    gate[g].resize(static_cast<Eigen::Index>(t.neighbor.size()), h);
    denom[g].resize(n, h);
    for (int i = 0; i < n; ++i) {
      RowArray<S> acc = RowArray<S>::Zero(h);
      RowArray<S> d = RowArray<S>::Constant(h, gate_eps);
      for (int k = t.offset[static_cast<std::size_t>(i)]; k < t.offset[static_cast<std::size_t>(i) + 1]; ++k) {
        const int j = t.neighbor[static_cast<std::size_t>(k)];
        auto gk = gate[g].row(k).array();
        gk = (static_cast<S>(1) + (-E.row(static_cast<Eigen::Index>(i) * n + j).array()).exp()).inverse();
        d += gk;
        acc += gk * msg[g].row(j).array();
      }
      denom[g].row(i) = d.matrix();
      pre_node[g].row(i).array() += acc / d;
    }
    pre_edge[g].noalias() = E * p.w3.transpose();
    const Matrix<S> src = X * p.w4.transpose();
    const Matrix<S> dst = X * p.w5.transpose();
    for (int i = 0; i < n; ++i) {
      auto block = pre_edge[g].middleRows(static_cast<Eigen::Index>(i) * n, n);
      block.rowwise() += src.row(i);
      block += dst;
    }
  }

  Vector<S> node_mean, node_inv, edge_mean, edge_inv;
  detail::Moments<S> nm, em;
  if (mode == Mode::train) {
    nm = detail::batch_moments(pre_node, topo, false, h);
    em = detail::batch_moments(pre_edge, topo, true, h);
    node_mean = nm.mean;
    edge_mean = em.mean;
    node_inv = detail::inverse_std(nm.var);
    edge_inv = detail::inverse_std(em.var);
  } else {
    node_mean = p.node_bn.running_mean;
    edge_mean = p.edge_bn.running_mean;
    node_inv = detail::inverse_std(p.node_bn.running_var);
    edge_inv = detail::inverse_std(p.edge_bn.running_var);
  }

  const RowArray<S> nmu = row_array<S>(node_mean), ninv = row_array<S>(node_inv);
  const RowArray<S> emu = row_array<S>(edge_mean), einv = row_array<S>(edge_inv);
  const RowArray<S> ng = row_array<S>(p.node_bn.gamma), nb = row_array<S>(p.node_bn.beta);
  const RowArray<S> eg = row_array<S>(p.edge_bn.gamma), eb = row_array<S>(p.edge_bn.beta);

  BatchFeatures<S> out(B);
  for (std::size_t g = 0; g < B; ++g) {
    auto& un = pre_node[g];
    un.array().rowwise() -= nmu;
    un.array().rowwise() *= ninv;
    out[g].node = in[g].node + ((un.array().rowwise() * ng).rowwise() + nb).max(static_cast<S>(0)).matrix();
    auto& ue = pre_edge[g];
    ue.array().rowwise() -= emu;
    ue.array().rowwise() *= einv;
    out[g].edge = in[g].edge + ((ue.array().rowwise() * eg).rowwise() + eb).max(static_cast<S>(0)).matrix();
  }

  if (cache) {
    cache->node_hat = std::move(pre_node);
    cache->edge_hat = std::move(pre_edge);
    cache->gate = std::move(gate);
    cache->denom = std::move(denom);
    cache->msg = std::move(msg);
    cache->node_inv_std = node_inv;
    cache->edge_inv_std = edge_inv;
    if (mode == Mode::train) {
      cache->node_batch_mean = nm.mean;
      cache->node_batch_var = nm.var;
      cache->edge_batch_mean = em.mean;
      cache->edge_batch_var = em.var;
    }
  }
  return out;
}

namespace detail {

/// Batch-norm + ReLU backward for one branch. `grad_out` holds dL/d(output
/// of ReLU(BN(.))) per graph; returns dL/d(pre-activation) per graph and
/// accumulates gamma/beta gradients. In train mode the statistic terms are
/// summed over every row that was normalized with the batch statistics and
/// applied to the real rows, which are the only rows that produced them.
template <class S>
std::vector<Matrix<S>> batchnorm_relu_backward(const std::vector<const Matrix<S>*>& grad_out,
                                               const std::vector<Matrix<S>>& hat, std::span<const GraphTopology> topo,
                                               bool edges, const BatchNorm<S>& bn, const Vector<S>& inv_std, Mode mode,
                                               BatchNorm<S>& grad_bn) {
  const auto h = bn.gamma.size();
  const RowArray<S> gamma = row_array<S>(bn.gamma), beta = row_array<S>(bn.beta);
  auto relu_grad = [&](std::size_t g) -> Matrix<S> {
    auto z = (hat[g].array().rowwise() * gamma).rowwise() + beta;
    return (z > static_cast<S>(0)).select(grad_out[g]->array(), static_cast<S>(0)).matrix();
  };
  RowArray<S> sum_dz = RowArray<S>::Zero(h), sum_dz_hat = RowArray<S>::Zero(h);
  std::vector<Matrix<S>> dpre(hat.size());
  for (std::size_t g = 0; g < hat.size(); ++g) {
    dpre[g] = relu_grad(g);
    sum_dz += dpre[g].array().colwise().sum();
    sum_dz_hat += (dpre[g].array() * hat[g].array()).colwise().sum();
  }
  grad_bn.gamma += sum_dz_hat.transpose().matrix();
  grad_bn.beta += sum_dz.transpose().matrix();
  const RowArray<S> scale = gamma * row_array<S>(inv_std);
  const auto m = real_count(topo, edges);
  const RowArray<S> mean_dz = m > 0 ? RowArray<S>(sum_dz / static_cast<S>(m)) : RowArray<S>::Zero(h);
  const RowArray<S> mean_dz_hat = m > 0 ? RowArray<S>(sum_dz_hat / static_cast<S>(m)) : RowArray<S>::Zero(h);
  for (std::size_t g = 0; g < hat.size(); ++g) {
    if (mode == Mode::train) {
      for_each_real_block(topo[g], edges, [&](Eigen::Index r, Eigen::Index c) {
        auto blk = dpre[g].middleRows(r, c).array();
        blk = (blk.rowwise() - mean_dz) - (hat[g].middleRows(r, c).array().rowwise() * mean_dz_hat);
      });
    }
    dpre[g].array().rowwise() *= scale;
  }
  return dpre;
}

}  // namespace detail

/// Reverse pass of conv_forward. `grad` holds dL/d(layer output) on entry
/// and dL/d(layer input) on exit; parameter gradients accumulate into `gp`.
template <class S>
void conv_backward(const BatchFeatures<S>& in, std::span<const GraphTopology> topo, const ConvLayer<S>& p, Mode mode,
                   const LayerCache<S>& cache, BatchFeatures<S>& grad, ConvLayer<S>& gp) {
  const std::size_t B = in.size();
  std::vector<const Matrix<S>*> dnode_out(B), dedge_out(B);
  for (std::size_t g = 0; g < B; ++g) {
    dnode_out[g] = &grad[g].node;
    dedge_out[g] = &grad[g].edge;
  }
  auto dU = detail::batchnorm_relu_backward(dnode_out, cache.node_hat, topo, false, p.node_bn, cache.node_inv_std,
                                            mode, gp.node_bn);
  auto dV = detail::batchnorm_relu_backward(dedge_out, cache.edge_hat, topo, true, p.edge_bn, cache.edge_inv_std,
                                            mode, gp.edge_bn);

  for (std::size_t g = 0; g < B; ++g) {
    const auto& X = in[g].node;
    const auto& E = in[g].edge;
    const auto& t = topo[g];
    const int n = t.n;
    const int h = static_cast<int>(X.cols());
    const auto& gate = cache.gate[g];
    const auto& denom = cache.denom[g];
    const auto& msg = cache.msg[g];

    Matrix<S> dX = grad[g].node;  // residual
    Matrix<S> dE = grad[g].edge;  // residual

    // Node branch: U = X W1^T + sum_j eta_ij * (X W2^T)_j
    gp.w1.noalias() += dU[g].transpose() * X;
    dX.noalias() += dU[g] * p.w1;
    Matrix<S> dmsg = Matrix<S>::Zero(n, h);
    for (int i = 0; i < n; ++i) {
      const int k0 = t.offset[static_cast<std::size_t>(i)];
      const int k1 = t.offset[static_cast<std::size_t>(i) + 1];
      if (k0 == k1) continue;
      const RowArray<S> du = dU[g].row(i).array();
      const RowArray<S> d = denom.row(i).array();
      // sum_k d(eta_k) * eta_k, with d(eta_k) = du * msg_j
      RowArray<S> s = RowArray<S>::Zero(h);
      for (int k = k0; k < k1; ++k) {
        const int j = t.neighbor[static_cast<std::size_t>(k)];
        const RowArray<S> eta = gate.row(k).array() / d;
        s += du * msg.row(j).array() * eta;
        dmsg.row(j).array() += eta * du;
      }
      for (int k = k0; k < k1; ++k) {
        const int j = t.neighbor[static_cast<std::size_t>(k)];
        const RowArray<S> gk = gate.row(k).array();
        const RowArray<S> dgate = (du * msg.row(j).array() - s) / d;
        dE.row(static_cast<Eigen::Index>(i) * n + j).array() += dgate * gk * (static_cast<S>(1) - gk);
      }
    }
    gp.w2.noalias() += dmsg.transpose() * X;
    dX.noalias() += dmsg * p.w2;

    // Edge branch: V_ij = W3 e_ij + W4 x_i + W5 x_j
    gp.w3.noalias() += dV[g].transpose() * E;
    dE.noalias() += dV[g] * p.w3;
    Matrix<S> row_sum(n, h), col_sum = Matrix<S>::Zero(n, h);
    for (int i = 0; i < n; ++i) {
      auto block = dV[g].middleRows(static_cast<Eigen::Index>(i) * n, n);
      row_sum.row(i) = block.colwise().sum();
      col_sum += block;
    }
    gp.w4.noalias() += row_sum.transpose() * X;
    dX.noalias() += row_sum * p.w4;
    gp.w5.noalias() += col_sum.transpose() * X;
    dX.noalias() += col_sum * p.w5;

    dV[g].resize(0, 0);
    grad[g].node = std::move(dX);
    grad[g].edge = std::move(dE);
  }
}

// ---------------------------------------------------------------------------
// MLP head

template <class S>
struct MlpCache {
  std::vector<std::vector<Matrix<S>>> hidden;  // [layer][graph], post-ReLU
};

/// p_ij = sigmoid(MLP(e_ij)), affine maps with ReLU between. Returns one
/// n x n probability matrix per graph.
template <class S>
std::vector<Matrix<S>> mlp_head(const BatchFeatures<S>& feats, const std::vector<DenseLayer<S>>& mlp,
                                MlpCache<S>* cache = nullptr) {
  std::vector<Matrix<S>> out(feats.size());
  if (cache) cache->hidden.assign(mlp.size() - 1, std::vector<Matrix<S>>(feats.size()));
  for (std::size_t g = 0; g < feats.size(); ++g) {
    const auto rows = feats[g].edge.rows();
    const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(rows))));
    Matrix<S> act;
    const Matrix<S>* cur = &feats[g].edge;
    for (std::size_t k = 0; k + 1 < mlp.size(); ++k) {
      Matrix<S> next = *cur * mlp[k].weight.transpose();
      next.rowwise() += mlp[k].bias.transpose();
      next = next.cwiseMax(static_cast<S>(0));
      if (cache) {
        cache->hidden[k][g] = std::move(next);
        cur = &cache->hidden[k][g];
      } else {
        act = std::move(next);
        cur = &act;
      }
    }
    const auto& last = mlp.back();
    Vector<S> logits = *cur * last.weight.row(0).transpose();
    logits.array() += last.bias(0);
    Matrix<S> prob = Eigen::Map<Matrix<S>>(logits.data(), n, n);
    detail::sigmoid_inplace<S>(prob);
    out[g] = std::move(prob);
  }
  return out;
}

template <class S>
Matrix<S> mlp_backward(const Matrix<S>& edge_in, const std::vector<DenseLayer<S>>& mlp, const MlpCache<S>& cache,
                       std::size_t g, const Matrix<S>& dlogit, std::vector<DenseLayer<S>>& gmlp) {
  const auto rows = edge_in.rows();
  Eigen::Map<const Vector<S>> dz(dlogit.data(), rows);
  const std::size_t K = mlp.size();
  const Matrix<S>& last_in = K > 1 ? cache.hidden[K - 2][g] : edge_in;
  gmlp[K - 1].weight.row(0) += (last_in.transpose() * dz).transpose();
  gmlp[K - 1].bias(0) += dz.sum();
  Matrix<S> dh = dz * mlp[K - 1].weight.row(0);
  for (std::size_t k = K - 1; k-- > 0;) {
    const Matrix<S>& out = cache.hidden[k][g];
    dh = (out.array() > static_cast<S>(0)).select(dh.array(), static_cast<S>(0)).matrix();
    const Matrix<S>& inp = k > 0 ? cache.hidden[k - 1][g] : edge_in;
    gmlp[k].weight.noalias() += dh.transpose() * inp;
    gmlp[k].bias += dh.colwise().sum().transpose();
    dh = dh * mlp[k].weight;
  }
  return dh;
}

// ---------------------------------------------------------------------------
// Full network

template <class S>
struct ForwardState {
  Mode mode = Mode::eval;
  std::vector<const ScenarioGraph*> graphs;
  std::vector<GraphTopology> topology;
  std::vector<BatchFeatures<S>> features;  // layer inputs 0..L (L = final)
  std::vector<LayerCache<S>> layers;
  MlpCache<S> mlp;
  std::vector<Matrix<S>> prob;  // per graph n x n heat
};

template <class S>
ForwardState<S> forward(const ModelParams<S>& p, std::span<const ScenarioGraph* const> graphs, Mode mode) {
  ForwardState<S> st;
  st.mode = mode;
  st.graphs.assign(graphs.begin(), graphs.end());
  for (const auto* g : graphs) st.topology.push_back(GraphTopology::from(*g));
  st.features.push_back(embed_input(graphs, p));
  st.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    st.features.push_back(conv_forward(st.features[l], st.topology, p.layers[l], mode, &st.layers[l]));
  }
  st.prob = mlp_head(st.features.back(), p.mlp, &st.mlp);
  if (mode == Mode::train) {
    for (const auto& m : st.prob) {
      if (!m.allFinite()) throw Error(Errc::non_finite_activation, "non-finite edge probability");
    }
  }
  return st;
}

/// Folds the batch statistics of a train-mode forward into the running
/// statistics (exponential average, unbiased variance).
template <class S>
void update_running_stats(ModelParams<S>& p, const ForwardState<S>& st) {
  if (st.mode != Mode::train) return;
  const S mom = static_cast<S>(kBatchNormMomentum);
  const auto mn = detail::real_count(st.topology, false);
  const auto me = detail::real_count(st.topology, true);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const auto& c = st.layers[l];
    auto fold = [&](BatchNorm<S>& bn, const Vector<S>& mean, const Vector<S>& var, Eigen::Index m) {
      if (m == 0) return;
      const S unbias = m > 1 ? static_cast<S>(m) / static_cast<S>(m - 1) : static_cast<S>(1);
      bn.running_mean = (1 - mom) * bn.running_mean + mom * mean;
      bn.running_var = (1 - mom) * bn.running_var + mom * unbias * var;
    };
    fold(L.node_bn, c.node_batch_mean, c.node_batch_var, mn);
    fold(L.edge_bn, c.edge_batch_mean, c.edge_batch_var, me);
  }
}

/// Dense eval-mode heat graph, n_max x n_max.
template <class S>
Eigen::MatrixXd infer_heat(const ModelParams<S>& p, const ScenarioGraph& graph) {
  const ScenarioGraph* gs[] = {&graph};
  auto st = forward(p, std::span<const ScenarioGraph* const>(gs), Mode::eval);
  return st.prob[0].template cast<double>();
}

// ---------------------------------------------------------------------------
// Weighted binary cross-entropy

template <class S>
struct LossResult {
  S loss = 0;
  std::vector<Matrix<S>> dlogit;  // dL/dlogit per graph, n x n
  std::size_t count = 0;
  std::size_t positives = 0;
  S pos_weight = 0;
  S neg_weight = 0;
};

/// Loss over ordered pairs (i != j) of real nodes:
///   -sum[w1 y log p + w0 (1-y) log(1-p)] / m,  w1 = m/(2 m1), w0 = m/(2 m0).
/// p is clamped to [1e-7, 1 - 1e-7]; the gradient is zero where the clamp
/// is active.
template <class S>
LossResult<S> weighted_bce(std::span<const Matrix<S>> prob, std::span<const LabelGraph* const> labels,
                           std::span<const int> n_real) {
  if (prob.size() != labels.size() || prob.size() != n_real.size()) {
    throw Error(Errc::shape_mismatch, "batch size mismatch between heats and labels");
  }
  LossResult<S> r;
  for (std::size_t g = 0; g < prob.size(); ++g) {
    if (labels[g]->rows() != prob[g].rows() || labels[g]->cols() != prob[g].cols()) {
      throw Error(Errc::shape_mismatch, "label matrix shape differs from heat graph");
    }
    const int nr = n_real[g];
    r.count += static_cast<std::size_t>(nr) * static_cast<std::size_t>(std::max(nr - 1, 0));
    for (int i = 0; i < nr; ++i)
      for (int j = 0; j < nr; ++j)
        if (i != j && (*labels[g])(i, j)) ++r.positives;
  }
  const std::size_t negatives = r.count - r.positives;
  if (r.positives == 0 || negatives == 0) {
    throw Error(Errc::degenerate_batch, "batch lacks positive or negative edges");
  }
  const S m = static_cast<S>(r.count);
  r.pos_weight = m / (2 * static_cast<S>(r.positives));
  r.neg_weight = m / (2 * static_cast<S>(negatives));
  const S lo = static_cast<S>(kProbabilityClamp), hi = static_cast<S>(1) - static_cast<S>(kProbabilityClamp);
  S total = 0;
  r.dlogit.resize(prob.size());
  for (std::size_t g = 0; g < prob.size(); ++g) {
    const auto& P = prob[g];
    auto& D = r.dlogit[g];
    D.setZero(P.rows(), P.cols());
    const int nr = n_real[g];
    for (int i = 0; i < nr; ++i) {
      for (int j = 0; j < nr; ++j) {
        if (i == j) continue;
        const S p = P(i, j);
        const S pc = std::clamp(p, lo, hi);
        const bool pos = (*labels[g])(i, j) != 0;
        total += pos ? -r.pos_weight * std::log(pc) : -r.neg_weight * std::log(1 - pc);
        if (p > lo && p < hi) D(i, j) = (pos ? -r.pos_weight * (1 - p) : r.neg_weight * p) / m;
      }
    }
  }
  r.loss = total / m;
  return r;
}

/// Gradients of the input embeddings given dL/d(layer-0 features).
template <class S>
void embed_backward(std::span<const ScenarioGraph* const> graphs, const BatchFeatures<S>& grad0, ModelParams<S>& gp) {
  const int half = gp.config.hidden / 2;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const auto& graph = *graphs[g];
    const int n = graph.n_max;
    const auto& dE = grad0[g].edge;
    gp.node_in_w.noalias() += grad0[g].node.transpose() * graph.coords.cast<S>();
    gp.node_in_b += grad0[g].node.colwise().sum().transpose();
    gp.edge_in_b += dE.leftCols(half).colwise().sum().transpose();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const S e = static_cast<S>(graph.dist(i, j));
        const S d = static_cast<S>(graph.indicator(i, j));
        const auto row = dE.row(static_cast<Eigen::Index>(i) * n + j);
        if (e != 0) gp.edge_in_w.col(0) += e * row.head(half).transpose();
        if (d != 0) gp.ind_in_w.col(0) += d * row.tail(half).transpose();
      }
    }
  }
}

/// Exact reverse-mode gradients of a loss whose logit gradients are
/// `dlogit`, back through the head, every conv layer and the embeddings.
template <class S>
ModelParams<S> backward(const ModelParams<S>& p, const ForwardState<S>& st, std::span<const Matrix<S>> dlogit) {
  ModelParams<S> gp = zeros_like(p);
  const std::size_t B = st.topology.size();
  const auto& final_feats = st.features.back();
  BatchFeatures<S> grad(B);
  for (std::size_t g = 0; g < B; ++g) {
    grad[g].edge = mlp_backward(final_feats[g].edge, p.mlp, st.mlp, g, dlogit[g], gp.mlp);
    grad[g].node.setZero(final_feats[g].node.rows(), final_feats[g].node.cols());
  }
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    conv_backward(st.features[l], st.topology, p.layers[l], st.mode, st.layers[l], grad, gp.layers[l]);
  }
  embed_backward(std::span<const ScenarioGraph* const>(st.graphs), grad, gp);
  return gp;
}

/// Loss plus gradients for a forward state and one label matrix per graph.
template <class S>
std::pair<S, ModelParams<S>> loss_and_grads(const ModelParams<S>& p, const ForwardState<S>& st,
                                            std::span<const LabelGraph* const> labels) {
  std::vector<int> n_real;
  for (const auto& t : st.topology) n_real.push_back(t.n_real);
  auto r = weighted_bce<S>(st.prob, labels, n_real);
  return {r.loss, backward(p, st, std::span<const Matrix<S>>(r.dlogit))};
}

}  // namespace cppnet
