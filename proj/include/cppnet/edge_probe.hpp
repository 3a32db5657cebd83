#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "cppnet/gcn_model.hpp"

namespace cppnet {

/// Eval-mode heat graph evaluated on demand.
///
/// Node features only ever read edges with indicator 1, so one pass over the
/// nodes and their adjacent edges yields every node feature at every layer.
/// The feature of any other edge depends only on its own inputs and the two
/// endpoint node features, so p_ij for a single pair costs L edge updates
/// plus the head. Results equal the dense eval forward on real nodes.
template <class S>
class EdgeProbe {
 public:
  EdgeProbe(const ModelParams<S>& params, const ScenarioGraph& graph) : p_(params), g_(graph) {
    const int n = graph.n_free;
    const int h = params.config.hidden;
    n_ = n;
    adj_row_ = Eigen::MatrixXi::Constant(n, n, -1);
    offset_.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (graph.indicator(i, j) == 1) {
          adj_row_(i, j) = static_cast<int>(neighbor_.size());
          neighbor_.push_back(j);
          source_.push_back(i);
        }
      }
      offset_[static_cast<std::size_t>(i) + 1] = static_cast<int>(neighbor_.size());
    }
    const auto nnz = static_cast<Eigen::Index>(neighbor_.size());

    Matrix<S> X = graph.coords.topRows(n).template cast<S>() * params.node_in_w.transpose();
    X.rowwise() += params.node_in_b.transpose();
    Matrix<S> E(nnz, h);
    for (Eigen::Index k = 0; k < nnz; ++k) {
      E.row(k) = embed_edge(source_[static_cast<std::size_t>(k)], neighbor_[static_cast<std::size_t>(k)]);
    }

    for (const auto& L : params.layers) {
      const Matrix<S> msg = X * L.w2.transpose();
      Matrix<S> U = X * L.w1.transpose();
      for (int i = 0; i < n; ++i) {
        RowArray<S> acc = RowArray<S>::Zero(h);
        RowArray<S> d = RowArray<S>::Constant(h, static_cast<S>(kGateEpsilon));
        for (int k = offset_[static_cast<std::size_t>(i)]; k < offset_[static_cast<std::size_t>(i) + 1]; ++k) {
          const RowArray<S> gk = (static_cast<S>(1) + (-E.row(k).array()).exp()).inverse();
          d += gk;
          acc += gk * msg.row(neighbor_[static_cast<std::size_t>(k)]).array();
        }
        U.row(i).array() += acc / d;
      }
      src_.push_back(X * L.w4.transpose());
      dst_.push_back(X * L.w5.transpose());
      Matrix<S> V = E * L.w3.transpose();
      for (Eigen::Index k = 0; k < nnz; ++k) {
        const auto u = static_cast<std::size_t>(k);
        V.row(k) += src_.back().row(source_[u]) + dst_.back().row(neighbor_[u]);
      }
      X += normalize_relu(U, L.node_bn);
      E += normalize_relu(V, L.edge_bn);
    }
    final_adjacent_ = std::move(E);
    cache_ = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  }

  int size() const noexcept { return n_; }

  /// p_ij for real nodes i, j.
  double operator()(int i, int j) {
    double& slot = cache_(i, j);
    if (!std::isnan(slot)) return slot;
    RowArray<S> e;
    if (const int k = adj_row_(i, j); k >= 0) {
      e = final_adjacent_.row(k).array();
    } else {
      e = embed_edge(i, j).array();
      for (std::size_t l = 0; l < p_.layers.size(); ++l) {
        const auto& L = p_.layers[l];
        Matrix<S> v = e.matrix() * L.w3.transpose();
        v += src_[l].row(i) + dst_[l].row(j);
        e += normalize_relu(v, L.edge_bn).array();
      }
    }
    Matrix<S> act = e.matrix();
    for (std::size_t k = 0; k + 1 < p_.mlp.size(); ++k) {
      Matrix<S> next = act * p_.mlp[k].weight.transpose();
      next += p_.mlp[k].bias.transpose();
      act = next.cwiseMax(static_cast<S>(0));
    }
    const S logit = (act * p_.mlp.back().weight.row(0).transpose())(0, 0) + p_.mlp.back().bias(0);
    slot = static_cast<double>(static_cast<S>(1) / (static_cast<S>(1) + std::exp(-logit)));
    return slot;
  }

 private:
  Matrix<S> embed_edge(int i, int j) const {
    const int half = p_.config.hidden / 2;
    Matrix<S> row(1, p_.config.hidden);
    row.leftCols(half) = static_cast<S>(g_.dist(i, j)) * p_.edge_in_w.col(0).transpose() + p_.edge_in_b.transpose();
    row.rightCols(half) = static_cast<S>(g_.indicator(i, j)) * p_.ind_in_w.col(0).transpose();
    return row;
  }

  static Matrix<S> normalize_relu(const Matrix<S>& pre, const BatchNorm<S>& bn) {
    const RowArray<S> inv = detail::inverse_std<S>(bn.running_var).transpose().array();
    const RowArray<S> scale = row_array<S>(bn.gamma) * inv;
    const RowArray<S> shift = row_array<S>(bn.beta) - row_array<S>(bn.running_mean) * scale;
    return ((pre.array().rowwise() * scale).rowwise() + shift).max(static_cast<S>(0)).matrix();
  }

  const ModelParams<S>& p_;
  const ScenarioGraph& g_;
  int n_ = 0;
  Eigen::MatrixXi adj_row_;
  std::vector<int> offset_, neighbor_, source_;
  std::vector<Matrix<S>> src_, dst_;  // per layer, x W4^T and x W5^T
  Matrix<S> final_adjacent_;
  Eigen::MatrixXd cache_;
};

}  // namespace cppnet
