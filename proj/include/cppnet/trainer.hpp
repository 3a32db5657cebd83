#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cppnet/checkpoint.hpp"
#include "cppnet/errors.hpp"
#include "cppnet/gcn_model.hpp"
#include "cppnet/graph_encode.hpp"
#include "cppnet/io.hpp"
#include "cppnet/parallel.hpp"
#include "cppnet/random.hpp"
#include "cppnet/scenario.hpp"
#include "cppnet/tsp_oracle.hpp"

namespace cppnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 20;
  int max_epochs = 6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  fs::path checkpoint_dir;   // empty: keep checkpoints in memory only
  fs::path label_cache_dir;  // empty: label every scenario afresh
  Connectivity connectivity = Connectivity::four;
  double threshold = 0.5;    // validation F1 decision threshold
  bool record_time = true;   // false writes 0 seconds, for byte-stable reports

  void validate() const {
    if (batch_size < 1) throw Error(Errc::invalid_argument, "batch_size must be >= 1");
    // Zero is allowed so a null-update run can be expressed.
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw Error(Errc::invalid_argument, "learning_rate must be >= 0");
    if (max_epochs < 0) throw Error(Errc::invalid_argument, "max_epochs must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error(Errc::invalid_argument, "Adam betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw Error(Errc::invalid_argument, "Adam epsilon must be positive");
  }
};

// ---------------------------------------------------------------------------
// Labeled data

struct LabeledScenario {
  std::string hash;
  ScenarioGraph graph;  // capacity n_free: padding is inert, so none is added
  LabelGraph labels;
  Tour tour;
};

/// Cache key for a scenario's labels. Labels depend on the connectivity, so
/// 8-connected tours get their own key.
inline std::string label_key(std::string_view scenario_hash, Connectivity conn) {
  return conn == Connectivity::four ? std::string(scenario_hash) : std::string(scenario_hash) + "-c8";
}

/// 2-opt labels for each map, read from or written to `cache` when given.
inline Tour label_with_cache(const GridMap& map, Connectivity conn, const LabelCache* cache) {
  const std::string key = label_key(scenario_hash(map), conn);
  const CostMatrix costs = cost_matrix(map, conn);
  if (cache) {
    if (auto order = cache->find(key)) {
      if (!is_permutation_from(*order, costs.n, slot_of(map, map.start()))) {
        throw Error(Errc::parse_error, "cached labels do not match scenario " + key);
      }
      return Tour{*order, tour_length(costs, *order)};
    }
  }
  Tour tour = two_opt(costs, slot_of(map, map.start()));
  if (cache) cache->store(key, tour);
  return tour;
}

inline std::vector<LabeledScenario> label_scenarios(std::span<const GridMap> maps, const ModelConfig& model,
                                                    Connectivity conn, const fs::path& cache_dir = {}) {
  std::optional<LabelCache> cache;
  if (!cache_dir.empty()) cache.emplace(cache_dir);
  std::vector<LabeledScenario> out(maps.size());
  EncodeOptions enc{conn, model.normalize_coords};
  parallel_for(maps.size(), [&](std::size_t i) {
    const GridMap& map = maps[i];
    if (map.free_count() > model.n_max) {
      throw Error(Errc::capacity_exceeded, "scenario " + std::to_string(i) + " has more free cells than n_max");
    }
    auto& item = out[i];
    item.hash = scenario_hash(map);
    item.tour = label_with_cache(map, conn, cache ? &*cache : nullptr);
    item.graph = encode(map, map.free_count(), enc);
    item.labels = tour_to_labels(item.tour, map.free_count());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
  double loss = 0;  // mean weighted BCE over scenarios that have both classes
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t false_neg = 0;
  std::size_t scenarios = 0;
  std::size_t loss_scenarios = 0;
};

/// Edge metrics over ordered real pairs i != j; p >= threshold predicts an
/// edge, so exact ties count as positive.
inline EvalMetrics evaluate_heats(std::span<const Matrix<double>> heats, std::span<const LabelGraph* const> labels,
                                  std::span<const int> n_real, double threshold = 0.5) {
  if (heats.empty()) throw Error(Errc::empty_eval_set, "no scenarios to evaluate");
  if (heats.size() != labels.size() || heats.size() != n_real.size()) {
    throw Error(Errc::shape_mismatch, "heats, labels and sizes differ in count");
  }
  EvalMetrics m;
  m.scenarios = heats.size();
  double loss_sum = 0;
  for (std::size_t g = 0; g < heats.size(); ++g) {
    const auto& P = heats[g];
    const auto& Y = *labels[g];
    for (int i = 0; i < n_real[g]; ++i) {
      for (int j = 0; j < n_real[g]; ++j) {
        if (i == j) continue;
        const bool pred = P(i, j) >= threshold;
        const bool truth = Y(i, j) != 0;
        m.true_pos += pred && truth;
        m.false_pos += pred && !truth;
        m.false_neg += !pred && truth;
      }
    }
    try {
      const Matrix<double> one[] = {P};
      const LabelGraph* lab[] = {labels[g]};
      const int nr[] = {n_real[g]};
      loss_sum += weighted_bce<double>(one, lab, nr).loss;
      ++m.loss_scenarios;
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_batch) throw;
    }
  }
  m.loss = m.loss_scenarios ? loss_sum / static_cast<double>(m.loss_scenarios) : 0.0;
  const double tp = static_cast<double>(m.true_pos);
  m.precision = m.true_pos + m.false_pos ? tp / static_cast<double>(m.true_pos + m.false_pos) : 0.0;
  m.recall = m.true_pos + m.false_neg ? tp / static_cast<double>(m.true_pos + m.false_neg) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

/// Eval-mode forward on each scenario independently, then evaluate_heats.
template <class S>
EvalMetrics evaluate(const ModelParams<S>& params, std::span<const LabeledScenario> data, double threshold = 0.5) {
  if (data.empty()) throw Error(Errc::empty_eval_set, "no scenarios to evaluate");
  std::vector<Matrix<double>> heats(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    heats[i] = infer_heat(params, data[i].graph);
  });
  std::vector<const LabelGraph*> labels;
  std::vector<int> n_real;
  for (const auto& d : data) {
    labels.push_back(&d.labels);
    n_real.push_back(d.graph.n_free);
  }
  return evaluate_heats(heats, labels, n_real, threshold);
}

// ---------------------------------------------------------------------------
// Adam

/// Adam with bias correction. Running batch-norm statistics are not
/// trainable and are left alone.
template <class S>
class Adam {
 public:
  Adam(const ModelConfig& config, const TrainConfig& train)
      : m_(zero_params<S>(config)), v_(zero_params<S>(config)), train_(train) {}

  void step(ModelParams<S>& params, ModelParams<S>& grads) {
    ++t_;
    const double b1 = train_.beta1, b2 = train_.beta2;
    const double c1 = 1 - std::pow(b1, t_);
    const double c2 = 1 - std::pow(b2, t_);
    auto pv = tensor_views(params);
    auto gv = tensor_views(grads);
    auto mv = tensor_views(m_);
    auto vv = tensor_views(v_);
    for (std::size_t k = 0; k < pv.size(); ++k) {
      if (pv[k].kind != TensorKind::weight) continue;
      for (Eigen::Index i = 0; i < pv[k].size(); ++i) {
        const double g = static_cast<double>(gv[k].data[i]);
        const double m = b1 * static_cast<double>(mv[k].data[i]) + (1 - b1) * g;
        const double v = b2 * static_cast<double>(vv[k].data[i]) + (1 - b2) * g * g;
        mv[k].data[i] = static_cast<S>(m);
        vv[k].data[i] = static_cast<S>(v);
        const double update = train_.learning_rate * (m / c1) / (std::sqrt(v / c2) + train_.epsilon);
        pv[k].data[i] = static_cast<S>(static_cast<double>(pv[k].data[i]) - update);
      }
    }
  }

  long steps() const { return t_; }

 private:
  ModelParams<S> m_, v_;
  TrainConfig train_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;  // mean over the epoch's non-skipped batches
  double val_loss = 0;
  double val_f1 = 0;
  double seconds = 0;
};

struct TrainReport {
  EvalMetrics initial_validation;  // untrained model
  std::vector<EpochStats> epochs;
  std::vector<double> batch_losses;
  std::size_t skipped_batches = 0;
  int best_epoch = 0;  // 0: the initialization was never beaten
};

struct TrainResult {
  ModelParams<double> final_params;
  ModelParams<double> best_params;
  TrainReport report;
};

inline constexpr std::string_view kBestCheckpoint = "best.ckpt";
inline constexpr std::string_view kFinalCheckpoint = "final.ckpt";

using EpochCallback = std::function<void(const EpochStats&)>;

inline TrainResult train(std::span<const LabeledScenario> train_set, std::span<const LabeledScenario> val_set,
                         const TrainConfig& config, const ModelConfig& model, const EpochCallback& on_epoch = {}) {
  config.validate();
  model.validate();
  if (train_set.empty() || val_set.empty()) {
    throw Error(Errc::invalid_argument, "training needs nonempty train and validation splits");
  }
  auto params = init_params<double>(model, derive_seed(config.seed, 1));
  Adam<double> adam(model, config);
  TrainResult result;
  auto& report = result.report;
  report.initial_validation = evaluate(params, val_set, config.threshold);
  double best_loss = report.initial_validation.loss;
  result.best_params = params;

  auto save = [&](const ModelParams<double>& p, std::string_view name) {
    if (!config.checkpoint_dir.empty()) save_checkpoint(p, config.checkpoint_dir / name);
  };

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      std::vector<const ScenarioGraph*> graphs;
      std::vector<const LabelGraph*> labels;
      for (std::size_t k = b; k < e; ++k) {
        graphs.push_back(&train_set[order[k]].graph);
        labels.push_back(&train_set[order[k]].labels);
      }
      auto st = forward(params, std::span<const ScenarioGraph* const>(graphs), Mode::train);
      std::pair<double, ModelParams<double>> lg;
      try {
        lg = loss_and_grads(params, st, std::span<const LabelGraph* const>(labels));
      } catch (const Error& err) {
        if (err.code() != Errc::degenerate_batch) throw;
        ++report.skipped_batches;
        continue;
      }
      update_running_stats(params, st);
      adam.step(params, lg.second);
      report.batch_losses.push_back(lg.first);
      loss_sum += lg.first;
      ++batches;
    }
    auto val = evaluate(params, val_set, config.threshold);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : std::numeric_limits<double>::quiet_NaN();
    stats.val_loss = val.loss;
    stats.val_f1 = val.f1;
    if (config.record_time) {
      stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    report.epochs.push_back(stats);
    if (val.loss < best_loss) {
      best_loss = val.loss;
      result.best_params = params;
      report.best_epoch = epoch;
      save(params, kBestCheckpoint);
    }
    if (on_epoch) on_epoch(stats);
  }
  if (report.best_epoch == 0) save(result.best_params, kBestCheckpoint);
  save(params, kFinalCheckpoint);
  result.final_params = std::move(params);
  return result;
}

/// Labels the set's train and validation splits, then trains.
inline TrainResult train(const ScenarioSet& set, const TrainConfig& config, const ModelConfig& model,
                         const EpochCallback& on_epoch = {}) {
  auto tr_maps = set.subset(Split::train);
  auto va_maps = set.subset(Split::validation);
  auto tr = label_scenarios(tr_maps, model, config.connectivity, config.label_cache_dir);
  auto va = label_scenarios(va_maps, model, config.connectivity, config.label_cache_dir);
  return train(tr, va, config, model, on_epoch);
}

// ---------------------------------------------------------------------------
// Text I/O

inline std::string report_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,val_loss,val_f1,seconds\n";
  for (const auto& e : report.epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
           format_double(e.val_f1) + "," + format_double(e.seconds) + "\n";
  }
  return out;
}

struct TrainSettings {
  TrainConfig train;
  ModelConfig model;
};

/// `key = value` lines; `#` starts a comment. Unknown keys are rejected.
inline TrainSettings parse_train_config(std::string_view text) {
  TrainSettings s;
  auto bool_value = [](std::string_view v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(Errc::parse_error, "expected true/false for " + key);
  };
  int line_no = 0;
  for (auto raw : split_lines(text)) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    auto f = split_whitespace(line);
    if (f.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": expected key = value");
    auto key_f = split_whitespace(line.substr(0, eq));
    auto val_f = split_whitespace(line.substr(eq + 1));
    if (key_f.size() != 1 || val_f.size() != 1) {
      throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(key_f[0]);
    const std::string_view v = val_f[0];
    if (key == "learning_rate") s.train.learning_rate = parse_double(v);
    else if (key == "batch_size") s.train.batch_size = parse_int<int>(v);
    else if (key == "max_epochs") s.train.max_epochs = parse_int<int>(v);
    else if (key == "beta1") s.train.beta1 = parse_double(v);
    else if (key == "beta2") s.train.beta2 = parse_double(v);
    else if (key == "epsilon") s.train.epsilon = parse_double(v);
    else if (key == "seed") s.train.seed = parse_int<std::uint64_t>(v);
    else if (key == "checkpoint_dir") s.train.checkpoint_dir = std::string(v);
    else if (key == "label_cache_dir") s.train.label_cache_dir = std::string(v);
    else if (key == "threshold") s.train.threshold = parse_double(v);
    else if (key == "connectivity") {
      const int c = parse_int<int>(v);
      if (c != 4 && c != 8) throw Error(Errc::parse_error, "connectivity must be 4 or 8");
      s.train.connectivity = static_cast<Connectivity>(c);
    } else if (key == "hidden") s.model.hidden = parse_int<int>(v);
    else if (key == "conv_layers") s.model.conv_layers = parse_int<int>(v);
    else if (key == "mlp_layers") s.model.mlp_layers = parse_int<int>(v);
    else if (key == "n_max") s.model.n_max = parse_int<int>(v);
    else if (key == "normalize_coords") s.model.normalize_coords = bool_value(v, key);
    else throw Error(Errc::parse_error, "unknown config key '" + key + "'");
  }
  s.train.validate();
  s.model.validate();
  return s;
}

}  // namespace cppnet
