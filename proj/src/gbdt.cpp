// Second-order gradient-boosted trees for the binary logistic loss.
//
// Each round fits a regression tree to per-row gradients g = p - y and
// Hessians h = p (1 - p). A candidate split is scored by
//   gain = 1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l)] - gamma
// and accepted only when gain > 0 and both children carry at least
// min_child_weight Hessian mass. Leaves take the Newton step -G/(H+l).
// Thresholds are midpoints between consecutive distinct values (exact
// greedy). Sentinel cells are held out of the threshold scan and follow the
// child with the larger non-sentinel Hessian mass (ties left).

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "markerlab/common.hpp"
#include "markerlab/model.hpp"

namespace markerlab {

namespace {

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
};

struct NodeWork {
  int node = 0;
  int depth = 0;
  std::vector<std::uint32_t> rows;                 // ascending row index
  std::vector<std::vector<std::uint32_t>> sorted;  // per feature: non-sentinel rows by (value, row)
  std::vector<std::vector<std::uint32_t>> held;    // per feature: sentinel rows
  double g = 0.0;
  double h = 0.0;
  Candidate best;
};

double midpoint(double a, double b) {
  const double m = a + (b - a) / 2.0;
  return m > a ? m : b;
}

class TreeGrower {
 public:
  TreeGrower(const DesignMatrix& x, std::span<const double> grad, std::span<const double> hess, const HyperParams& hp)
      : x_(x), grad_(grad), hess_(hess), hp_(hp), side_(x.rows(), 0) {}

  Tree grow(NodeWork root) {
    Tree tree;
    tree.nodes.push_back(make_leaf(root));
    evaluate(root);
    std::vector<NodeWork> open;
    open.push_back(std::move(root));
    int leaves = 1;
    while (!open.empty() && leaves < hp_.num_leaves) {
      std::size_t pick = 0;
      if (hp_.growth == Growth::kLeafwise) {
        // Largest gain first; earlier node id wins ties.
        for (std::size_t i = 1; i < open.size(); ++i) {
          if (open[i].best.gain > open[pick].best.gain) pick = i;
        }
      }
      NodeWork work = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      if (work.best.feature < 0 || work.depth >= hp_.max_depth) continue;

      auto [left, right] = partition(work);
      const int left_id = static_cast<int>(tree.nodes.size());
      left.node = left_id;
      right.node = left_id + 1;
      auto& parent = tree.nodes[static_cast<std::size_t>(work.node)];
      parent.feature = work.best.feature;
      parent.threshold = work.best.threshold;
      parent.default_left = work.best.default_left;
      parent.gain = work.best.gain;
      parent.left = left_id;
      parent.right = left_id + 1;
      parent.value = 0.0;
      tree.nodes.push_back(make_leaf(left));
      tree.nodes.push_back(make_leaf(right));
      ++leaves;
      evaluate(left);
      evaluate(right);
      open.push_back(std::move(left));
      open.push_back(std::move(right));
    }
    return tree;
  }

  NodeWork root(std::span<const std::uint32_t> rows, const std::vector<std::vector<std::uint32_t>>& presorted) const {
    NodeWork work;
    work.rows.assign(rows.begin(), rows.end());
    const std::size_t d = x_.cols();
    work.sorted.resize(d);
    work.held.resize(d);
    std::vector<char> member(x_.rows(), 0);
    for (auto r : rows) member[r] = 1;
    for (std::size_t f = 0; f < d; ++f) {
      for (auto r : presorted[f]) {
        if (!member[r]) continue;
        (x_.is_sentinel(x_.at(r, f)) ? work.held[f] : work.sorted[f]).push_back(r);
      }
    }
    sum(work);
    return work;
  }

 private:
  void sum(NodeWork& work) const {
    work.g = 0.0;
    work.h = 0.0;
    for (auto r : work.rows) {
      work.g += grad_[r];
      work.h += hess_[r];
    }
  }

  TreeNode make_leaf(const NodeWork& work) const {
    TreeNode node;
    node.value = leaf_weight(work.g, work.h, hp_.l2_lambda);
    node.cover = work.h;
    node.depth = work.depth;
    return node;
  }

  double score(double g, double h) const { return g * g / (h + hp_.l2_lambda); }

  void evaluate(NodeWork& work) const {
    work.best = Candidate{};
    if (work.depth >= hp_.max_depth || work.rows.size() < 2) return;
    const double parent = score(work.g, work.h);
    for (std::size_t f = 0; f < work.sorted.size(); ++f) {
      const auto& rows = work.sorted[f];
      if (rows.size() < 2) continue;
      double g_held = 0.0;
      double h_held = 0.0;
      for (auto r : work.held[f]) {
        g_held += grad_[r];
        h_held += hess_[r];
      }
      double g_obs = 0.0;
      double h_obs = 0.0;
      for (auto r : rows) {
        g_obs += grad_[r];
        h_obs += hess_[r];
      }
      double gl = 0.0;
      double hl = 0.0;
      for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        gl += grad_[rows[i]];
        hl += hess_[rows[i]];
        const double v = x_.at(rows[i], f);
        const double next = x_.at(rows[i + 1], f);
        if (!(v < next)) continue;
        double gr = g_obs - gl;
        double hr = h_obs - hl;
        const bool default_left = hl >= hr;
        double g_left = gl;
        double h_left = hl;
        if (default_left) {
          g_left += g_held;
          h_left += h_held;
        } else {
          gr += g_held;
          hr += h_held;
        }
        if (h_left < hp_.min_child_weight || hr < hp_.min_child_weight) continue;
        const double gain = 0.5 * (score(g_left, h_left) + score(gr, hr) - parent) - hp_.min_split_gain;
        if (gain > work.best.gain) {
          work.best = Candidate{gain, static_cast<int>(f), midpoint(v, next), default_left};
        }
      }
    }
  }

  std::pair<NodeWork, NodeWork> partition(NodeWork& work) {
    const auto f = static_cast<std::size_t>(work.best.feature);
    for (auto r : work.rows) {
      const double v = x_.at(r, f);
      side_[r] = x_.is_sentinel(v) ? (work.best.default_left ? 1 : 2) : (v < work.best.threshold ? 1 : 2);
    }
    NodeWork left;
    NodeWork right;
    left.depth = right.depth = work.depth + 1;
    auto split_list = [&](const std::vector<std::uint32_t>& src, std::vector<std::uint32_t>& l, std::vector<std::uint32_t>& r) {
      for (auto row : src) (side_[row] == 1 ? l : r).push_back(row);
    };
    split_list(work.rows, left.rows, right.rows);
    const std::size_t d = work.sorted.size();
    left.sorted.resize(d);
    right.sorted.resize(d);
    left.held.resize(d);
    right.held.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
      split_list(work.sorted[k], left.sorted[k], right.sorted[k]);
      split_list(work.held[k], left.held[k], right.held[k]);
    }
    sum(left);
    sum(right);
    return {std::move(left), std::move(right)};
  }

  const DesignMatrix& x_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  const HyperParams& hp_;
  std::vector<char> side_;
};

std::vector<std::uint32_t> round_rows(std::size_t n, double subsample, std::uint64_t seed, int round) {
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0U);
  if (subsample >= 1.0) return rows;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(round)));
  rng.shuffle(rows);
  rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(subsample * static_cast<double>(n)))));
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

double leaf_weight(double g_sum, double h_sum, double lambda) { return -g_sum / (h_sum + lambda); }

TrainedModel train_gbdt(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp) {
  hp.validate();
  check_training_input(x, y);
  const std::size_t n = x.rows();
  const double positives = static_cast<double>(std::accumulate(y.begin(), y.end(), 0));

  TrainedModel model;
  model.family = ModelFamily::kGbdt;
  model.base_score = logit(positives / static_cast<double>(n));
  model.learning_rate = hp.learning_rate;
  model.columns = x.columns();
  model.sentinel = x.sentinel();
  model.meta.hyperparams = hp;
  model.meta.n_rows = n;
  model.meta.data_fingerprint = matrix_fingerprint(x, y);
  model.meta.notes = {"loss=binary_logistic", "base_score=training_log_odds",
                      "missing=sentinel_to_heavier_hessian_child", "thresholds=exact_midpoints"};

  // Column orders are sorted once; each tree filters them by its rows.
  std::vector<std::vector<std::uint32_t>> presorted(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    auto& order = presorted[f];
    order.resize(n);
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x.at(a, f) < x.at(b, f); });
  }

  std::vector<double> raw(n, model.base_score);
  std::vector<double> grad(n);
  std::vector<double> hess(n);
  for (int m = 0; m < hp.n_estimators; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(raw[i]);
      grad[i] = p - static_cast<double>(y[i]);
      hess[i] = p * (1.0 - p);
    }
    TreeGrower grower(x, grad, hess, hp);
    const auto rows = round_rows(n, hp.subsample, hp.seed, m);
    Tree tree = grower.grow(grower.root(rows, presorted));
    for (std::size_t i = 0; i < n; ++i) raw[i] += hp.learning_rate * tree.predict(x.row(i), x.sentinel());
    model.trees.push_back(std::move(tree));
  }
  return model;
}

LeafAudit audit_leaf_weights(const TrainedModel& model, const DesignMatrix& x, std::span<const int> y) {
  if (model.family != ModelFamily::kGbdt) fail(ErrorKind::kUsage, "leaf-weight audit applies to boosted models");
  if (x.labels() != [&] {
        std::vector<std::string> l;
        for (const auto& c : model.columns) l.push_back(c.label);
        return l;
      }()) {
    fail(ErrorKind::kUsage, "audit matrix columns do not match the model");
  }
  const auto& hp = model.meta.hyperparams;
  const std::size_t n = x.rows();
  LeafAudit audit;
  std::vector<double> raw(n, model.base_score);
  for (std::size_t m = 0; m < model.trees.size(); ++m) {
    const auto& tree = model.trees[m];
    std::vector<double> g(tree.nodes.size(), 0.0);
    std::vector<double> h(tree.nodes.size(), 0.0);
    for (auto r : round_rows(n, hp.subsample, hp.seed, static_cast<int>(m))) {
      const double p = sigmoid(raw[r]);
      const auto leaf = static_cast<std::size_t>(tree.leaf_for(x.row(r), x.sentinel()));
      g[leaf] += p - static_cast<double>(y[r]);
      h[leaf] += p * (1.0 - p);
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      if (!tree.nodes[k].is_leaf()) continue;
      const double expected = -g[k] / (h[k] + hp.l2_lambda);
      audit.max_abs_deviation = std::max(audit.max_abs_deviation, std::abs(expected - tree.nodes[k].value));
      ++audit.leaves_checked;
    }
    for (std::size_t i = 0; i < n; ++i) raw[i] += model.learning_rate * tree.predict(x.row(i), x.sentinel());
  }
  return audit;
}

}  // namespace markerlab
