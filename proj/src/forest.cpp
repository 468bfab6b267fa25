// Random forest of Gini CART trees on bootstrap samples.
//
// Bootstrap draws are kept as per-row multiplicities, so a node is a list of
// distinct rows with integer weights. Each node draws its own candidate
// column subset. Sentinel cells are ordinary values here; the stored default
// direction just records which side of the threshold the sentinel falls on.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "markerlab/common.hpp"
#include "markerlab/model.hpp"

namespace markerlab {

namespace {

struct Weighted {
  std::uint32_t row;
  double w;
};

double gini_mass(double pos, double total) {
  if (total <= 0.0) return 0.0;
  const double p = pos / total;
  return total * 2.0 * p * (1.0 - p);
}

class ForestTreeBuilder {
 public:
  ForestTreeBuilder(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp, std::size_t m_try, Rng& rng)
      : x_(x), y_(y), hp_(hp), m_try_(m_try), rng_(rng) {}

  Tree build(std::vector<Weighted> rows) {
    Tree tree;
    grow(tree, std::move(rows), 0);
    return tree;
  }

 private:
  int grow(Tree& tree, std::vector<Weighted> rows, int depth) {
    double total = 0.0;
    double pos = 0.0;
    for (const auto& r : rows) {
      total += r.w;
      pos += r.w * y_[r.row];
    }
    const int id = static_cast<int>(tree.nodes.size());
    TreeNode node;
    node.value = total > 0.0 ? pos / total : 0.5;
    node.cover = total;
    node.depth = depth;
    tree.nodes.push_back(node);
    if (depth >= hp_.max_depth || pos == 0.0 || pos == total || rows.size() < 2) return id;

    const auto features = candidate_features();
    const double parent = gini_mass(pos, total);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<Weighted> sorted = rows;
    for (auto f : features) {
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](const Weighted& a, const Weighted& b) { return x_.at(a.row, f) < x_.at(b.row, f); });
      double wl = 0.0;
      double pl = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        wl += sorted[i].w;
        pl += sorted[i].w * y_[sorted[i].row];
        const double v = x_.at(sorted[i].row, f);
        const double next = x_.at(sorted[i + 1].row, f);
        if (!(v < next)) continue;
        const double gain = parent - gini_mass(pl, wl) - gini_mass(pos - pl, total - wl);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          const double mid = v + (next - v) / 2.0;
          best_threshold = mid > v ? mid : next;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<Weighted> left;
    std::vector<Weighted> right;
    for (const auto& r : rows) {
      (x_.at(r.row, static_cast<std::size_t>(best_feature)) < best_threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(tree, std::move(left), depth + 1);
    const int r = grow(tree, std::move(right), depth + 1);
    auto& n = tree.nodes[static_cast<std::size_t>(id)];
    n.feature = best_feature;
    n.threshold = best_threshold;
    n.left = l;
    n.right = r;
    n.gain = best_gain;
    n.default_left = x_.sentinel() ? *x_.sentinel() < best_threshold : true;
    return id;
  }

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = x_.cols();
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    if (m_try_ >= d) return idx;
    for (std::size_t i = 0; i < m_try_; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.below(d - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m_try_);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  const DesignMatrix& x_;
  std::span<const int> y_;
  const HyperParams& hp_;
  std::size_t m_try_;
  Rng& rng_;
};

}  // namespace

TrainedModel train_random_forest(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp) {
  hp.validate();
  check_training_input(x, y);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const std::size_t m_try =
      hp.max_features > 0 ? std::min<std::size_t>(static_cast<std::size_t>(hp.max_features), d)
                          : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));

  TrainedModel model;
  model.family = ModelFamily::kRandomForest;
  model.columns = x.columns();
  model.sentinel = x.sentinel();
  model.meta.hyperparams = hp;
  model.meta.n_rows = n;
  model.meta.data_fingerprint = matrix_fingerprint(x, y);
  model.meta.notes = {"criterion=gini", "leaf=positive_fraction", "missing=sentinel_as_value",
                      "max_features=" + std::to_string(m_try)};

  for (int t = 0; t < hp.n_estimators; ++t) {
    Rng rng(mix_seed(hp.seed, static_cast<std::uint64_t>(t)));
    std::vector<double> count(n, hp.bootstrap ? 0.0 : 1.0);
    if (hp.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) count[rng.below(n)] += 1.0;
    }
    std::vector<Weighted> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (count[i] > 0.0) rows.push_back({static_cast<std::uint32_t>(i), count[i]});
    }
    ForestTreeBuilder builder(x, y, hp, m_try, rng);
    model.trees.push_back(builder.build(std::move(rows)));
  }
  return model;
}

}  // namespace markerlab
