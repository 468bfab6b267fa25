#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "markerlab/preprocess.hpp"

namespace markerlab {

enum class ModelFamily { kGbdt, kRandomForest, kLogistic };
enum class Growth { kDepthwise, kLeafwise };

std::string_view to_string(ModelFamily family);
ModelFamily parse_family(std::string_view text);
std::string_view to_string(Growth growth);

struct HyperParams {
  ModelFamily family = ModelFamily::kGbdt;
  std::string preset;  // informational, e.g. "lgbm-like"
  double learning_rate = 0.3;
  double l2_lambda = 1.0;
  double min_split_gain = 0.0;
  int max_depth = 6;
  int num_leaves = 64;
  int n_estimators = 100;
  double min_child_weight = 1.0;  // Hessian mass
  double subsample = 1.0;
  Growth growth = Growth::kDepthwise;
  // Random forest only.
  bool bootstrap = true;
  int max_features = 0;  // 0 selects ceil(sqrt(columns))
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

nlohmann::json to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const nlohmann::json& doc);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  bool default_left = true;  // route for sentinel-valued cells
  double value = 0.0;        // leaf weight (GBDT) or positive-class probability (forest)
  double gain = 0.0;         // realised split gain (internal nodes)
  double cover = 0.0;        // Hessian mass (GBDT) or sample weight (forest)
  int depth = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  int leaf_for(std::span<const double> row, std::optional<double> sentinel) const;
  double predict(std::span<const double> row, std::optional<double> sentinel) const {
    return nodes[static_cast<std::size_t>(leaf_for(row, sentinel))].value;
  }
  int depth() const;
  int leaf_count() const;
  bool operator==(const Tree&) const = default;
};

struct LinearModel {
  std::vector<double> weights;  // on standardized columns
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> scale;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = true;
  bool operator==(const LinearModel&) const = default;
};

struct TrainingMeta {
  HyperParams hyperparams;
  std::string data_fingerprint;
  std::string schema_fingerprint;
  std::size_t n_rows = 0;
  std::vector<std::string> notes;
  bool operator==(const TrainingMeta&) const = default;
};

struct TrainedModel {
  ModelFamily family = ModelFamily::kGbdt;
  double base_score = 0.0;  // raw log-odds before the first tree
  double learning_rate = 1.0;
  std::vector<Tree> trees;
  std::optional<LinearModel> linear;
  std::vector<DesignColumn> columns;
  std::optional<double> sentinel;
  std::optional<Preprocessor> preprocessing;
  TrainingMeta meta;

  std::vector<std::string> markers() const;
  bool operator==(const TrainedModel&) const = default;
};

std::string matrix_fingerprint(const DesignMatrix& x, std::span<const int> y);
// Labels in {0,1}, at least two rows of each class, finite cells.
void check_training_input(const DesignMatrix& x, std::span<const int> y);

// Newton step of a boosted leaf: -G / (H + lambda).
double leaf_weight(double g_sum, double h_sum, double lambda);

TrainedModel train_gbdt(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp);
TrainedModel train_random_forest(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp);
TrainedModel train_logistic(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp);
TrainedModel train_model(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp);

std::vector<double> predict_proba(const TrainedModel& model, const DesignMatrix& x);
// Runs the stored preprocessing first.
std::vector<double> predict_table(const TrainedModel& model, const PatientTable& table);

nlohmann::json serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(const nlohmann::json& doc);

// Logistic objective on standardized parameters:
// sum_i softplus(s_i) - y_i s_i + lambda/2 |w|^2, bias unpenalized.
double logistic_loss(const LinearModel& model, const DesignMatrix& x, std::span<const int> y, double lambda);
// Gradient w.r.t. (weights..., bias).
std::vector<double> logistic_gradient(const LinearModel& model, const DesignMatrix& x, std::span<const int> y,
                                      double lambda);

struct LeafAudit {
  double max_abs_deviation = 0.0;
  std::size_t leaves_checked = 0;
};

// Replays boosting on the training data and recomputes every leaf weight
// as -G / (H + lambda) from the rows routed to it.
LeafAudit audit_leaf_weights(const TrainedModel& model, const DesignMatrix& x, std::span<const int> y);

}  // namespace markerlab
