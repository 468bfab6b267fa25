#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "markerlab/metrics.hpp"
#include "markerlab/model.hpp"

namespace markerlab {

enum class Task { kSurvival, kAki };

Task parse_task(std::string_view text);
std::string_view to_string(Task task);
// "last status" or "AKI during hospitalization".
std::string target_for(Task task);

// Everything the k-split protocol needs besides the model configuration.
struct ProtocolConfig {
  std::string target;
  std::string positive_class;  // empty: default convention for the target
  std::vector<std::string> exclusions;
  int k = 5;
  std::uint64_t base_seed = 0;
  SplitSpec split;  // seed is replaced by base_seed + i
  double rebalance_ratio = 1.0;  // 0 disables upsampling
  double threshold = 0.5;
  double drop_threshold = 0.75;
  ImputePolicy impute;
  TransformKind transform = TransformKind::kIdentity;
};

nlohmann::json to_json(const ProtocolConfig& config);
ProtocolConfig protocol_from_json(const nlohmann::json& doc);

// Target split off, exclusions removed, sparse markers dropped.
struct PreparedData {
  PatientTable features;
  std::vector<int> labels;
  std::string target;
  std::string positive_class;
  std::vector<std::string> dropped_sparse;
  std::vector<std::string> eliminated;
  std::vector<std::string> unknown_exclusions;
  std::size_t dropped_missing_target = 0;
  std::string fingerprint;
};

PreparedData prepare(const PatientTable& table, const ProtocolConfig& config);
// Further removes markers from already prepared data.
PreparedData without_markers(const PreparedData& data, std::span<const std::string> markers);

struct SplitOutcome {
  Split split;
  TrainedModel model;
  MetricsReport val;
  MetricsReport test;
  DesignMatrix val_x;
  std::vector<int> val_y;
  std::vector<double> test_scores;
  std::vector<int> test_y;
};

// One split of the protocol: preprocessing fitted on train rows, positives
// upsampled, model trained, validation and test scored.
SplitOutcome run_split(const PreparedData& data, const Split& split, std::size_t split_index, const HyperParams& hp,
                       const ProtocolConfig& config);

struct Evaluation {
  std::vector<SplitOutcome> splits;
  MetricsReport val;   // averaged
  MetricsReport test;  // averaged
};

Evaluation evaluate(const PreparedData& data, const HyperParams& hp, const ProtocolConfig& config);

// Published best configurations. Names: lgbm-like, xgb-like, cat-like, rf, logistic.
HyperParams preset(std::string_view name, Task task);
std::vector<std::string> preset_names();

MetricsReport evaluate_preset(const PatientTable& table, const HyperParams& hp, const ProtocolConfig& config);

struct GridAxis {
  std::string name;  // a HyperParams field name
  std::vector<double> values;
};

struct HyperGrid {
  std::string preset;
  HyperParams base;
  std::vector<GridAxis> axes;

  std::size_t size() const;
  // Full factorial in axis order; the last axis varies fastest.
  std::vector<HyperParams> points() const;
};

void set_param(HyperParams& hp, std::string_view name, double value);
double get_param(const HyperParams& hp, std::string_view name);

// Eight log-spaced points over [lo, hi]; each optimum replaces its nearest
// interior point (ties to the lower one).
std::vector<double> learning_rate_axis(double lo, double hi, std::span<const double> optima);

HyperGrid builtin_grid(std::string_view preset_name, Task task);

nlohmann::json to_json(const HyperGrid& grid);
HyperGrid grid_from_json(const nlohmann::json& doc);

struct LeaderboardRow {
  std::size_t point = 0;  // index in grid iteration order
  HyperParams hyperparams;
  std::vector<double> split_objective;
  double objective = 0.0;
  MetricsReport val;
  MetricsReport test;
};

struct GridFailure {
  std::size_t point = 0;
  HyperParams hyperparams;
  std::string reason;
};

struct GridOptions {
  std::string objective = "accuracy";
  unsigned threads = 1;
  std::size_t max_points = 512;
};

struct GridResult {
  HyperParams best;
  std::vector<LeaderboardRow> leaderboard;  // descending objective, grid order breaks ties
  std::vector<GridFailure> failures;
  std::size_t evaluated = 0;
};

GridResult grid_search(const HyperGrid& grid, const PreparedData& data, const ProtocolConfig& config,
                       const GridOptions& options = {});

std::string leaderboard_csv(const HyperGrid& grid, const GridResult& result);
nlohmann::json to_json(const GridResult& result);
nlohmann::json preset_document(const HyperParams& hp);
HyperParams preset_from_document(const nlohmann::json& doc);

}  // namespace markerlab
