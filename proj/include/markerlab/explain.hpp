#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "markerlab/search.hpp"

namespace markerlab {

enum class AttributionMethod { kGain, kPermutation };

std::string_view to_string(AttributionMethod method);
AttributionMethod parse_attribution(std::string_view text);

struct AttributionEntry {
  std::string name;  // marker, or column label in the per-column view
  double score = 0.0;
  double raw = 0.0;  // unnormalized gain sum (gain) or equal to score (permutation)
  bool operator==(const AttributionEntry&) const = default;
};

struct AttributionReport {
  AttributionMethod method = AttributionMethod::kGain;
  std::vector<AttributionEntry> markers;  // model marker order
  std::vector<AttributionEntry> columns;  // gain only: per design column
  std::string metric;                     // permutation only
  int repeats = 0;
  std::uint64_t seed = 0;
  std::size_t models = 1;  // reports averaged into this one

  double score(std::string_view marker) const;
  bool operator==(const AttributionReport&) const = default;
};

// Split gains summed per column, then per source marker; scores are shares
// of the total gain, raw holds the sums.
AttributionReport gain_importance(const TrainedModel& model);

struct PermutationOptions {
  std::string metric = "accuracy";
  int repeats = 10;
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

// baseline metric minus the metric after jointly permuting all columns of a
// marker, averaged over repeats.
AttributionReport permutation_importance(const TrainedModel& model, const DesignMatrix& x, std::span<const int> y,
                                         const PermutationOptions& options = {});

// Same score for one marker of a raw table, routed through the model's
// stored preprocessing. A marker the model does not read scores exactly 0.
double permutation_importance_of(const TrainedModel& model, const PatientTable& table, std::span<const int> y,
                                 std::string_view marker, const PermutationOptions& options = {});

// Mean of per-model reports over the union of markers.
AttributionReport average_attribution(std::span<const AttributionReport> reports);

// k highest scores, descending; ties by name.
std::vector<AttributionEntry> top_k(const AttributionReport& report, std::size_t k = 10);

nlohmann::json to_json(const AttributionReport& report);
AttributionReport attribution_from_json(const nlohmann::json& doc);
std::string attribution_csv(const AttributionReport& report);

enum class Verdict { kApproved, kRejected };
std::string_view to_string(Verdict verdict);
Verdict parse_verdict(std::string_view text);

struct Decision {
  std::string marker;
  Verdict verdict = Verdict::kApproved;
  std::string note;
  std::string timestamp;
  bool operator==(const Decision&) const = default;
};

nlohmann::json to_json(const Decision& d);
Decision decision_from_json(const nlohmann::json& doc);

enum class IterationStatus { kRunning, kAwaitingReview, kClosed, kFailed };
std::string_view to_string(IterationStatus status);
IterationStatus parse_iteration_status(std::string_view text);

struct ExperimentConfig {
  std::string dataset;  // CSV path; empty when `synthetic` is set
  std::optional<nlohmann::json> synthetic;  // SyntheticSpec document
  std::string schema = "builtin";
  ProtocolConfig protocol;
  std::string preset = "lgbm-like";
  std::string task = "survival";  // selects the preset variant
  std::optional<HyperParams> hyperparams;  // overrides the preset
  std::optional<HyperGrid> grid;           // search each iteration instead
  std::size_t grid_max_points = 512;
  std::string objective = "accuracy";
  AttributionMethod attribution = AttributionMethod::kGain;
  PermutationOptions permutation;
  std::size_t top_k = 10;
  int max_iterations = 10;

  HyperParams resolved_hyperparams() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);

struct Iteration {
  int index = 0;
  IterationStatus status = IterationStatus::kRunning;
  std::vector<std::string> exclusions;
  std::vector<std::string> features;  // markers the models were trained on
  HyperParams hyperparams;
  MetricsReport val;
  MetricsReport test;
  std::vector<MetricsReport> split_test;
  RocCurve roc;  // pooled test scores of all splits
  AttributionReport attribution;
  std::vector<std::string> top;  // top-k marker names
  std::vector<Decision> decisions;
  std::string data_fingerprint;
  std::string error;
  std::vector<TrainedModel> models;  // not part of the ledger document
};

nlohmann::json to_json(const Iteration& it);  // ledger view, without models
Iteration iteration_from_json(const nlohmann::json& doc);

struct Ablation {
  int index = 0;
  std::string status = "completed";  // running, completed, failed
  std::string error;
  std::string marker;
  std::vector<std::string> exclusions;
  HyperParams hyperparams;
  MetricsReport baseline;
  MetricsReport ablated;
  std::vector<MetricsReport> baseline_splits;
  std::vector<MetricsReport> ablated_splits;
};

nlohmann::json to_json(const Ablation& a);
Ablation ablation_from_json(const nlohmann::json& doc);

struct Experiment {
  std::string id;
  ExperimentConfig config;
  std::string data_fingerprint;
  std::vector<Iteration> iterations;
  std::vector<Ablation> ablations;
  bool terminal = false;
  bool converged = false;

  // Configured exclusions plus every rejection so far, in order of entry.
  std::vector<std::string> exclusions() const;
};

nlohmann::json to_json(const Experiment& e);

// Iteration i+1 may start once iteration i is closed or failed.
void check_can_start(const Experiment& experiment);

// Trains and attributes one iteration on the current exclusion set. Training
// errors are recorded on the returned iteration (status failed).
Iteration run_iteration(const Experiment& experiment, const PatientTable& table);

struct Termination {
  bool terminal = false;
  bool converged = false;
};

Termination check_termination(const Iteration& iteration, std::span<const Decision> decisions, int max_iterations);

// Validates decisions against the iteration's top-k, closes the iteration and
// updates the terminal state. Throws kConflict if the iteration is not
// awaiting review.
Termination submit_decisions(Experiment& experiment, int index, std::vector<Decision> decisions);

// Baseline and ablated runs on identical splits and seeds.
Ablation ablate(const Experiment& experiment, const PatientTable& table, std::string_view marker);

}  // namespace markerlab
