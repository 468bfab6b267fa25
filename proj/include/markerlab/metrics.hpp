#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "markerlab/preprocess.hpp"

namespace markerlab {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  std::string positive = "1";

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

// Counts with label 1 as the positive class.
ConfusionMatrix confusion(std::span<const int> y, std::span<const int> y_hat, std::string positive = "1");

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  ConfusionMatrix cm;
  std::size_t n_test = 0;
};

// Standard definitions; a zero denominator yields 0.
MetricsReport classification_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
};

// Descending threshold sweep with tied scores grouped; trapezoidal area,
// which equals the Mann-Whitney statistic with half credit for ties.
RocResult roc_auc(std::span<const int> y, std::span<const double> scores);

std::vector<int> threshold_labels(std::span<const double> scores, double threshold = 0.5);

// Full report on one evaluation set.
MetricsReport evaluate_scores(std::span<const int> y, std::span<const double> scores, double threshold = 0.5,
                              std::string positive = "1");

// Fractions are averaged across reports; the confusion matrix is pooled.
MetricsReport average_reports(std::span<const MetricsReport> reports);

double metric_value(const MetricsReport& report, std::string_view name);

double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> r;
  std::vector<std::string> constant_columns;
};

// Pairwise Pearson correlation over the columns of the selected markers
// (every indicator column of a categorical marker enters separately). An
// empty selection uses every column.
CorrelationMatrix correlation_matrix(const DesignMatrix& matrix, std::span<const std::string> markers = {});

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RocCurve& curve);
RocCurve roc_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const CorrelationMatrix& m);

std::string roc_csv(const RocCurve& curve);
std::string metrics_csv(std::span<const MetricsReport> reports);

}  // namespace markerlab
