#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "markerlab/table.hpp"

namespace markerlab {

enum class ColumnKind { kNumeric, kIndicator };

struct DesignColumn {
  std::string marker;  // source marker
  std::string label;   // "<marker>" or "<marker>=<category>"
  ColumnKind kind = ColumnKind::kNumeric;
  bool operator==(const DesignColumn&) const = default;
};

// Dense row-major numeric matrix produced by encode(). Numeric columns may
// hold the imputation sentinel; every cell is finite.
class DesignMatrix {
 public:
  DesignMatrix() = default;
  DesignMatrix(std::vector<DesignColumn> columns, std::size_t rows, std::vector<double> values,
               std::optional<double> sentinel);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<DesignColumn>& columns() const { return columns_; }
  std::optional<double> sentinel() const { return sentinel_; }

  double at(std::size_t r, std::size_t c) const { return values_[r * columns_.size() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * columns_.size() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * columns_.size(), columns_.size()};
  }
  const std::vector<double>& values() const { return values_; }

  std::vector<std::string> labels() const;
  // Source markers in column order, without repeats.
  std::vector<std::string> markers() const;
  std::vector<std::size_t> marker_columns(std::string_view marker) const;
  bool is_sentinel(double v) const { return sentinel_ && v == *sentinel_; }

  // Row subset; repeated indices produce repeated rows.
  DesignMatrix take(std::span<const std::size_t> rows) const;

  bool operator==(const DesignMatrix&) const = default;

 private:
  std::vector<DesignColumn> columns_;
  std::size_t rows_ = 0;
  std::vector<double> values_;
  std::optional<double> sentinel_;
};

struct ImputePolicy {
  double numeric_constant = -999.0;  // categorical cells always use kMissingCategory
  bool operator==(const ImputePolicy&) const = default;
};

struct DropResult {
  PatientTable table;
  std::vector<std::string> dropped;
};

// Drops markers whose missing fraction is strictly greater than threshold.
// The protected marker (and any schema target) is never dropped; exceeding the
// threshold there is an error.
DropResult drop_sparse_markers(const PatientTable& table, double threshold = 0.75,
                               std::string_view protected_marker = {});

// Throws if the sentinel falls inside a declared numeric range.
void check_sentinel(const MarkerSchema& schema, const ImputePolicy& policy);

PatientTable impute(const PatientTable& table, const ImputePolicy& policy = {});

// One-hot encoding of a fully imputed table.
DesignMatrix encode(const PatientTable& table, std::optional<double> sentinel = -999.0);

enum class TransformKind { kIdentity, kMinMax, kRankUniform, kRankNormal };

std::string_view to_string(TransformKind kind);
TransformKind parse_transform(std::string_view text);

// Per-column numeric transform parameters, fitted on training rows only.
// Indicator columns and sentinel cells pass through untouched.
struct TransformParams {
  TransformKind kind = TransformKind::kIdentity;
  struct Column {
    bool active = false;
    double min = 0.0;
    double max = 0.0;
    std::vector<double> quantiles;
    bool operator==(const Column&) const = default;
  };
  std::vector<Column> columns;
  bool operator==(const TransformParams&) const = default;
};

TransformParams fit_transform(const DesignMatrix& matrix, TransformKind kind, std::span<const std::size_t> train_rows);
DesignMatrix apply_transform(const DesignMatrix& matrix, const TransformParams& params);
// Convenience: fit on all rows and apply.
DesignMatrix transform_numeric(const DesignMatrix& matrix, TransformKind kind);

// Fitted preprocessing replayed at inference: marker layout with category sets,
// imputation sentinel and numeric transform.
class Preprocessor {
 public:
  struct Marker {
    std::string name;
    MarkerKind kind = MarkerKind::kNumeric;
    std::vector<std::string> categories;  // includes kMissingCategory
    bool operator==(const Marker&) const = default;
  };

  static Preprocessor fit(const PatientTable& features, std::span<const std::size_t> train_rows,
                          const ImputePolicy& policy = {}, TransformKind transform = TransformKind::kIdentity);

  // Imputes and encodes any table carrying the fitted markers (by name).
  // Categories unseen at fit time fall into the missing bucket.
  DesignMatrix apply(const PatientTable& table) const;

  const std::vector<Marker>& markers() const { return markers_; }
  const ImputePolicy& policy() const { return policy_; }
  const TransformParams& transform() const { return transform_; }
  std::vector<DesignColumn> columns() const;

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& doc);

  bool operator==(const Preprocessor&) const = default;

 private:
  std::vector<Marker> markers_;
  ImputePolicy policy_;
  TransformParams transform_;
};

struct SplitSpec {
  double train = 0.75;
  double val = 0.05;
  double test = 0.20;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  bool operator==(const Split&) const = default;
};

Split split(std::size_t n_rows, std::span<const int> labels, const SplitSpec& spec);
// k splits with seeds base_seed + 0 .. k-1.
std::vector<Split> mc_splits(std::size_t n_rows, std::span<const int> labels, int k, std::uint64_t base_seed,
                             SplitSpec spec = {});

nlohmann::json to_json(const Split& s);
Split split_from_json(const nlohmann::json& doc);

// Upsamples positives with replacement until positives >= ratio * negatives.
// Originals come first in their given order, duplicates are appended.
std::vector<std::size_t> rebalance(std::span<const std::size_t> train_rows, std::span<const int> labels,
                                   double ratio, std::uint64_t seed);

}  // namespace markerlab
