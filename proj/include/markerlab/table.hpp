#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "markerlab/schema.hpp"

namespace markerlab {

struct Missing {
  bool operator==(const Missing&) const = default;
};

// A table cell: MISSING, a finite number (numeric markers) or a category label.
using Cell = std::variant<Missing, double, std::string>;

inline bool is_missing(const Cell& c) { return std::holds_alternative<Missing>(c); }

// Immutable column-major patient records bound to a schema. Column i holds
// the cells of schema marker i.
class PatientTable {
 public:
  PatientTable() = default;
  PatientTable(MarkerSchema schema, std::vector<std::vector<Cell>> columns);

  const MarkerSchema& schema() const { return schema_; }
  std::size_t row_count() const { return rows_; }
  std::size_t column_count() const { return columns_.size(); }

  const Cell& cell(std::size_t row, std::size_t col) const { return columns_[col][row]; }
  std::span<const Cell> column(std::size_t col) const { return columns_[col]; }
  std::span<const Cell> column(std::string_view marker) const;

  std::size_t missing_count(std::size_t col) const;
  std::size_t missing_count(std::string_view marker) const;

  PatientTable select_rows(std::span<const std::size_t> rows) const;
  // Removes the named markers; unknown names are ignored.
  PatientTable without(std::span<const std::string> markers) const;
  // Copy with one column replaced (schema entry replaced as well).
  PatientTable with_column(std::size_t col, MarkerSpec spec, std::vector<Cell> cells) const;

  std::string fingerprint() const;

  bool operator==(const PatientTable&) const = default;

 private:
  MarkerSchema schema_;
  std::vector<std::vector<Cell>> columns_;
  std::size_t rows_ = 0;
};

struct IngestOptions {
  bool strict = false;
  char delimiter = ',';
};

struct IngestResult {
  PatientTable table;
  std::vector<std::string> warnings;
};

IngestResult ingest_table(const std::filesystem::path& path, const MarkerSchema& schema,
                          const IngestOptions& options = {});
IngestResult ingest_csv(std::istream& in, const MarkerSchema& schema, const IngestOptions& options = {});

// Export in the ingest format: header of source column names, empty = missing.
void write_table(const PatientTable& table, std::ostream& out);
void write_table(const PatientTable& table, const std::filesystem::path& path);

struct RangeViolation {
  std::string marker;
  std::size_t row = 0;
  double value = 0.0;
  bool operator==(const RangeViolation&) const = default;
};

struct ValidationReport {
  std::vector<RangeViolation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_ranges(const PatientTable& table);
nlohmann::json to_json(const ValidationReport& report);

struct TargetSelection {
  PatientTable features;
  std::vector<int> labels;  // 1 = positive class
  std::string target;
  std::string positive_class;
  std::size_t dropped_missing_target = 0;
  std::vector<std::string> eliminated;  // markers removed besides the target
};

// Default positive class for the cohort targets: "discharged" for "last
// status", "true" for "AKI during hospitalization". Empty when unknown.
std::string default_positive_class(std::string_view target);

// Splits off a binary target. Rows with a missing target are dropped;
// clinician-excluded markers and task-specific eliminations are removed from
// the features. An empty positive_class selects the default convention.
TargetSelection select_target(const PatientTable& table, std::string_view target_name,
                              std::string_view positive_class = {});

}  // namespace markerlab
