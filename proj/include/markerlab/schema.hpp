#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace markerlab {

// Category label assigned to missing categorical cells. Sorts after every
// ASCII label, so it is always the last indicator column of its marker.
inline constexpr std::string_view kMissingCategory = "⟨missing⟩";

enum class MarkerKind { kNumeric, kCategorical };
enum class MarkerRole { kFeature, kTarget, kClinicianExcluded };

struct NumericRange {
  double min = 0.0;
  double max = 0.0;
  bool contains(double v) const { return v >= min && v <= max; }
  bool operator==(const NumericRange&) const = default;
};

struct MarkerSpec {
  std::string name;
  MarkerKind kind = MarkerKind::kNumeric;
  std::optional<NumericRange> range;
  // Sorted, unique.
  std::vector<std::string> categories;
  MarkerRole role = MarkerRole::kFeature;
  // Header of the source column in data files; defaults to `name`. Several
  // markers may share one header, in which case they bind to successive
  // occurrences of that header from left to right.
  std::string column;
  std::string note;

  const std::string& source_column() const { return column.empty() ? name : column; }
  bool has_category(std::string_view label) const;
  bool operator==(const MarkerSpec&) const = default;
};

class MarkerSchema {
 public:
  MarkerSchema() = default;
  MarkerSchema(std::vector<MarkerSpec> markers, std::string version, std::string provenance);

  const std::vector<MarkerSpec>& markers() const { return markers_; }
  const std::string& version() const { return version_; }
  const std::string& provenance() const { return provenance_; }
  std::size_t size() const { return markers_.size(); }

  std::optional<std::size_t> find(std::string_view name) const;
  const MarkerSpec& at(std::string_view name) const;
  std::string fingerprint() const;

  bool operator==(const MarkerSchema&) const = default;

 private:
  void validate() const;

  std::vector<MarkerSpec> markers_;
  std::string version_;
  std::string provenance_;
};

std::string_view to_string(MarkerKind kind);
std::string_view to_string(MarkerRole role);

nlohmann::json schema_to_json(const MarkerSchema& schema);
MarkerSchema schema_from_json(const nlohmann::json& doc);
MarkerSchema load_schema(const std::filesystem::path& path);
void save_schema(const MarkerSchema& schema, const std::filesystem::path& path);

// Marker catalogue of the COVID-19 biochemistry cohort: the published numeric
// markers with their observed ranges and the categorical clinical markers.
MarkerSchema builtin_schema();

// Accepts "builtin" or a path to a schema document.
MarkerSchema resolve_schema(std::string_view ref);

}  // namespace markerlab
