#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "markerlab/table.hpp"

namespace markerlab {

struct PlantedEffect {
  std::string name;
  double effect = 0.0;  // log-odds shift per unit of the marker
};

struct LeakageSpec {
  std::string name;
  double determinism = 1.0;  // probability the marker equals the label
};

// Planted-signal cohort stand-in. Numeric markers are drawn uniformly from
// [-numeric_half_width, numeric_half_width]; the label's log-odds is an
// intercept (solved so the expected positive fraction is positive_rate) plus
// effect * value for every informative marker.
struct SyntheticSpec {
  std::size_t n_rows = 2000;
  std::size_t n_noise_numeric = 10;
  std::size_t n_noise_categorical = 9;
  std::vector<PlantedEffect> informative;
  std::optional<LeakageSpec> leakage;
  double positive_rate = 0.2;
  double missing_rate = 0.1;
  std::uint64_t seed = 7;
  double numeric_half_width = 12.0;
  std::string target = "outcome";
};

inline constexpr std::string_view kSyntheticPositive = "true";

// Returns the table (target column last, labels "false"/"true") and the schema
// it is bound to.
PatientTable generate_synthetic(const SyntheticSpec& spec);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);

}  // namespace markerlab
