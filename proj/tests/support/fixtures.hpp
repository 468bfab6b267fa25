#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "markerlab/synthetic.hpp"
#include "markerlab/preprocess.hpp"
#include "markerlab/search.hpp"

namespace fixtures {

// Numeric matrix with columns c0..c{d-1} and the default sentinel.
inline markerlab::DesignMatrix matrix(const std::vector<std::vector<double>>& rows,
                                      std::optional<double> sentinel = -999.0) {
  const std::size_t d = rows.empty() ? 0 : rows[0].size();
  std::vector<markerlab::DesignColumn> cols;
  for (std::size_t f = 0; f < d; ++f) cols.push_back({fmt::format("c{}", f), fmt::format("c{}", f), markerlab::ColumnKind::kNumeric});
  std::vector<double> values;
  for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
  return markerlab::DesignMatrix(cols, rows.size(), values, sentinel);
}

// The planted-signal cohort: one informative marker (effect 2.5), 10 numeric
// and 9 categorical noise markers, 20% positives, 10% missing, seed 7.
inline markerlab::SyntheticSpec planted(bool with_leakage = false) {
  markerlab::SyntheticSpec spec;
  spec.n_rows = 2000;
  spec.informative = {{"signal", 2.5}};
  spec.positive_rate = 0.2;
  spec.missing_rate = 0.1;
  spec.seed = 7;
  if (with_leakage) spec.leakage = markerlab::LeakageSpec{"length of stay", 0.95};
  return spec;
}

// Protocol for the synthetic target with the positive class "true".
inline markerlab::ProtocolConfig synthetic_protocol(int k = 5) {
  markerlab::ProtocolConfig config;
  config.target = "outcome";
  config.positive_class = std::string(markerlab::kSyntheticPositive);
  config.k = k;
  return config;
}

struct Encoded {
  markerlab::DesignMatrix x;
  std::vector<int> y;
};

// All rows imputed and one-hot encoded, no split.
inline Encoded encoded(const markerlab::SyntheticSpec& spec) {
  const auto table = markerlab::generate_synthetic(spec);
  auto sel = markerlab::select_target(table, spec.target, markerlab::kSyntheticPositive);
  return {markerlab::encode(markerlab::impute(sel.features)), std::move(sel.labels)};
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("markerlab-test-{}-{}-{}", ::getpid(), counter++, std::random_device{}());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
