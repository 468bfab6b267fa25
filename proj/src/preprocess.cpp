#include "markerlab/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

constexpr std::size_t kMaxQuantiles = 1000;
constexpr double kNormalClip = 1e-7;

std::vector<std::string> with_missing_category(std::vector<std::string> categories) {
  if (std::find(categories.begin(), categories.end(), kMissingCategory) == categories.end()) {
    categories.emplace_back(kMissingCategory);
    std::sort(categories.begin(), categories.end());
  }
  return categories;
}

double rank_position(const std::vector<double>& q, double v) {
  const std::size_t n = q.size();
  if (n == 1) return 0.5;
  if (v < q.front()) return 0.0;
  if (v > q.back()) return 1.0;
  const double step = 1.0 / static_cast<double>(n - 1);
  const auto lo = std::lower_bound(q.begin(), q.end(), v);
  const auto hi = std::upper_bound(q.begin(), q.end(), v);
  if (lo != hi) {
    // v hits one or more equal quantiles: midpoint of their reference span.
    const auto a = static_cast<double>(lo - q.begin());
    const auto b = static_cast<double>(hi - q.begin() - 1);
    return 0.5 * (a + b) * step;
  }
  const auto k = static_cast<std::size_t>(hi - q.begin() - 1);
  const double frac = (v - q[k]) / (q[k + 1] - q[k]);
  return (static_cast<double>(k) + frac) * step;
}

}  // namespace

DesignMatrix::DesignMatrix(std::vector<DesignColumn> columns, std::size_t rows, std::vector<double> values,
                           std::optional<double> sentinel)
    : columns_(std::move(columns)), rows_(rows), values_(std::move(values)), sentinel_(sentinel) {
  if (values_.size() != rows_ * columns_.size()) fail(ErrorKind::kData, "design matrix shape mismatch");
  for (double v : values_) {
    if (!std::isfinite(v)) fail(ErrorKind::kData, "design matrix contains a non-finite value");
  }
}

std::vector<std::string> DesignMatrix::labels() const {
  std::vector<std::string> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) out.push_back(c.label);
  return out;
}

std::vector<std::string> DesignMatrix::markers() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) {
    if (out.empty() || out.back() != c.marker) out.push_back(c.marker);
  }
  return out;
}

std::vector<std::size_t> DesignMatrix::marker_columns(std::string_view marker) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (columns_[c].marker == marker) out.push_back(c);
  }
  return out;
}

DesignMatrix DesignMatrix::take(std::span<const std::size_t> rows) const {
  std::vector<double> values;
  values.reserve(rows.size() * columns_.size());
  for (auto r : rows) {
    if (r >= rows_) fail(ErrorKind::kUsage, "row index out of range");
    const auto src = row(r);
    values.insert(values.end(), src.begin(), src.end());
  }
  return DesignMatrix(columns_, rows.size(), std::move(values), sentinel_);
}

DropResult drop_sparse_markers(const PatientTable& table, double threshold, std::string_view protected_marker) {
  if (!(threshold > 0.0 && threshold <= 1.0)) fail(ErrorKind::kUsage, "sparse-marker threshold must be in (0,1]");
  DropResult result;
  const auto n = static_cast<double>(table.row_count());
  for (std::size_t c = 0; c < table.column_count(); ++c) {
    const auto& spec = table.schema().markers()[c];
    const double fraction = n > 0 ? static_cast<double>(table.missing_count(c)) / n : 0.0;
    if (fraction <= threshold) continue;
    if (spec.name == protected_marker || spec.role == MarkerRole::kTarget) {
      fail(ErrorKind::kData, fmt::format("target marker '{}' is {:.1f}% missing, above the {:.0f}% threshold", spec.name,
                                         100.0 * fraction, 100.0 * threshold));
    }
    result.dropped.push_back(spec.name);
  }
  result.table = table.without(result.dropped);
  return result;
}

void check_sentinel(const MarkerSchema& schema, const ImputePolicy& policy) {
  if (!std::isfinite(policy.numeric_constant)) fail(ErrorKind::kUsage, "imputation constant must be finite");
  for (const auto& m : schema.markers()) {
    if (m.kind == MarkerKind::kNumeric && m.range->contains(policy.numeric_constant)) {
      fail(ErrorKind::kUsage, fmt::format("imputation constant {} lies inside the range of marker '{}'",
                                          policy.numeric_constant, m.name));
    }
  }
}

PatientTable impute(const PatientTable& table, const ImputePolicy& policy) {
  check_sentinel(table.schema(), policy);
  std::vector<MarkerSpec> specs = table.schema().markers();
  std::vector<std::vector<Cell>> columns(specs.size());
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto src = table.column(c);
    columns[c].assign(src.begin(), src.end());
    if (specs[c].kind == MarkerKind::kCategorical) {
      specs[c].categories = with_missing_category(specs[c].categories);
      for (auto& cell : columns[c]) {
        if (is_missing(cell)) cell = std::string(kMissingCategory);
      }
    } else {
      for (auto& cell : columns[c]) {
        if (is_missing(cell)) cell = policy.numeric_constant;
      }
    }
  }
  return PatientTable(MarkerSchema(std::move(specs), table.schema().version(), table.schema().provenance()),
                      std::move(columns));
}

DesignMatrix encode(const PatientTable& table, std::optional<double> sentinel) {
  std::vector<DesignColumn> columns;
  const auto& specs = table.schema().markers();
  for (const auto& m : specs) {
    if (m.kind == MarkerKind::kNumeric) {
      columns.push_back({m.name, m.name, ColumnKind::kNumeric});
    } else {
      for (const auto& cat : m.categories) columns.push_back({m.name, m.name + "=" + cat, ColumnKind::kIndicator});
    }
  }
  const std::size_t n = table.row_count();
  const std::size_t d = columns.size();
  std::vector<double> values(n * d, 0.0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto& m = specs[c];
    const auto col = table.column(c);
    if (m.kind == MarkerKind::kNumeric) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto* v = std::get_if<double>(&col[r]);
        if (v == nullptr) fail(ErrorKind::kData, fmt::format("encode: missing cell in '{}' row {}; impute first", m.name, r));
        values[r * d + offset] = *v;
      }
      offset += 1;
    } else {
      for (std::size_t r = 0; r < n; ++r) {
        const auto* s = std::get_if<std::string>(&col[r]);
        if (s == nullptr) fail(ErrorKind::kData, fmt::format("encode: missing cell in '{}' row {}; impute first", m.name, r));
        auto it = std::lower_bound(m.categories.begin(), m.categories.end(), *s);
        if (it == m.categories.end() || *it != *s) {
          it = std::lower_bound(m.categories.begin(), m.categories.end(), kMissingCategory);
          if (it == m.categories.end() || *it != kMissingCategory) {
            fail(ErrorKind::kData, fmt::format("encode: unknown category '{}' in '{}'", *s, m.name));
          }
        }
        values[r * d + offset + static_cast<std::size_t>(it - m.categories.begin())] = 1.0;
      }
      offset += m.categories.size();
    }
  }
  return DesignMatrix(std::move(columns), n, std::move(values), sentinel);
}

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kIdentity:
      return "identity";
    case TransformKind::kMinMax:
      return "minmax";
    case TransformKind::kRankUniform:
      return "rank_uniform";
    case TransformKind::kRankNormal:
      return "rank_normal";
  }
  return "identity";
}

TransformKind parse_transform(std::string_view text) {
  for (auto k : {TransformKind::kIdentity, TransformKind::kMinMax, TransformKind::kRankUniform, TransformKind::kRankNormal}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::kUsage, fmt::format("unknown numeric transform '{}'", text));
}

TransformParams fit_transform(const DesignMatrix& matrix, TransformKind kind, std::span<const std::size_t> train_rows) {
  TransformParams params;
  params.kind = kind;
  params.columns.resize(matrix.cols());
  if (kind == TransformKind::kIdentity) return params;
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    if (matrix.columns()[c].kind != ColumnKind::kNumeric) continue;
    std::vector<double> values;
    values.reserve(train_rows.size());
    for (auto r : train_rows) {
      const double v = matrix.at(r, c);
      if (!matrix.is_sentinel(v)) values.push_back(v);
    }
    auto& col = params.columns[c];
    col.active = true;
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    col.min = values.front();
    col.max = values.back();
    if (kind == TransformKind::kMinMax) continue;
    const std::size_t q = std::min(kMaxQuantiles, values.size());
    col.quantiles.resize(q);
    for (std::size_t k = 0; k < q; ++k) {
      // Linear interpolation between order statistics.
      const double pos = q == 1 ? 0.0 : static_cast<double>(k) * static_cast<double>(values.size() - 1) / static_cast<double>(q - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, values.size() - 1);
      col.quantiles[k] = values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    }
  }
  return params;
}

DesignMatrix apply_transform(const DesignMatrix& matrix, const TransformParams& params) {
  if (params.kind == TransformKind::kIdentity) return matrix;
  if (params.columns.size() != matrix.cols()) fail(ErrorKind::kUsage, "transform parameters do not match matrix columns");
  DesignMatrix out = matrix;
  const boost::math::normal_distribution<double> standard;
  for (std::size_t c = 0; c < out.cols(); ++c) {
    const auto& col = params.columns[c];
    if (!col.active) continue;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double& v = out.at(r, c);
      if (out.is_sentinel(v)) continue;
      if (params.kind == TransformKind::kMinMax) {
        // Constant training column maps to 0.
        v = col.max > col.min ? std::clamp((v - col.min) / (col.max - col.min), 0.0, 1.0) : 0.0;
      } else if (col.quantiles.empty()) {
        v = params.kind == TransformKind::kRankUniform ? 0.5 : 0.0;
      } else {
        const double u = rank_position(col.quantiles, v);
        v = params.kind == TransformKind::kRankUniform
                ? u
                : boost::math::quantile(standard, std::clamp(u, kNormalClip, 1.0 - kNormalClip));
      }
    }
  }
  return out;
}

DesignMatrix transform_numeric(const DesignMatrix& matrix, TransformKind kind) {
  std::vector<std::size_t> all(matrix.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return apply_transform(matrix, fit_transform(matrix, kind, all));
}

Preprocessor Preprocessor::fit(const PatientTable& features, std::span<const std::size_t> train_rows,
                               const ImputePolicy& policy, TransformKind transform) {
  check_sentinel(features.schema(), policy);
  Preprocessor p;
  p.policy_ = policy;
  for (const auto& m : features.schema().markers()) {
    Marker marker{m.name, m.kind, {}};
    if (m.kind == MarkerKind::kCategorical) marker.categories = with_missing_category(m.categories);
    p.markers_.push_back(std::move(marker));
  }
  p.transform_.kind = TransformKind::kIdentity;
  const DesignMatrix encoded = p.apply(features);
  p.transform_ = fit_transform(encoded, transform, train_rows);
  return p;
}

std::vector<DesignColumn> Preprocessor::columns() const {
  std::vector<DesignColumn> out;
  for (const auto& m : markers_) {
    if (m.kind == MarkerKind::kNumeric) {
      out.push_back({m.name, m.name, ColumnKind::kNumeric});
    } else {
      for (const auto& cat : m.categories) out.push_back({m.name, m.name + "=" + cat, ColumnKind::kIndicator});
    }
  }
  return out;
}

DesignMatrix Preprocessor::apply(const PatientTable& table) const {
  std::vector<DesignColumn> columns = this->columns();
  const std::size_t n = table.row_count();
  const std::size_t d = columns.size();
  std::vector<double> values(n * d, 0.0);
  std::size_t offset = 0;
  for (const auto& m : markers_) {
    const auto idx = table.schema().find(m.name);
    if (!idx) fail(ErrorKind::kData, fmt::format("input table lacks model marker '{}'", m.name));
    const auto col = table.column(*idx);
    if (table.schema().markers()[*idx].kind != m.kind) {
      fail(ErrorKind::kData, fmt::format("marker '{}' changed kind since fitting", m.name));
    }
    if (m.kind == MarkerKind::kNumeric) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto* v = std::get_if<double>(&col[r]);
        values[r * d + offset] = v ? *v : policy_.numeric_constant;
      }
      offset += 1;
    } else {
      const auto missing = static_cast<std::size_t>(
          std::lower_bound(m.categories.begin(), m.categories.end(), kMissingCategory) - m.categories.begin());
      for (std::size_t r = 0; r < n; ++r) {
        std::size_t slot = missing;
        if (const auto* s = std::get_if<std::string>(&col[r])) {
          const auto it = std::lower_bound(m.categories.begin(), m.categories.end(), *s);
          if (it != m.categories.end() && *it == *s) slot = static_cast<std::size_t>(it - m.categories.begin());
        }
        values[r * d + offset + slot] = 1.0;
      }
      offset += m.categories.size();
    }
  }
  DesignMatrix encoded(std::move(columns), n, std::move(values), policy_.numeric_constant);
  return apply_transform(encoded, transform_);
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : markers_) {
    nlohmann::json entry{{"name", m.name}, {"kind", markerlab::to_string(m.kind)}};
    if (m.kind == MarkerKind::kCategorical) entry["categories"] = m.categories;
    markers.push_back(std::move(entry));
  }
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& c : transform_.columns) {
    columns.push_back({{"active", c.active}, {"min", c.min}, {"max", c.max}, {"quantiles", c.quantiles}});
  }
  return {{"markers", std::move(markers)},
          {"numeric_constant", policy_.numeric_constant},
          {"transform", {{"kind", markerlab::to_string(transform_.kind)}, {"columns", std::move(columns)}}}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& doc) {
  Preprocessor p;
  for (const auto& entry : doc.at("markers")) {
    Marker m;
    m.name = entry.at("name").get<std::string>();
    const auto kind = entry.at("kind").get<std::string>();
    m.kind = kind == "numeric" ? MarkerKind::kNumeric : MarkerKind::kCategorical;
    if (entry.contains("categories")) m.categories = entry.at("categories").get<std::vector<std::string>>();
    p.markers_.push_back(std::move(m));
  }
  p.policy_.numeric_constant = doc.at("numeric_constant").get<double>();
  const auto& t = doc.at("transform");
  p.transform_.kind = parse_transform(t.at("kind").get<std::string>());
  for (const auto& c : t.at("columns")) {
    p.transform_.columns.push_back({c.at("active").get<bool>(), c.at("min").get<double>(), c.at("max").get<double>(),
                                    c.at("quantiles").get<std::vector<double>>()});
  }
  return p;
}

Split split(std::size_t n_rows, std::span<const int> labels, const SplitSpec& spec) {
  if (n_rows < 20) fail(ErrorKind::kData, fmt::format("split needs at least 20 rows, got {}", n_rows));
  if (labels.size() != n_rows) fail(ErrorKind::kUsage, "split: label count does not match row count");
  if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    fail(ErrorKind::kUsage, "split fractions must be positive and sum to 1");
  }
  std::vector<std::vector<std::size_t>> strata(spec.stratified ? 2 : 1);
  for (std::size_t r = 0; r < n_rows; ++r) strata[spec.stratified ? (labels[r] != 0 ? 1 : 0) : 0].push_back(r);
  for (std::size_t s = 0; s < strata.size(); ++s) {
    if (strata[s].size() < 3) fail(ErrorKind::kData, fmt::format("stratum {} has only {} rows (need 3)", s, strata[s].size()));
  }

  // Largest-remainder allocation: partition totals are round(f * n) exactly,
  // per-stratum sizes within one row of f * n_stratum. The leftover goes to train.
  auto allocate = [&](double fraction) {
    const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_rows)));
    std::vector<std::size_t> count(strata.size());
    std::vector<double> remainder(strata.size());
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < strata.size(); ++s) {
      const double quota = fraction * static_cast<double>(strata[s].size());
      count[s] = static_cast<std::size_t>(std::floor(quota));
      remainder[s] = quota - static_cast<double>(count[s]);
      assigned += count[s];
    }
    std::vector<std::size_t> order(strata.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) ++count[order[i]];
    return count;
  };
  const auto test_counts = allocate(spec.test);
  const auto val_counts = allocate(spec.val);

  Split out;
  Rng rng(spec.seed);
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto rows = strata[s];
    rng.shuffle(rows);
    if (test_counts[s] + val_counts[s] > rows.size()) fail(ErrorKind::kData, "split: stratum too small for requested fractions");
    const auto test_end = rows.begin() + static_cast<std::ptrdiff_t>(test_counts[s]);
    const auto val_end = test_end + static_cast<std::ptrdiff_t>(val_counts[s]);
    out.test.insert(out.test.end(), rows.begin(), test_end);
    out.val.insert(out.val.end(), test_end, val_end);
    out.train.insert(out.train.end(), val_end, rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<Split> mc_splits(std::size_t n_rows, std::span<const int> labels, int k, std::uint64_t base_seed, SplitSpec spec) {
  if (k < 1) fail(ErrorKind::kUsage, "Monte Carlo split count must be >= 1");
  std::vector<Split> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    spec.seed = base_seed + static_cast<std::uint64_t>(i);
    out.push_back(split(n_rows, labels, spec));
  }
  return out;
}

nlohmann::json to_json(const Split& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

Split split_from_json(const nlohmann::json& doc) {
  return {doc.at("train").get<std::vector<std::size_t>>(), doc.at("val").get<std::vector<std::size_t>>(),
          doc.at("test").get<std::vector<std::size_t>>()};
}

std::vector<std::size_t> rebalance(std::span<const std::size_t> train_rows, std::span<const int> labels, double ratio,
                                   std::uint64_t seed) {
  if (!(ratio > 0.0)) fail(ErrorKind::kUsage, "rebalance ratio must be positive");
  std::vector<std::size_t> positives;
  std::size_t negatives = 0;
  for (auto r : train_rows) {
    if (labels[r] != 0) {
      positives.push_back(r);
    } else {
      ++negatives;
    }
  }
  if (positives.empty() || negatives == 0) fail(ErrorKind::kData, "rebalance needs both classes in the training rows");
  const auto target = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(negatives) - 1e-9));
  std::vector<std::size_t> out(train_rows.begin(), train_rows.end());
  Rng rng(seed);
  for (std::size_t have = positives.size(); have < target; ++have) {
    out.push_back(positives[rng.below(positives.size())]);
  }
  return out;
}

}  // namespace markerlab
