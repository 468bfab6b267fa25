#include "markerlab/synthetic.hpp"

#include <set>

#include <fmt/format.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

// Stream ids; every column owns its value and missingness streams so adding
// or removing one column never perturbs the others.
constexpr std::uint64_t kLabelStream = 1;
constexpr std::uint64_t kLeakageStream = 2;
constexpr std::uint64_t kInformativeStream = 100;
constexpr std::uint64_t kNoiseNumericStream = 1000;
constexpr std::uint64_t kNoiseCategoricalStream = 2000;
constexpr std::uint64_t kMissingStream = 10000;

const std::vector<std::string> kNoiseCategories = {"a", "b", "c"};
const std::vector<std::string> kBinaryCategories = {"false", "true"};

double solve_intercept(const std::vector<double>& shift, double rate) {
  double lo = -60.0;
  double hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double s : shift) mean += sigmoid(mid + s);
    mean /= static_cast<double>(shift.size());
    (mean < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

PatientTable generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_rows == 0) fail(ErrorKind::kUsage, "synthetic n_rows must be positive");
  if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0)) fail(ErrorKind::kUsage, "positive_rate must be in (0,1)");
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) fail(ErrorKind::kUsage, "missing_rate must be in [0,1)");
  if (!(spec.numeric_half_width > 0.0)) fail(ErrorKind::kUsage, "numeric_half_width must be positive");
  std::set<std::string> names{spec.target};
  for (const auto& e : spec.informative) {
    if (e.name == spec.target) fail(ErrorKind::kUsage, fmt::format("informative marker '{}' collides with the target", e.name));
    if (!names.insert(e.name).second) fail(ErrorKind::kUsage, fmt::format("duplicate synthetic marker '{}'", e.name));
  }
  if (spec.leakage) {
    if (spec.leakage->name == spec.target) fail(ErrorKind::kUsage, "leakage marker collides with the target");
    if (!names.insert(spec.leakage->name).second) fail(ErrorKind::kUsage, "duplicate synthetic marker name");
    if (!(spec.leakage->determinism >= 0.0 && spec.leakage->determinism <= 1.0)) {
      fail(ErrorKind::kUsage, "leakage determinism must be in [0,1]");
    }
  }

  const std::size_t n = spec.n_rows;
  const double w = spec.numeric_half_width;
  std::vector<MarkerSpec> markers;
  std::vector<std::vector<Cell>> columns;
  std::vector<std::uint64_t> missing_streams;

  auto add_numeric = [&](std::string name, std::uint64_t stream) {
    Rng rng(mix_seed(spec.seed, stream));
    std::vector<Cell> cells;
    cells.reserve(n);
    for (std::size_t r = 0; r < n; ++r) cells.emplace_back(rng.uniform(-w, w));
    MarkerSpec m;
    m.name = std::move(name);
    m.kind = MarkerKind::kNumeric;
    m.range = NumericRange{-w, w};
    markers.push_back(std::move(m));
    columns.push_back(std::move(cells));
    missing_streams.push_back(kMissingStream + stream);
  };

  std::vector<double> shift(n, 0.0);
  for (std::size_t j = 0; j < spec.informative.size(); ++j) {
    add_numeric(spec.informative[j].name, kInformativeStream + j);
    const auto& col = columns.back();
    for (std::size_t r = 0; r < n; ++r) shift[r] += spec.informative[j].effect * std::get<double>(col[r]);
  }
  for (std::size_t j = 0; j < spec.n_noise_numeric; ++j) {
    add_numeric(fmt::format("noise_num_{:02}", j + 1), kNoiseNumericStream + j);
  }
  for (std::size_t j = 0; j < spec.n_noise_categorical; ++j) {
    Rng rng(mix_seed(spec.seed, kNoiseCategoricalStream + j));
    std::vector<Cell> cells;
    cells.reserve(n);
    for (std::size_t r = 0; r < n; ++r) cells.emplace_back(kNoiseCategories[rng.below(kNoiseCategories.size())]);
    MarkerSpec m;
    m.name = fmt::format("noise_cat_{:02}", j + 1);
    m.kind = MarkerKind::kCategorical;
    m.categories = kNoiseCategories;
    markers.push_back(std::move(m));
    columns.push_back(std::move(cells));
    missing_streams.push_back(kMissingStream + kNoiseCategoricalStream + j);
  }

  const double intercept = solve_intercept(shift, spec.positive_rate);
  std::vector<int> labels(n);
  {
    Rng rng(mix_seed(spec.seed, kLabelStream));
    for (std::size_t r = 0; r < n; ++r) labels[r] = rng.bernoulli(sigmoid(intercept + shift[r])) ? 1 : 0;
  }

  if (spec.leakage) {
    Rng rng(mix_seed(spec.seed, kLeakageStream));
    std::vector<Cell> cells;
    cells.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      const bool agree = rng.uniform() < spec.leakage->determinism;
      const int value = agree ? labels[r] : 1 - labels[r];
      cells.emplace_back(kBinaryCategories[value]);
    }
    MarkerSpec m;
    m.name = spec.leakage->name;
    m.kind = MarkerKind::kCategorical;
    m.categories = kBinaryCategories;
    markers.push_back(std::move(m));
    columns.push_back(std::move(cells));
    missing_streams.push_back(kMissingStream + kLeakageStream);
  }

  if (spec.missing_rate > 0.0) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      Rng rng(mix_seed(spec.seed, missing_streams[c]));
      for (auto& cell : columns[c]) {
        if (rng.bernoulli(spec.missing_rate)) cell = Missing{};
      }
    }
  }

  {
    std::vector<Cell> cells;
    cells.reserve(n);
    for (int y : labels) cells.emplace_back(kBinaryCategories[y]);
    MarkerSpec m;
    m.name = spec.target;
    m.kind = MarkerKind::kCategorical;
    m.categories = kBinaryCategories;
    m.role = MarkerRole::kTarget;
    markers.push_back(std::move(m));
    columns.push_back(std::move(cells));
  }

  MarkerSchema schema(std::move(markers), fmt::format("synthetic-seed-{}", spec.seed),
                      fmt::format("planted-signal synthetic cohort, intercept {}", intercept));
  return PatientTable(std::move(schema), std::move(columns));
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json informative = nlohmann::json::array();
  for (const auto& e : spec.informative) informative.push_back({{"name", e.name}, {"effect", e.effect}});
  nlohmann::json doc{{"n_rows", spec.n_rows},
                     {"n_noise_numeric", spec.n_noise_numeric},
                     {"n_noise_categorical", spec.n_noise_categorical},
                     {"informative", std::move(informative)},
                     {"positive_rate", spec.positive_rate},
                     {"missing_rate", spec.missing_rate},
                     {"seed", spec.seed},
                     {"numeric_half_width", spec.numeric_half_width},
                     {"target", spec.target}};
  if (spec.leakage) doc["leakage"] = {{"name", spec.leakage->name}, {"determinism", spec.leakage->determinism}};
  return doc;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc) {
  SyntheticSpec spec;
  try {
    spec.n_rows = doc.value("n_rows", spec.n_rows);
    spec.n_noise_numeric = doc.value("n_noise_numeric", spec.n_noise_numeric);
    spec.n_noise_categorical = doc.value("n_noise_categorical", spec.n_noise_categorical);
    if (doc.contains("informative")) {
      for (const auto& e : doc.at("informative")) spec.informative.push_back({e.at("name"), e.at("effect")});
    }
    if (doc.contains("leakage")) {
      spec.leakage = LeakageSpec{doc["leakage"].at("name"), doc["leakage"].value("determinism", 1.0)};
    }
    spec.positive_rate = doc.value("positive_rate", spec.positive_rate);
    spec.missing_rate = doc.value("missing_rate", spec.missing_rate);
    spec.seed = doc.value("seed", spec.seed);
    spec.numeric_half_width = doc.value("numeric_half_width", spec.numeric_half_width);
    spec.target = doc.value("target", spec.target);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed synthetic spec: {}", e.what()));
  }
  return spec;
}

}  // namespace markerlab
