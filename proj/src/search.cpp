#include "markerlab/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

constexpr std::uint64_t kRebalanceStream = 0x5eba1a;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

Task parse_task(std::string_view text) {
  const auto t = lower(text);
  if (t == "survival") return Task::kSurvival;
  if (t == "aki") return Task::kAki;
  fail(ErrorKind::kUsage, fmt::format("unknown task '{}' (survival, aki)", text));
}

std::string_view to_string(Task task) { return task == Task::kSurvival ? "survival" : "aki"; }

std::string target_for(Task task) { return task == Task::kSurvival ? "last status" : "AKI during hospitalization"; }

nlohmann::json to_json(const ProtocolConfig& c) {
  return {{"target", c.target},
          {"positive_class", c.positive_class},
          {"exclusions", c.exclusions},
          {"k", c.k},
          {"base_seed", c.base_seed},
          {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}, {"stratified", c.split.stratified}}},
          {"rebalance_ratio", c.rebalance_ratio},
          {"threshold", c.threshold},
          {"drop_threshold", c.drop_threshold},
          {"impute_constant", c.impute.numeric_constant},
          {"transform", to_string(c.transform)}};
}

ProtocolConfig protocol_from_json(const nlohmann::json& doc) {
  ProtocolConfig c;
  try {
    c.target = doc.value("target", c.target);
    c.positive_class = doc.value("positive_class", c.positive_class);
    c.exclusions = doc.value("exclusions", c.exclusions);
    c.k = doc.value("k", c.k);
    c.base_seed = doc.value("base_seed", c.base_seed);
    if (doc.contains("split")) {
      const auto& s = doc.at("split");
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test = s.value("test", c.split.test);
      c.split.stratified = s.value("stratified", c.split.stratified);
    }
    c.rebalance_ratio = doc.value("rebalance_ratio", c.rebalance_ratio);
    c.threshold = doc.value("threshold", c.threshold);
    c.drop_threshold = doc.value("drop_threshold", c.drop_threshold);
    c.impute.numeric_constant = doc.value("impute_constant", c.impute.numeric_constant);
    if (doc.contains("transform")) c.transform = parse_transform(doc.at("transform").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed protocol configuration: {}", e.what()));
  }
  if (c.k < 1) fail(ErrorKind::kUsage, "k must be >= 1");
  if (!(c.rebalance_ratio >= 0.0)) fail(ErrorKind::kUsage, "rebalance_ratio must be >= 0");
  return c;
}

PreparedData prepare(const PatientTable& table, const ProtocolConfig& config) {
  if (config.target.empty()) fail(ErrorKind::kUsage, "no target marker configured");
  auto selection = select_target(table, config.target, config.positive_class);
  PreparedData out;
  out.target = selection.target;
  out.positive_class = selection.positive_class;
  out.labels = std::move(selection.labels);
  out.eliminated = std::move(selection.eliminated);
  out.dropped_missing_target = selection.dropped_missing_target;
  for (const auto& m : config.exclusions) {
    if (!selection.features.schema().find(m)) out.unknown_exclusions.push_back(m);
  }
  for (const auto& m : out.unknown_exclusions) {
    spdlog::warn("excluded marker '{}' is not a feature of this table", m);
  }
  auto kept = selection.features.without(config.exclusions);
  auto dropped = drop_sparse_markers(kept, config.drop_threshold);
  out.features = std::move(dropped.table);
  out.dropped_sparse = std::move(dropped.dropped);
  if (out.features.column_count() < 2) {
    fail(ErrorKind::kUsage, fmt::format("only {} feature marker(s) left after exclusions", out.features.column_count()));
  }
  Fingerprint fp;
  fp.add(out.features.fingerprint());
  for (int y : out.labels) fp.add(static_cast<std::uint64_t>(y));
  out.fingerprint = fp.hex();
  return out;
}

PreparedData without_markers(const PreparedData& data, std::span<const std::string> markers) {
  PreparedData out = data;
  out.features = data.features.without(markers);
  if (out.features.column_count() < 2) {
    fail(ErrorKind::kUsage, fmt::format("only {} feature marker(s) left after exclusions", out.features.column_count()));
  }
  Fingerprint fp;
  fp.add(out.features.fingerprint());
  for (int y : out.labels) fp.add(static_cast<std::uint64_t>(y));
  out.fingerprint = fp.hex();
  return out;
}

SplitOutcome run_split(const PreparedData& data, const Split& split, std::size_t split_index, const HyperParams& hp,
                       const ProtocolConfig& config) {
  SplitOutcome out;
  out.split = split;
  const auto pre = Preprocessor::fit(data.features, split.train, config.impute, config.transform);
  const DesignMatrix x = pre.apply(data.features);

  std::vector<std::size_t> train_rows = split.train;
  if (config.rebalance_ratio > 0.0) {
    // Upsample whichever class is the minority in this training split.
    std::size_t pos = 0;
    for (auto r : split.train) pos += data.labels[r] == 1 ? 1 : 0;
    const bool flip = 2 * pos > split.train.size();
    std::vector<int> minority(data.labels.size());
    for (std::size_t i = 0; i < minority.size(); ++i) minority[i] = flip ? 1 - data.labels[i] : data.labels[i];
    train_rows = rebalance(split.train, minority, config.rebalance_ratio,
                           mix_seed(config.base_seed + split_index, kRebalanceStream));
  }
  const DesignMatrix x_train = x.take(train_rows);
  std::vector<int> y_train;
  y_train.reserve(train_rows.size());
  for (auto r : train_rows) y_train.push_back(data.labels[r]);

  out.model = train_model(x_train, y_train, hp);
  out.model.preprocessing = pre;
  out.model.meta.schema_fingerprint = data.features.schema().fingerprint();

  auto score_rows = [&](const std::vector<std::size_t>& rows, DesignMatrix& xs, std::vector<int>& ys) {
    xs = x.take(rows);
    ys.clear();
    for (auto r : rows) ys.push_back(data.labels[r]);
    return predict_proba(out.model, xs);
  };
  const auto val_scores = score_rows(split.val, out.val_x, out.val_y);
  out.val = evaluate_scores(out.val_y, val_scores, config.threshold, data.positive_class);
  DesignMatrix test_x;
  out.test_scores = score_rows(split.test, test_x, out.test_y);
  out.test = evaluate_scores(out.test_y, out.test_scores, config.threshold, data.positive_class);
  return out;
}

Evaluation evaluate(const PreparedData& data, const HyperParams& hp, const ProtocolConfig& config) {
  Evaluation ev;
  const auto splits = mc_splits(data.labels.size(), data.labels, config.k, config.base_seed, config.split);
  std::vector<MetricsReport> val;
  std::vector<MetricsReport> test;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    ev.splits.push_back(run_split(data, splits[i], i, hp, config));
    val.push_back(ev.splits.back().val);
    test.push_back(ev.splits.back().test);
  }
  ev.val = average_reports(val);
  ev.test = average_reports(test);
  return ev;
}

HyperParams preset(std::string_view name, Task task) {
  const bool survival = task == Task::kSurvival;
  HyperParams hp;
  hp.preset = std::string(name);
  if (name == "lgbm-like") {
    hp.family = ModelFamily::kGbdt;
    hp.growth = Growth::kLeafwise;
    hp.learning_rate = survival ? 0.2 : 0.09;
    hp.num_leaves = survival ? 16 : 40;
    hp.max_depth = survival ? 12 : 11;
    hp.l2_lambda = survival ? 4 : 13;
    hp.n_estimators = 100;
    hp.min_child_weight = 1e-3;
  } else if (name == "xgb-like") {
    hp.family = ModelFamily::kGbdt;
    hp.growth = Growth::kDepthwise;
    hp.max_depth = survival ? 9 : 4;
    hp.num_leaves = 1 << hp.max_depth;
    hp.min_child_weight = survival ? 1 : 16;
    hp.min_split_gain = 0;
    hp.n_estimators = survival ? 500 : 1500;
    hp.learning_rate = survival ? 0.01 : 0.09;
    hp.l2_lambda = 1;
  } else if (name == "cat-like") {
    hp.family = ModelFamily::kGbdt;
    hp.growth = Growth::kDepthwise;
    hp.n_estimators = 500;
    hp.learning_rate = 0.01;
    hp.max_depth = survival ? 7 : 10;
    hp.num_leaves = 1 << hp.max_depth;
    hp.l2_lambda = 3;
    hp.min_child_weight = 1;
  } else if (name == "rf") {
    hp.family = ModelFamily::kRandomForest;
    hp.n_estimators = survival ? 1 : 61;
    hp.max_depth = survival ? 7 : 10;
  } else if (name == "logistic") {
    hp.family = ModelFamily::kLogistic;
    hp.l2_lambda = 1;
  } else {
    fail(ErrorKind::kUsage, fmt::format("unknown preset '{}' (lgbm-like, xgb-like, cat-like, rf, logistic)", name));
  }
  return hp;
}

std::vector<std::string> preset_names() { return {"lgbm-like", "xgb-like", "cat-like", "rf", "logistic"}; }

MetricsReport evaluate_preset(const PatientTable& table, const HyperParams& hp, const ProtocolConfig& config) {
  return evaluate(prepare(table, config), hp, config).test;
}

std::size_t HyperGrid::size() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return n;
}

std::vector<HyperParams> HyperGrid::points() const {
  std::vector<HyperParams> out;
  const std::size_t n = size();
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    HyperParams hp = base;
    std::size_t rest = i;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& vals = axes[a].values;
      set_param(hp, axes[a].name, vals[rest % vals.size()]);
      rest /= vals.size();
    }
    out.push_back(hp);
  }
  return out;
}

void set_param(HyperParams& hp, std::string_view name, double value) {
  auto as_int = [&]() {
    if (value != std::round(value)) fail(ErrorKind::kUsage, fmt::format("{} must be an integer, got {}", name, value));
    return static_cast<int>(value);
  };
  if (name == "learning_rate") hp.learning_rate = value;
  else if (name == "l2_lambda") hp.l2_lambda = value;
  else if (name == "min_split_gain") hp.min_split_gain = value;
  else if (name == "max_depth") {
    hp.max_depth = as_int();
    // Depth-bounded growth: the leaf budget follows the depth.
    if (hp.family == ModelFamily::kGbdt && hp.growth == Growth::kDepthwise) hp.num_leaves = 1 << std::min(hp.max_depth, 30);
  } else if (name == "num_leaves") hp.num_leaves = as_int();
  else if (name == "n_estimators") hp.n_estimators = as_int();
  else if (name == "min_child_weight") hp.min_child_weight = value;
  else if (name == "subsample") hp.subsample = value;
  else if (name == "max_features") hp.max_features = as_int();
  else fail(ErrorKind::kUsage, fmt::format("unknown hyperparameter axis '{}'", name));
}

double get_param(const HyperParams& hp, std::string_view name) {
  if (name == "learning_rate") return hp.learning_rate;
  if (name == "l2_lambda") return hp.l2_lambda;
  if (name == "min_split_gain") return hp.min_split_gain;
  if (name == "max_depth") return hp.max_depth;
  if (name == "num_leaves") return hp.num_leaves;
  if (name == "n_estimators") return hp.n_estimators;
  if (name == "min_child_weight") return hp.min_child_weight;
  if (name == "subsample") return hp.subsample;
  if (name == "max_features") return hp.max_features;
  fail(ErrorKind::kUsage, fmt::format("unknown hyperparameter axis '{}'", name));
}

std::vector<double> learning_rate_axis(double lo, double hi, std::span<const double> optima) {
  constexpr int kPoints = 8;
  std::vector<double> axis(kPoints);
  const double step = std::log(hi / lo) / (kPoints - 1);
  for (int i = 0; i < kPoints; ++i) axis[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
  axis.front() = lo;
  axis.back() = hi;
  const auto original = axis;
  for (double opt : optima) {
    if (std::find(axis.begin(), axis.end(), opt) != axis.end()) continue;
    std::size_t best = 1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < original.size(); ++i) {
      const double dist = std::abs(std::log(opt / original[i]));
      if (dist < best_dist - 1e-12) {
        best = i;
        best_dist = dist;
      }
    }
    axis[best] = opt;
  }
  return axis;
}

namespace {

std::vector<double> int_range(int lo, int hi, int step = 1) {
  std::vector<double> out;
  for (int v = lo; v <= hi; v += step) out.push_back(v);
  return out;
}

std::vector<double> estimator_axis(int lo, int hi) {
  std::vector<double> out;
  for (int v : {50, 100, 250, 500, 1000, 1500, 2000}) {
    if (v >= lo && v <= hi) out.push_back(v);
  }
  return out;
}

}  // namespace

HyperGrid builtin_grid(std::string_view name, Task task) {
  HyperGrid g;
  g.preset = std::string(name);
  g.base = preset(name, task);
  if (name == "lgbm-like") {
    const double optima[] = {0.2, 0.09};
    std::vector<double> leaves = {10, 16};
    for (int v = 20; v <= 100; v += 10) leaves.push_back(v);
    g.axes = {{"learning_rate", learning_rate_axis(0.01, 1.0, optima)},
              {"num_leaves", leaves},
              {"max_depth", int_range(3, 16)},
              {"l2_lambda", int_range(1, 15)}};
  } else if (name == "xgb-like") {
    const double optima[] = {0.01, 0.09};
    g.axes = {{"max_depth", int_range(3, 10)},
              {"min_child_weight", int_range(1, 30, 5)},
              {"min_split_gain", int_range(0, 30, 5)},
              {"n_estimators", estimator_axis(50, 2000)},
              {"learning_rate", learning_rate_axis(0.001, 0.1, optima)}};
  } else if (name == "cat-like") {
    const double optima[] = {0.01};
    g.axes = {{"n_estimators", estimator_axis(50, 1000)},
              {"learning_rate", learning_rate_axis(0.001, 0.1, optima)},
              {"max_depth", int_range(1, 10)}};
  } else if (name == "rf") {
    g.axes = {{"n_estimators", int_range(1, 100, 20)}, {"max_depth", int_range(1, 10)}};
  } else if (name == "logistic") {
    g.axes = {{"l2_lambda", {0.01, 0.1, 1, 10, 100}}};
  } else {
    fail(ErrorKind::kUsage, fmt::format("no builtin grid for '{}'", name));
  }
  return g;
}

nlohmann::json to_json(const HyperGrid& grid) {
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : grid.axes) axes.push_back({{"name", a.name}, {"values", a.values}});
  return {{"format", "markerlab.grid"}, {"format_version", 1}, {"preset", grid.preset},
          {"base", to_json(grid.base)},  {"axes", std::move(axes)}};
}

HyperGrid grid_from_json(const nlohmann::json& doc) {
  HyperGrid g;
  try {
    g.preset = doc.value("preset", std::string{});
    g.base = doc.contains("base") ? hyperparams_from_json(doc.at("base")) : HyperParams{};
    for (const auto& a : doc.at("axes")) {
      GridAxis axis{a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()};
      get_param(g.base, axis.name);  // validates the name
      if (axis.values.empty()) fail(ErrorKind::kUsage, fmt::format("grid axis '{}' is empty", axis.name));
      g.axes.push_back(std::move(axis));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed grid document: {}", e.what()));
  }
  return g;
}

GridResult grid_search(const HyperGrid& grid, const PreparedData& data, const ProtocolConfig& config,
                       const GridOptions& options) {
  const std::size_t n = grid.size();
  if (n == 0) fail(ErrorKind::kUsage, "empty hyperparameter grid");
  if (n > options.max_points) {
    fail(ErrorKind::kUsage, fmt::format("grid has {} points, above the budget of {} (full factorial over {} axes); "
                                        "narrow the axes or raise the budget",
                                        n, options.max_points, grid.axes.size()));
  }
  if (n > 64) spdlog::warn("full-factorial grid of {} points", n);
  metric_value(MetricsReport{}, options.objective);  // validates the name

  const auto points = grid.points();
  for (const auto& hp : points) hp.validate();
  const auto splits = mc_splits(data.labels.size(), data.labels, config.k, config.base_seed, config.split);

  std::vector<std::optional<LeaderboardRow>> rows(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        LeaderboardRow row;
        row.point = i;
        row.hyperparams = points[i];
        std::vector<MetricsReport> val;
        std::vector<MetricsReport> test;
        for (std::size_t s = 0; s < splits.size(); ++s) {
          const auto outcome = run_split(data, splits[s], s, points[i], config);
          row.split_objective.push_back(metric_value(outcome.val, options.objective));
          val.push_back(outcome.val);
          test.push_back(outcome.test);
        }
        row.val = average_reports(val);
        row.test = average_reports(test);
        row.objective = metric_value(row.val, options.objective);
        if (std::isnan(row.objective)) fail(ErrorKind::kTraining, "objective undefined on a validation split");
        rows[i] = std::move(row);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  GridResult result;
  result.evaluated = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i]) {
      result.leaderboard.push_back(std::move(*rows[i]));
    } else {
      result.failures.push_back({i, points[i], errors[i]});
    }
  }
  if (result.leaderboard.empty()) {
    std::string log;
    for (const auto& f : result.failures) log += fmt::format("\n  point {}: {}", f.point, f.reason);
    fail(ErrorKind::kTraining, fmt::format("all {} grid points failed:{}", n, log));
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const LeaderboardRow& a, const LeaderboardRow& b) { return a.objective > b.objective; });
  result.best = result.leaderboard.front().hyperparams;
  return result;
}

std::string leaderboard_csv(const HyperGrid& grid, const GridResult& result) {
  std::string out = "rank,point";
  for (const auto& a : grid.axes) out += "," + a.name;
  out += ",objective,val_accuracy,val_precision,val_recall,val_f1,val_auc,test_accuracy,test_precision,test_recall,test_f1,test_auc\n";
  for (std::size_t r = 0; r < result.leaderboard.size(); ++r) {
    const auto& row = result.leaderboard[r];
    out += fmt::format("{},{}", r + 1, row.point);
    for (const auto& a : grid.axes) out += fmt::format(",{}", get_param(row.hyperparams, a.name));
    out += fmt::format(",{},{},{},{},{},{},{},{},{},{},{}\n", row.objective, row.val.accuracy, row.val.precision,
                       row.val.recall, row.val.f1, row.val.auc, row.test.accuracy, row.test.precision, row.test.recall,
                       row.test.f1, row.test.auc);
  }
  return out;
}

nlohmann::json to_json(const GridResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.leaderboard) {
    rows.push_back({{"point", r.point},
                    {"hyperparams", to_json(r.hyperparams)},
                    {"split_objective", r.split_objective},
                    {"objective", r.objective},
                    {"val", to_json(r.val)},
                    {"test", to_json(r.test)}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : result.failures) {
    failures.push_back({{"point", f.point}, {"hyperparams", to_json(f.hyperparams)}, {"reason", f.reason}});
  }
  return {{"best", to_json(result.best)}, {"evaluated", result.evaluated}, {"leaderboard", std::move(rows)},
          {"failures", std::move(failures)}};
}

nlohmann::json preset_document(const HyperParams& hp) {
  return {{"format", "markerlab.preset"}, {"format_version", 1}, {"hyperparams", to_json(hp)}};
}

HyperParams preset_from_document(const nlohmann::json& doc) {
  if (doc.value("format", std::string{}) != "markerlab.preset") fail(ErrorKind::kData, "not a preset document");
  if (doc.value("format_version", -1) != 1) fail(ErrorKind::kData, "unsupported preset format_version");
  return hyperparams_from_json(doc.at("hyperparams"));
}

}  // namespace markerlab
