#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "markerlab/common.hpp"
#include "markerlab/search.hpp"

using namespace markerlab;

namespace {

const GridAxis& axis(const HyperGrid& g, std::string_view name) {
  for (const auto& a : g.axes) {
    if (a.name == name) return a;
  }
  throw std::runtime_error("axis not found");
}

PreparedData small_cohort() {
  auto spec = fixtures::planted(false);
  spec.n_rows = 600;
  return prepare(generate_synthetic(spec), fixtures::synthetic_protocol(2));
}

HyperGrid twelve_point_grid() {
  HyperGrid g;
  g.base = preset("lgbm-like", Task::kSurvival);
  g.base.n_estimators = 15;
  g.axes = {{"learning_rate", {0.05, 0.2, 0.5}}, {"num_leaves", {2, 4}}, {"l2_lambda", {1, 10}}};
  return g;
}

}  // namespace

TEST(Presets, PublishedBestConfigurations) {
  auto lgbm = preset("lgbm-like", Task::kSurvival);
  EXPECT_EQ(lgbm.learning_rate, 0.2);
  EXPECT_EQ(lgbm.num_leaves, 16);
  EXPECT_EQ(lgbm.max_depth, 12);
  EXPECT_EQ(lgbm.l2_lambda, 4);
  lgbm = preset("lgbm-like", Task::kAki);
  EXPECT_EQ(lgbm.learning_rate, 0.09);
  EXPECT_EQ(lgbm.num_leaves, 40);
  EXPECT_EQ(lgbm.max_depth, 11);
  EXPECT_EQ(lgbm.l2_lambda, 13);

  auto xgb = preset("xgb-like", Task::kSurvival);
  EXPECT_EQ(xgb.max_depth, 9);
  EXPECT_EQ(xgb.min_child_weight, 1);
  EXPECT_EQ(xgb.min_split_gain, 0);
  EXPECT_EQ(xgb.n_estimators, 500);
  EXPECT_EQ(xgb.learning_rate, 0.01);
  xgb = preset("xgb-like", Task::kAki);
  EXPECT_EQ(xgb.max_depth, 4);
  EXPECT_EQ(xgb.min_child_weight, 16);
  EXPECT_EQ(xgb.n_estimators, 1500);
  EXPECT_EQ(xgb.learning_rate, 0.09);

  auto cat = preset("cat-like", Task::kSurvival);
  EXPECT_EQ(cat.n_estimators, 500);
  EXPECT_EQ(cat.learning_rate, 0.01);
  EXPECT_EQ(cat.max_depth, 7);
  EXPECT_EQ(preset("cat-like", Task::kAki).max_depth, 10);

  auto rf = preset("rf", Task::kSurvival);
  EXPECT_EQ(rf.family, ModelFamily::kRandomForest);
  EXPECT_EQ(rf.n_estimators, 1);
  EXPECT_EQ(rf.max_depth, 7);
  rf = preset("rf", Task::kAki);
  EXPECT_EQ(rf.n_estimators, 61);
  EXPECT_EQ(rf.max_depth, 10);

  EXPECT_THROW(preset("tabnet", Task::kSurvival), Error);
}

TEST(Presets, EveryPresetValidates) {
  for (const auto& name : preset_names()) {
    for (auto task : {Task::kSurvival, Task::kAki}) EXPECT_NO_THROW(preset(name, task).validate()) << name;
  }
}

TEST(BuiltinGrids, PublishedAxes) {
  const auto rf = builtin_grid("rf", Task::kSurvival);
  EXPECT_EQ(axis(rf, "n_estimators").values, (std::vector<double>{1, 21, 41, 61, 81}));
  EXPECT_EQ(axis(rf, "max_depth").values.size(), 10u);

  const auto lgbm = builtin_grid("lgbm-like", Task::kSurvival);
  const auto& depth = axis(lgbm, "max_depth").values;
  EXPECT_EQ(depth.front(), 3);
  EXPECT_EQ(depth.back(), 16);
  EXPECT_EQ(depth.size(), 14u);
  EXPECT_EQ(axis(lgbm, "l2_lambda").values.size(), 15u);

  const auto xgb = builtin_grid("xgb-like", Task::kAki);
  EXPECT_EQ(axis(xgb, "min_split_gain").values, (std::vector<double>{0, 5, 10, 15, 20, 25, 30}));
  EXPECT_EQ(axis(xgb, "min_child_weight").values, (std::vector<double>{1, 6, 11, 16, 21, 26}));
}

TEST(BuiltinGrids, LearningRateAxisContainsOptima) {
  const double optima[] = {0.2, 0.09};
  const auto lr = learning_rate_axis(0.01, 1.0, optima);
  ASSERT_EQ(lr.size(), 8u);
  EXPECT_EQ(lr.front(), 0.01);
  EXPECT_NEAR(lr.back(), 1.0, 1e-12);
  for (double opt : optima) EXPECT_NE(std::find(lr.begin(), lr.end(), opt), lr.end());
  for (std::size_t i = 1; i < lr.size(); ++i) EXPECT_GT(lr[i], lr[i - 1]);
}

TEST(HyperGrid, FactorialOrderLastAxisFastest) {
  const auto g = twelve_point_grid();
  ASSERT_EQ(g.size(), 12u);
  const auto pts = g.points();
  EXPECT_EQ(pts[0].l2_lambda, 1);
  EXPECT_EQ(pts[1].l2_lambda, 10);
  EXPECT_EQ(pts[2].num_leaves, 4);
  EXPECT_EQ(pts[4].learning_rate, 0.2);
}

TEST(HyperGrid, IntegerAxesRejectFractions) {
  HyperParams hp;
  EXPECT_THROW(set_param(hp, "max_depth", 2.5), Error);
  EXPECT_THROW(set_param(hp, "depth_of_field", 2), Error);
  set_param(hp, "learning_rate", 0.125);
  EXPECT_EQ(get_param(hp, "learning_rate"), 0.125);
}

TEST(HyperGrid, JsonRoundTrip) {
  const auto g = builtin_grid("xgb-like", Task::kSurvival);
  const auto back = grid_from_json(nlohmann::json::parse(to_json(g).dump()));
  EXPECT_EQ(back.points(), g.points());
}

TEST(Evaluate, AveragedReportIsMeanOfSplits) {
  const auto data = small_cohort();
  auto config = fixtures::synthetic_protocol(3);
  auto hp = preset("lgbm-like", Task::kSurvival);
  hp.n_estimators = 10;
  const auto ev = evaluate(data, hp, config);
  ASSERT_EQ(ev.splits.size(), 3u);
  for (const char* m : {"accuracy", "precision", "recall", "f1", "auc"}) {
    double mean = 0.0;
    for (const auto& s : ev.splits) mean += metric_value(s.test, m);
    EXPECT_NEAR(metric_value(ev.test, m), mean / 3.0, 1e-12) << m;
  }
}

TEST(Evaluate, TestRowsNeverTrainedOn) {
  const auto data = small_cohort();
  auto hp = preset("lgbm-like", Task::kSurvival);
  hp.n_estimators = 5;
  const auto splits = mc_splits(data.labels.size(), data.labels, 1, 0);
  const auto outcome = run_split(data, splits[0], 0, hp, fixtures::synthetic_protocol(1));
  // Training rows are the split's train rows plus upsampled positives only.
  EXPECT_GE(outcome.model.meta.n_rows, splits[0].train.size());
  EXPECT_EQ(outcome.test_y.size(), splits[0].test.size());
  EXPECT_EQ(outcome.val_y.size(), splits[0].val.size());
}

TEST(GridSearch, BestIsExhaustiveArgmax) {
  const auto data = small_cohort();
  const auto config = fixtures::synthetic_protocol(2);
  const auto grid = twelve_point_grid();
  const auto result = grid_search(grid, data, config);
  ASSERT_EQ(result.leaderboard.size(), 12u);

  double best = -1.0;
  HyperParams argmax;
  for (const auto& hp : grid.points()) {
    const double v = evaluate(data, hp, config).val.accuracy;
    if (v > best) {
      best = v;
      argmax = hp;
    }
  }
  EXPECT_EQ(result.best, argmax);
  EXPECT_EQ(result.leaderboard.front().objective, best);
  for (std::size_t i = 1; i < result.leaderboard.size(); ++i) {
    EXPECT_GE(result.leaderboard[i - 1].objective, result.leaderboard[i].objective);
  }
}

TEST(GridSearch, DeterministicAcrossThreadCounts) {
  const auto data = small_cohort();
  const auto config = fixtures::synthetic_protocol(2);
  const auto grid = twelve_point_grid();
  GridOptions one;
  GridOptions four;
  four.threads = 4;
  const auto a = grid_search(grid, data, config, one);
  const auto b = grid_search(grid, data, config, four);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(leaderboard_csv(grid, a), leaderboard_csv(grid, b));
}

TEST(GridSearch, SinglePointEqualsDirectEvaluation) {
  const auto data = small_cohort();
  const auto config = fixtures::synthetic_protocol(2);
  HyperGrid g;
  g.base = preset("rf", Task::kAki);
  g.base.n_estimators = 5;
  g.axes = {{"max_depth", {4}}};
  const auto r = grid_search(g, data, config);
  auto hp = g.base;
  hp.max_depth = 4;
  EXPECT_EQ(r.best, hp);
  EXPECT_EQ(r.leaderboard[0].val.accuracy, evaluate(data, hp, config).val.accuracy);
}

TEST(GridSearch, BudgetGuardAndUnknownObjective) {
  const auto data = small_cohort();
  const auto config = fixtures::synthetic_protocol(2);
  GridOptions options;
  options.max_points = 10;
  try {
    grid_search(twelve_point_grid(), data, config, options);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
  options.max_points = 512;
  options.objective = "kappa";
  EXPECT_THROW(grid_search(twelve_point_grid(), data, config, options), Error);
}

TEST(Prepare, ExclusionsAndUnknownNames) {
  auto config = fixtures::synthetic_protocol(2);
  config.exclusions = {"signal", "no such marker"};
  const auto data = prepare(generate_synthetic(fixtures::planted(false)), config);
  EXPECT_FALSE(data.features.schema().find("signal"));
  EXPECT_EQ(data.unknown_exclusions, std::vector<std::string>{"no such marker"});
  const std::string more[] = {"noise_num_01"};
  const auto fewer = without_markers(data, more);
  EXPECT_EQ(fewer.features.column_count() + 1, data.features.column_count());
  EXPECT_NE(fewer.fingerprint, data.fingerprint);
}
