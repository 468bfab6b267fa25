#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "markerlab/common.hpp"
#include "markerlab/explain.hpp"

using namespace markerlab;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kUsage;
}

Experiment small_experiment(bool leakage, int max_iterations = 3) {
  auto spec = fixtures::planted(leakage);
  spec.n_rows = 800;
  Experiment e;
  e.id = "exp-unit";
  e.config.synthetic = to_json(spec);
  e.config.protocol = fixtures::synthetic_protocol(2);
  e.config.preset = "lgbm-like";
  auto hp = preset("lgbm-like", Task::kSurvival);
  hp.n_estimators = 20;
  e.config.hyperparams = hp;
  e.config.top_k = 3;
  e.config.max_iterations = max_iterations;
  return e;
}

Decision decide(std::string marker, Verdict v) { return {std::move(marker), v, "", "2026-01-01T00:00:00Z"}; }

std::vector<Decision> approve_all(const Iteration& it) {
  std::vector<Decision> out;
  for (const auto& m : it.top) out.push_back(decide(m, Verdict::kApproved));
  return out;
}

}  // namespace

TEST(GainImportance, SingleSplitTakesAllCredit) {
  const auto x = fixtures::matrix({{0, 5}, {0, 3}, {0, 4}, {1, 5}, {1, 3}, {1, 4}});
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  HyperParams hp;
  hp.n_estimators = 1;
  hp.max_depth = 1;
  hp.num_leaves = 2;
  hp.min_child_weight = 0;
  const auto report = gain_importance(train_gbdt(x, y, hp));
  EXPECT_EQ(report.score("c0"), 1.0);
  EXPECT_EQ(report.score("c1"), 0.0);
  EXPECT_GT(report.markers[0].raw, 0.0);
}

TEST(GainImportance, SharesSumToOneAndGroupIndicators) {
  const auto data = fixtures::encoded(fixtures::planted(true));
  HyperParams hp;
  hp.n_estimators = 10;
  const auto report = gain_importance(train_gbdt(data.x, data.y, hp));
  double sum = 0.0;
  for (const auto& e : report.markers) sum += e.score;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(report.markers.size(), data.x.markers().size());
  EXPECT_EQ(report.columns.size(), data.x.cols());
  double leak_cols = 0.0;
  for (const auto& c : report.columns) {
    if (c.name.rfind("length of stay=", 0) == 0) leak_cols += c.raw;
  }
  EXPECT_NEAR(report.score("length of stay") * std::accumulate(report.markers.begin(), report.markers.end(), 0.0,
                                                                [](double a, const AttributionEntry& e) { return a + e.raw; }),
              leak_cols, 1e-9);
  std::vector<std::string> top2;
  for (const auto& t : top_k(report, 2)) top2.push_back(t.name);
  std::sort(top2.begin(), top2.end());
  EXPECT_EQ(top2, (std::vector<std::string>{"length of stay", "signal"}));
}

TEST(PermutationImportance, PerfectCopyLosesPairAgreementRate) {
  Rng rng(13);
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (int i = 0; i < 2000; ++i) {
    y.push_back(rng.bernoulli(0.2) ? 1 : 0);
    rows.push_back({static_cast<double>(y.back()), rng.uniform()});
  }
  const auto x = fixtures::matrix(rows);
  HyperParams hp;
  hp.n_estimators = 3;
  hp.max_depth = 1;
  hp.num_leaves = 2;
  const auto model = train_gbdt(x, y, hp);
  PermutationOptions options;
  options.repeats = 40;
  options.seed = 3;
  const auto report = permutation_importance(model, x, y, options);
  const double pi = std::accumulate(y.begin(), y.end(), 0.0) / 2000.0;
  EXPECT_NEAR(report.score("c0"), 1.0 - (pi * pi + (1 - pi) * (1 - pi)), 0.01);
  EXPECT_EQ(report.score("c1"), 0.0);
}

TEST(PermutationImportance, DeterministicAndSeedSensitive) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.n_estimators = 10;
  const auto model = train_gbdt(data.x, data.y, hp);
  PermutationOptions options;
  options.repeats = 3;
  const auto a = permutation_importance(model, data.x, data.y, options);
  EXPECT_EQ(a, permutation_importance(model, data.x, data.y, options));
  options.seed = 99;
  EXPECT_NE(a.score("signal"), permutation_importance(model, data.x, data.y, options).score("signal"));
  EXPECT_EQ(top_k(a, 1)[0].name, "signal");
  EXPECT_GT(a.score("signal"), 0.1);
}

TEST(PermutationImportance, MarkerTheModelDoesNotReadScoresZero) {
  const auto table = generate_synthetic(fixtures::planted(true));
  auto config = fixtures::synthetic_protocol(1);
  config.exclusions = {"length of stay"};
  const auto data = prepare(table, config);
  auto hp = preset("lgbm-like", Task::kSurvival);
  hp.n_estimators = 10;
  const auto splits = mc_splits(data.labels.size(), data.labels, 1, 0);
  const auto outcome = run_split(data, splits[0], 0, hp, config);
  // Score on the raw table, which still carries the excluded marker.
  const auto sel = select_target(table, "outcome", kSyntheticPositive);
  PermutationOptions options;
  options.repeats = 5;
  EXPECT_EQ(permutation_importance_of(outcome.model, sel.features, sel.labels, "length of stay", options), 0.0);
  EXPECT_GT(permutation_importance_of(outcome.model, sel.features, sel.labels, "signal", options), 0.0);
}

TEST(TopK, DescendingWithNameTieBreak) {
  AttributionReport r;
  r.markers = {{"b", 0.2, 0.2}, {"a", 0.2, 0.2}, {"c", 0.5, 0.5}, {"d", 0.1, 0.1}};
  const auto top = top_k(r, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].name, "c");
  EXPECT_EQ(top[1].name, "a");
  EXPECT_EQ(top[2].name, "b");
  EXPECT_EQ(top_k(r, 10).size(), 4u);
}

TEST(Attribution, AverageOverUnionAndJsonRoundTrip) {
  AttributionReport a, b;
  a.markers = {{"x", 1.0, 2.0}, {"y", 0.0, 0.0}};
  b.markers = {{"x", 0.5, 1.0}, {"z", 1.0, 1.0}};
  const AttributionReport both[] = {a, b};
  const auto avg = average_attribution(both);
  EXPECT_EQ(avg.models, 2u);
  EXPECT_EQ(avg.score("x"), 0.75);
  EXPECT_EQ(avg.score("z"), 0.5);
  EXPECT_EQ(attribution_from_json(nlohmann::json::parse(to_json(avg).dump())), avg);
}

TEST(RefinementLoop, IterationRanksAndAwaitsReview) {
  auto e = small_experiment(true);
  const auto table = generate_synthetic(synthetic_spec_from_json(*e.config.synthetic));
  const auto it = run_iteration(e, table);
  ASSERT_EQ(it.status, IterationStatus::kAwaitingReview) << it.error;
  EXPECT_EQ(it.index, 0);
  EXPECT_EQ(it.top.size(), 3u);
  EXPECT_EQ(it.models.size(), 2u);
  EXPECT_EQ(it.split_test.size(), 2u);
  EXPECT_FALSE(it.roc.points.empty());
  e.iterations.push_back(it);
  EXPECT_EQ(kind_of([&] { run_iteration(e, table); }), ErrorKind::kConflict);
}

TEST(RefinementLoop, DecisionValidation) {
  auto e = small_experiment(true);
  const auto table = generate_synthetic(synthetic_spec_from_json(*e.config.synthetic));
  e.iterations.push_back(run_iteration(e, table));
  const auto& it = e.iterations[0];
  auto decisions = approve_all(it);

  auto partial = decisions;
  partial.pop_back();
  EXPECT_EQ(kind_of([&] { auto c = e; submit_decisions(c, 0, partial); }), ErrorKind::kUsage);
  auto unknown = decisions;
  unknown.push_back(decide("no such marker", Verdict::kRejected));
  EXPECT_EQ(kind_of([&] { auto c = e; submit_decisions(c, 0, unknown); }), ErrorKind::kUsage);
  auto dup = decisions;
  dup.push_back(dup[0]);
  EXPECT_EQ(kind_of([&] { auto c = e; submit_decisions(c, 0, dup); }), ErrorKind::kUsage);
  EXPECT_EQ(kind_of([&] { auto c = e; submit_decisions(c, 5, decisions); }), ErrorKind::kNotFound);

  // Approving the whole top-k converges; a second submission conflicts.
  auto closed = e;
  const auto t = submit_decisions(closed, 0, decisions);
  EXPECT_TRUE(t.terminal);
  EXPECT_TRUE(t.converged);
  EXPECT_EQ(closed.iterations[0].status, IterationStatus::kClosed);
  EXPECT_EQ(kind_of([&] { submit_decisions(closed, 0, decisions); }), ErrorKind::kConflict);
  EXPECT_EQ(kind_of([&] { run_iteration(closed, table); }), ErrorKind::kConflict);
}

TEST(RefinementLoop, RejectionExcludesMonotonicallyUntilBudget) {
  auto e = small_experiment(true, 2);
  e.config.protocol.exclusions = {"noise_num_10"};
  const auto table = generate_synthetic(synthetic_spec_from_json(*e.config.synthetic));
  std::vector<std::string> previous = e.exclusions();
  for (int round = 0; round < 2; ++round) {
    e.iterations.push_back(run_iteration(e, table));
    const auto& it = e.iterations.back();
    ASSERT_EQ(it.status, IterationStatus::kAwaitingReview);
    EXPECT_EQ(it.exclusions, previous);
    for (const auto& ex : previous) EXPECT_EQ(std::find(it.features.begin(), it.features.end(), ex), it.features.end());
    auto decisions = approve_all(it);
    decisions[0].verdict = Verdict::kRejected;
    const auto t = submit_decisions(e, it.index, decisions);
    const auto now = e.exclusions();
    ASSERT_EQ(now.size(), previous.size() + 1);
    EXPECT_TRUE(std::equal(previous.begin(), previous.end(), now.begin()));
    EXPECT_EQ(now.back(), it.top[0]);
    previous = now;
    EXPECT_EQ(t.terminal, round == 1);
    EXPECT_FALSE(t.converged);
  }
  EXPECT_TRUE(e.terminal);
  EXPECT_FALSE(e.converged);
  EXPECT_EQ(previous.front(), "noise_num_10");
}

TEST(RefinementLoop, RejectingAnExcludedMarkerIsRefused) {
  auto e = small_experiment(true);
  const auto table = generate_synthetic(synthetic_spec_from_json(*e.config.synthetic));
  e.iterations.push_back(run_iteration(e, table));
  auto decisions = approve_all(e.iterations[0]);
  decisions[0].verdict = Verdict::kRejected;
  submit_decisions(e, 0, decisions);
  const auto rejected = decisions[0].marker;
  e.iterations.push_back(run_iteration(e, table));
  auto again = approve_all(e.iterations[1]);
  again.push_back(decide(rejected, Verdict::kRejected));
  EXPECT_EQ(kind_of([&] { submit_decisions(e, 1, again); }), ErrorKind::kUsage);
}

TEST(Termination, Rules) {
  Iteration it;
  it.index = 0;
  it.top = {"a", "b"};
  const std::vector<Decision> approved = {decide("a", Verdict::kApproved), decide("b", Verdict::kApproved)};
  auto t = check_termination(it, approved, 5);
  EXPECT_TRUE(t.terminal && t.converged);
  const std::vector<Decision> one_rejected = {decide("a", Verdict::kRejected), decide("b", Verdict::kApproved)};
  t = check_termination(it, one_rejected, 5);
  EXPECT_FALSE(t.terminal);
  it.index = 4;
  t = check_termination(it, one_rejected, 5);
  EXPECT_TRUE(t.terminal);
  EXPECT_FALSE(t.converged);
}

TEST(Ablation, DeterministicAndSignalRemovalHurts) {
  auto e = small_experiment(false);
  const auto table = generate_synthetic(synthetic_spec_from_json(*e.config.synthetic));
  const auto a = ablate(e, table, "signal");
  const auto b = ablate(e, table, "signal");
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_LT(a.ablated.accuracy, a.baseline.accuracy - 0.05);
  EXPECT_EQ(a.baseline_splits.size(), 2u);
  EXPECT_EQ(kind_of([&] { ablate(e, table, "no such marker"); }), ErrorKind::kUsage);
  e.config.protocol.exclusions = {"signal"};
  EXPECT_EQ(kind_of([&] { ablate(e, table, "signal"); }), ErrorKind::kUsage);
}

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  const auto e = small_experiment(true);
  const auto doc = to_json(e.config);
  EXPECT_EQ(to_json(experiment_config_from_json(doc)).dump(), doc.dump());
  auto both = doc;
  both["dataset"] = "x.csv";
  EXPECT_EQ(kind_of([&] { experiment_config_from_json(both); }), ErrorKind::kUsage);
  auto bad = doc;
  bad["top_k"] = 0;
  EXPECT_EQ(kind_of([&] { experiment_config_from_json(bad); }), ErrorKind::kUsage);
}
