#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "markerlab/common.hpp"
#include "markerlab/model.hpp"

using namespace markerlab;

namespace {

HyperParams depthwise(int depth, int rounds, std::uint64_t seed) {
  HyperParams hp;
  hp.family = ModelFamily::kGbdt;
  hp.growth = Growth::kDepthwise;
  hp.max_depth = depth;
  hp.num_leaves = 1 << depth;
  hp.n_estimators = rounds;
  hp.learning_rate = 0.3 + 0.1 * static_cast<double>(seed % 5);
  hp.l2_lambda = static_cast<double>(seed % 3);
  hp.min_child_weight = (seed % 4 == 0) ? 0.3 : 0.0;
  hp.min_split_gain = (seed % 7 == 0) ? 0.05 : 0.0;
  return hp;
}

double log_loss(const std::vector<double>& p, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total -= y[i] ? std::log(p[i]) : std::log1p(-p[i]);
  return total / static_cast<double>(p.size());
}

void expect_leafwise_shape(const TrainedModel& model, const HyperParams& hp) {
  for (const auto& tree : model.trees) {
    EXPECT_LE(tree.leaf_count(), hp.num_leaves);
    EXPECT_LE(tree.depth(), hp.max_depth);
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      EXPECT_GT(node.gain, 0.0);
      EXPECT_GE(tree.nodes[static_cast<std::size_t>(node.left)].cover, hp.min_child_weight);
      EXPECT_GE(tree.nodes[static_cast<std::size_t>(node.right)].cover, hp.min_child_weight);
    }
  }
}

}  // namespace

TEST(Gbdt, NewtonLeafOfFourPositivesAtZeroMargin) {
  double g = 0.0, h = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double p = sigmoid(0.0);
    g += p - 1.0;
    h += p * (1.0 - p);
  }
  EXPECT_DOUBLE_EQ(g, -2.0);
  EXPECT_DOUBLE_EQ(h, 1.0);
  EXPECT_DOUBLE_EQ(leaf_weight(g, h, 1.0), 1.0);
}

TEST(Gbdt, BaseScoreIsTrainingLogOdds) {
  const auto x = fixtures::matrix({{1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}});
  const std::vector<int> y = {0, 0, 0, 0, 0, 0, 1, 1};
  HyperParams hp;
  hp.n_estimators = 1;
  auto model = train_gbdt(x, y, hp);
  EXPECT_NEAR(model.base_score, std::log(2.0 / 6.0), 1e-15);
  model.trees.clear();
  for (double p : predict_proba(model, x)) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(Gbdt, ZeroWeightTreeLeavesPredictionsUnchanged) {
  const auto toy = oracle::random_toy(3, true);
  auto model = train_gbdt(toy.x, toy.y, depthwise(2, 2, 3));
  const auto before = predict_proba(model, toy.x);
  Tree stump;
  stump.nodes.push_back(TreeNode{});
  model.trees.push_back(stump);
  EXPECT_EQ(predict_proba(model, toy.x), before);
}

TEST(Gbdt, TwelveRowTwoFeatureToyMatchesOracle) {
  const auto x = fixtures::matrix({{1, 5}, {2, 3}, {3, 8}, {4, 1}, {5, 9}, {6, 2},
                                   {7, 7}, {8, 4}, {9, 6}, {10, 0}, {11, 5}, {12, 3}});
  const std::vector<int> y = {0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 0};
  auto hp = depthwise(2, 3, 1);
  hp.learning_rate = 0.5;
  const auto model = train_gbdt(x, y, hp);
  const auto check = oracle::check_gbdt(model, x, y, hp);
  EXPECT_TRUE(check.ok) << check.why;
  EXPECT_GT(check.splits, 0u);
}

TEST(Gbdt, RandomToysMatchExhaustiveOracle) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto toy = oracle::random_toy(seed, seed % 2 == 1);
    const auto hp = depthwise(1 + static_cast<int>(seed % 2), 1 + static_cast<int>(seed % 3), seed);
    const auto model = train_gbdt(toy.x, toy.y, hp);
    const auto check = oracle::check_gbdt(model, toy.x, toy.y, hp);
    ASSERT_TRUE(check.ok) << "seed " << seed << ": " << check.why;
    EXPECT_LE(check.max_gain_dev, 1e-9);
    EXPECT_LE(check.max_weight_dev, 1e-9);
  }
}

TEST(Gbdt, SentinelRowsFollowHeavierChild) {
  // Column 0 separates the labels among observed rows; the sentinel rows
  // must ride along with the side holding more Hessian mass.
  const auto x = fixtures::matrix({{1}, {2}, {3}, {4}, {5}, {6}, {7}, {-999}, {-999}});
  const std::vector<int> y = {0, 0, 0, 0, 0, 1, 1, 1, 0};
  auto hp = depthwise(1, 1, 1);
  hp.l2_lambda = 0.0;
  const auto model = train_gbdt(x, y, hp);
  const auto& root = model.trees[0].nodes[0];
  ASSERT_FALSE(root.is_leaf());
  EXPECT_TRUE(root.default_left);
  const auto check = oracle::check_gbdt(model, x, y, hp);
  EXPECT_TRUE(check.ok) << check.why;
}

TEST(Gbdt, LeafAuditOnPlantedCohort) {
  const auto data = fixtures::encoded(fixtures::planted(true));
  HyperParams hp;
  hp.growth = Growth::kLeafwise;
  hp.num_leaves = 12;
  hp.max_depth = 5;
  hp.n_estimators = 30;
  hp.subsample = 0.8;
  hp.l2_lambda = 4;
  hp.seed = 11;
  const auto model = train_gbdt(data.x, data.y, hp);
  const auto audit = audit_leaf_weights(model, data.x, data.y);
  EXPECT_GT(audit.leaves_checked, 30u);
  EXPECT_LE(audit.max_abs_deviation, 1e-9);
  expect_leafwise_shape(model, hp);
}

TEST(Gbdt, LeafwiseRespectsLeafAndDepthBudgets) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  for (int leaves : {2, 5, 9}) {
    for (int depth : {2, 4}) {
      HyperParams hp;
      hp.growth = Growth::kLeafwise;
      hp.num_leaves = leaves;
      hp.max_depth = depth;
      hp.n_estimators = 5;
      hp.min_child_weight = 2.0;
      const auto model = train_gbdt(data.x, data.y, hp);
      expect_leafwise_shape(model, hp);
    }
  }
}

TEST(Gbdt, TrainingLossNeverIncreasesOverFiftyRounds) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.n_estimators = 50;
  hp.learning_rate = 0.3;
  hp.max_depth = 4;
  hp.num_leaves = 16;
  const auto model = train_gbdt(data.x, data.y, hp);
  auto partial = model;
  double previous = INFINITY;
  for (std::size_t m = 0; m <= model.trees.size(); ++m) {
    partial.trees.assign(model.trees.begin(), model.trees.begin() + static_cast<std::ptrdiff_t>(m));
    const double loss = log_loss(predict_proba(partial, data.x), data.y);
    EXPECT_LE(loss, previous + 1e-12) << "round " << m;
    previous = loss;
  }
}

TEST(Gbdt, MonotoneColumnTransformKeepsTrainingPredictions) {
  Rng rng(5);
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (int i = 0; i < 120; ++i) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    rows.push_back({a, b});
    y.push_back(rng.bernoulli(sigmoid(2 * a - b)) ? 1 : 0);
  }
  auto cubed = rows;
  for (auto& r : cubed) r[0] = r[0] * r[0] * r[0] + 7.0;
  HyperParams hp;
  hp.n_estimators = 10;
  hp.max_depth = 3;
  hp.num_leaves = 8;
  const auto x1 = fixtures::matrix(rows, std::nullopt);
  const auto x2 = fixtures::matrix(cubed, std::nullopt);
  EXPECT_EQ(predict_proba(train_gbdt(x1, y, hp), x1), predict_proba(train_gbdt(x2, y, hp), x2));
}

TEST(Gbdt, SameSeedSameModel) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.n_estimators = 8;
  hp.subsample = 0.7;
  hp.seed = 3;
  EXPECT_EQ(serialize_model(train_gbdt(data.x, data.y, hp)).dump(),
            serialize_model(train_gbdt(data.x, data.y, hp)).dump());
}

TEST(Gbdt, RejectsSingleClassLabels) {
  const auto x = fixtures::matrix({{1}, {2}, {3}, {4}});
  const std::vector<int> y = {1, 1, 1, 1};
  try {
    train_gbdt(x, y, HyperParams{});
    FAIL() << "expected a training error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
  }
}

TEST(Forest, SingleUnbootstrappedTreeMatchesCartOracle) {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const auto toy = oracle::random_toy(seed + 1000, seed % 2 == 0);
    HyperParams hp;
    hp.family = ModelFamily::kRandomForest;
    hp.n_estimators = 1;
    hp.bootstrap = false;
    hp.max_features = static_cast<int>(toy.x.cols());
    hp.max_depth = 1 + static_cast<int>(seed % 4);
    hp.seed = seed;
    const auto model = train_random_forest(toy.x, toy.y, hp);
    ASSERT_EQ(model.trees.size(), 1u);
    const auto check = oracle::check_cart(model.trees[0], toy.x, toy.y, hp);
    ASSERT_TRUE(check.ok) << "seed " << seed << ": " << check.why;
  }
}

TEST(Forest, SeparableDataIsFitExactly) {
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    rows.push_back({static_cast<double>(i), static_cast<double>((i * 7) % 13)});
    y.push_back((i / 5) % 2);
  }
  const auto x = fixtures::matrix(rows);
  HyperParams hp;
  hp.family = ModelFamily::kRandomForest;
  hp.n_estimators = 1;
  hp.bootstrap = false;
  hp.max_features = 2;
  hp.max_depth = 10;
  const auto p = predict_proba(train_random_forest(x, y, hp), x);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(p[i] >= 0.5 ? 1 : 0, y[i]);
}

TEST(Forest, DeterministicAndDepthBounded) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.family = ModelFamily::kRandomForest;
  hp.n_estimators = 9;
  hp.max_depth = 6;
  hp.seed = 21;
  const auto a = train_random_forest(data.x, data.y, hp);
  const auto b = train_random_forest(data.x, data.y, hp);
  EXPECT_EQ(a, b);
  for (const auto& t : a.trees) EXPECT_LE(t.depth(), 6);
  for (double p : predict_proba(a, data.x)) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Logistic, CoefficientSignFollowsAssociation) {
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.uniform(-3, 3);
    rows.push_back({v});
    y.push_back(rng.bernoulli(sigmoid(1.5 * v)) ? 1 : 0);
  }
  HyperParams hp;
  hp.family = ModelFamily::kLogistic;
  hp.l2_lambda = 1.0;
  const auto model = train_logistic(fixtures::matrix(rows, std::nullopt), y, hp);
  ASSERT_TRUE(model.linear);
  EXPECT_GT(model.linear->weights[0], 0.0);
  EXPECT_TRUE(model.linear->converged);
}

TEST(Logistic, HeavyPenaltyPredictsBaseRate) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.family = ModelFamily::kLogistic;
  hp.l2_lambda = 1e9;
  const auto model = train_logistic(data.x, data.y, hp);
  const double rate = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(data.y.size());
  for (double p : predict_proba(model, data.x)) EXPECT_NEAR(p, rate, 1e-3);
}

TEST(Logistic, GradientMatchesFiniteDifferences) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  HyperParams hp;
  hp.family = ModelFamily::kLogistic;
  hp.l2_lambda = 2.0;
  const auto model = train_logistic(data.x, data.y, hp);
  LinearModel lm = *model.linear;
  Rng rng(9);
  for (auto& w : lm.weights) w += rng.uniform(-0.3, 0.3);
  lm.bias += 0.2;
  const auto grad = logistic_gradient(lm, data.x, data.y, hp.l2_lambda);
  ASSERT_EQ(grad.size(), lm.weights.size() + 1);
  const double eps = 1e-5;
  for (std::size_t j = 0; j < grad.size(); ++j) {
    auto plus = lm, minus = lm;
    double& up = j < lm.weights.size() ? plus.weights[j] : plus.bias;
    double& down = j < lm.weights.size() ? minus.weights[j] : minus.bias;
    up += eps;
    down -= eps;
    const double fd = (logistic_loss(plus, data.x, data.y, hp.l2_lambda) - logistic_loss(minus, data.x, data.y, hp.l2_lambda)) / (2 * eps);
    EXPECT_NEAR(fd, grad[j], 1e-4 * std::max(1.0, std::abs(fd))) << "coordinate " << j;
  }
  // At the fitted optimum the gradient vanishes.
  double norm = 0.0;
  for (double g : logistic_gradient(*model.linear, data.x, data.y, hp.l2_lambda)) norm += g * g;
  EXPECT_LE(std::sqrt(norm), 1e-5);
}

TEST(ModelDocument, RoundTripPreservesPredictionsBitForBit) {
  const auto data = fixtures::encoded(fixtures::planted(false));
  for (auto family : {ModelFamily::kGbdt, ModelFamily::kRandomForest, ModelFamily::kLogistic}) {
    HyperParams hp;
    hp.family = family;
    hp.n_estimators = 5;
    const auto model = train_model(data.x, data.y, hp);
    const auto restored = deserialize_model(nlohmann::json::parse(serialize_model(model).dump()));
    EXPECT_EQ(predict_proba(model, data.x), predict_proba(restored, data.x)) << to_string(family);
    EXPECT_EQ(restored.meta, model.meta);
    EXPECT_EQ(restored.columns, model.columns);
  }
}

TEST(ModelDocument, UnknownFormatVersionIsRejected) {
  const auto toy = oracle::random_toy(1, false);
  auto doc = serialize_model(train_gbdt(toy.x, toy.y, depthwise(1, 1, 1)));
  doc["format_version"] = 99;
  try {
    deserialize_model(doc);
    FAIL() << "expected a data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(ModelDocument, ColumnMismatchIsRejected) {
  const auto toy = oracle::random_toy(2, false);
  const auto model = train_gbdt(toy.x, toy.y, depthwise(1, 1, 2));
  const auto other = fixtures::matrix(std::vector<std::vector<double>>(3, std::vector<double>(toy.x.cols() + 1, 0.0)));
  EXPECT_THROW(predict_proba(model, other), Error);
}
