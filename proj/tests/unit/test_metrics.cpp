#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "markerlab/common.hpp"
#include "markerlab/metrics.hpp"

using namespace markerlab;

namespace {

ConfusionMatrix cm(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  ConfusionMatrix c;
  c.tp = tp;
  c.fp = fp;
  c.fn = fn;
  c.tn = tn;
  return c;
}

struct Scored {
  std::vector<int> y;
  std::vector<double> s;
};

Scored random_scores(std::uint64_t seed) {
  Rng rng(seed);
  const auto n = 5 + rng.below(60);
  Scored out;
  for (;;) {
    out.y.clear();
    out.s.clear();
    int pos = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      out.y.push_back(rng.bernoulli(0.4) ? 1 : 0);
      pos += out.y.back();
      // Coarse grid for frequent ties.
      out.s.push_back(static_cast<double>(rng.below(8)) / 8.0 + 0.1 * out.y.back());
    }
    if (pos > 0 && pos < static_cast<int>(n)) return out;
  }
}

}  // namespace

TEST(Confusion, SurvivalTableCounts) {
  // Discharged is positive: 233 correct, 4 missed, 13 deceased called discharged.
  std::vector<int> y, yhat;
  auto add = [&](int t, int p, int count) {
    for (int i = 0; i < count; ++i) {
      y.push_back(t);
      yhat.push_back(p);
    }
  };
  add(1, 1, 233);
  add(1, 0, 4);
  add(0, 1, 13);
  add(0, 0, 23);
  const auto c = confusion(y, yhat, "discharged");
  EXPECT_EQ(c.tp, 233u);
  EXPECT_EQ(c.fn, 4u);
  EXPECT_EQ(c.fp, 13u);
  EXPECT_EQ(c.tn, 23u);
  EXPECT_EQ(c.total(), 273u);
}

TEST(ClassificationMetrics, CatBoostSurvivalArithmetic) {
  const auto r = classification_metrics(cm(233, 13, 4, 23));
  EXPECT_NEAR(r.accuracy, 256.0 / 273.0, 1e-12);
  EXPECT_NEAR(r.precision, 233.0 / 246.0, 1e-12);
  EXPECT_NEAR(r.recall, 233.0 / 237.0, 1e-12);
  const double p = 233.0 / 246.0, q = 233.0 / 237.0;
  EXPECT_NEAR(r.f1, 2 * p * q / (p + q), 1e-12);
  EXPECT_NEAR(r.accuracy, 0.9377, 5e-5);
  EXPECT_NEAR(r.precision, 0.9472, 5e-5);
  EXPECT_NEAR(r.recall, 0.9831, 5e-5);
  EXPECT_NEAR(r.f1, 0.9648, 5e-5);
}

TEST(ClassificationMetrics, XgbAkiArithmetic) {
  const auto r = classification_metrics(cm(34, 13, 16, 210));
  EXPECT_NEAR(r.accuracy, 244.0 / 273.0, 1e-12);
  EXPECT_NEAR(r.recall, 0.68, 1e-12);
  EXPECT_NEAR(r.precision, 34.0 / 47.0, 1e-12);
  EXPECT_NEAR(r.accuracy, 0.8938, 5e-5);
  EXPECT_NEAR(r.precision, 0.7234, 5e-5);
}

TEST(ClassificationMetrics, ZeroDenominatorsGiveZero) {
  const auto r = classification_metrics(cm(0, 0, 5, 5));
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.accuracy, 0.5);
}

TEST(ClassificationMetrics, F1BetweenHarmonicBounds) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto r = classification_metrics(cm(1 + rng.below(50), rng.below(50), rng.below(50), rng.below(50)));
    EXPECT_LE(r.f1, std::max(r.precision, r.recall) + 1e-15);
    EXPECT_GE(r.f1, std::min(r.precision, r.recall) - 1e-15);
    for (double v : {r.accuracy, r.precision, r.recall, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Roc, TrapezoidAreaEqualsPairwiseOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto d = random_scores(seed);
    EXPECT_NEAR(roc_auc(d.y, d.s).auc, oracle::mann_whitney(d.y, d.s), 1e-12) << "seed " << seed;
  }
}

TEST(Roc, MonotoneTransformInvariance) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = random_scores(seed);
    std::vector<double> t;
    for (double v : d.s) t.push_back(std::exp(3 * v) - 2);
    EXPECT_EQ(roc_auc(d.y, d.s).auc, roc_auc(d.y, t).auc);
  }
}

TEST(Roc, NegatedScoresComplement) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = random_scores(seed);
    std::vector<double> neg;
    for (double v : d.s) neg.push_back(-v);
    EXPECT_NEAR(roc_auc(d.y, d.s).auc + roc_auc(d.y, neg).auc, 1.0, 1e-12);
  }
}

TEST(Roc, AllTiedScoresGiveHalf) {
  const std::vector<int> y = {0, 1, 1, 0, 0};
  const std::vector<double> s(5, 0.3);
  EXPECT_EQ(roc_auc(y, s).auc, 0.5);
}

TEST(Roc, CurveIsMonotoneFromOriginToCorner) {
  const auto d = random_scores(77);
  const auto curve = roc_auc(d.y, d.s).curve;
  ASSERT_GE(curve.points.size(), 2u);
  EXPECT_EQ(curve.points.front().fpr, 0.0);
  EXPECT_EQ(curve.points.front().tpr, 0.0);
  EXPECT_EQ(curve.points.back().fpr, 1.0);
  EXPECT_EQ(curve.points.back().tpr, 1.0);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].fpr, curve.points[i - 1].fpr);
    EXPECT_GE(curve.points[i].tpr, curve.points[i - 1].tpr);
  }
}

TEST(Roc, SingleClassIsAnError) {
  const std::vector<int> y = {1, 1, 1};
  const std::vector<double> s = {0.1, 0.2, 0.3};
  EXPECT_THROW(roc_auc(y, s), Error);
}

TEST(Reports, AverageIsMeanOfSplits) {
  std::vector<MetricsReport> reports;
  Rng rng(8);
  for (int i = 0; i < 5; ++i) {
    auto r = classification_metrics(cm(20 + rng.below(10), rng.below(10), rng.below(10), 30 + rng.below(10)));
    r.auc = rng.uniform(0.5, 1.0);
    reports.push_back(r);
  }
  const auto avg = average_reports(reports);
  for (const char* m : {"accuracy", "precision", "recall", "f1", "auc"}) {
    double mean = 0.0;
    for (const auto& r : reports) mean += metric_value(r, m);
    mean /= 5.0;
    EXPECT_NEAR(metric_value(avg, m), mean, 1e-12) << m;
  }
  std::uint64_t total = 0;
  for (const auto& r : reports) total += r.cm.total();
  EXPECT_EQ(avg.cm.total(), total);
}

TEST(Pearson, KnownCases) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> up = {2, 4, 6, 8, 10};
  const std::vector<double> down = {5, 4, 3, 2, 1};
  EXPECT_NEAR(pearson(x, up), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, down), -1.0, 1e-15);
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 3, 2, 4};
  EXPECT_NEAR(pearson(a, b), 0.8, 1e-12);
}

TEST(Pearson, AgreesWithTwoPassOracle) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
      x.push_back(rng.normal() * 1e3 + 5e4);
      y.push_back(0.3 * x.back() + rng.normal() * 400);
    }
    EXPECT_NEAR(pearson(x, y), oracle::pearson_two_pass(x, y), 1e-10);
  }
}

TEST(Correlation, SymmetricUnitDiagonalAndFlagsConstants) {
  auto data = fixtures::encoded(fixtures::planted(true));
  const auto m = correlation_matrix(data.x);
  ASSERT_EQ(m.r.size(), m.labels.size());
  for (std::size_t i = 0; i < m.r.size(); ++i) {
    for (std::size_t j = 0; j < m.r.size(); ++j) {
      EXPECT_EQ(m.r[i][j], m.r[j][i]);
      EXPECT_LE(std::abs(m.r[i][j]), 1.0 + 1e-12);
    }
  }
  for (std::size_t i = 0; i < m.r.size(); ++i) {
    const bool constant =
        std::find(m.constant_columns.begin(), m.constant_columns.end(), m.labels[i]) != m.constant_columns.end();
    if (!constant) EXPECT_NEAR(m.r[i][i], 1.0, 1e-12);
  }
  const auto constant_matrix = fixtures::matrix({{1, 3}, {2, 3}, {3, 3}});
  const auto c = correlation_matrix(constant_matrix);
  ASSERT_EQ(c.constant_columns.size(), 1u);
  EXPECT_EQ(c.constant_columns[0], "c1");
}

TEST(Thresholding, ScoresAtThresholdArePositive) {
  const std::vector<double> s = {0.49, 0.5, 0.51};
  EXPECT_EQ(threshold_labels(s, 0.5), (std::vector<int>{0, 1, 1}));
}
