#include "markerlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "markerlab/common.hpp"

namespace markerlab {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

ConfusionMatrix confusion(std::span<const int> y, std::span<const int> y_hat, std::string positive) {
  if (y.size() != y_hat.size()) {
    fail(ErrorKind::kUsage, fmt::format("confusion: length mismatch ({} labels, {} predictions)", y.size(), y_hat.size()));
  }
  if (y.empty()) fail(ErrorKind::kUsage, "confusion: empty input");
  ConfusionMatrix cm;
  cm.positive = std::move(positive);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool truth = y[i] == 1;
    const bool called = y_hat[i] == 1;
    if (truth && called) ++cm.tp;
    else if (truth) ++cm.fn;
    else if (called) ++cm.fp;
    else ++cm.tn;
  }
  return cm;
}

MetricsReport classification_metrics(const ConfusionMatrix& cm) {
  auto ratio = [](std::uint64_t a, std::uint64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  MetricsReport r;
  r.cm = cm;
  r.n_test = cm.total();
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  r.recall = ratio(cm.tp, cm.tp + cm.fn);
  // 2PR/(P+R) written on counts: 2tp / (2tp + fp + fn).
  r.f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
  return r;
}

RocResult roc_auc(std::span<const int> y, std::span<const double> scores) {
  if (y.size() != scores.size()) fail(ErrorKind::kUsage, "roc_auc: length mismatch");
  const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  const std::size_t neg = y.size() - pos;
  if (pos == 0 || neg == 0) fail(ErrorKind::kUsage, "roc_auc: both classes must be present");
  for (double s : scores) {
    if (std::isnan(s)) fail(ErrorKind::kUsage, "roc_auc: NaN score");
  }
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  RocResult out;
  out.curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double area = 0.0;  // in units of (pos * neg)
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    const auto tp0 = tp;
    const auto fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) (y[order[i]] == 1 ? tp : fp) += 1;
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) / 2.0;
    out.curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos), s});
  }
  out.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return out;
}

std::vector<int> threshold_labels(std::span<const double> scores, double threshold) {
  std::vector<int> out(scores.size());
  std::transform(scores.begin(), scores.end(), out.begin(), [&](double s) { return s >= threshold ? 1 : 0; });
  return out;
}

MetricsReport evaluate_scores(std::span<const int> y, std::span<const double> scores, double threshold,
                              std::string positive) {
  const auto y_hat = threshold_labels(scores, threshold);
  auto report = classification_metrics(confusion(y, y_hat, std::move(positive)));
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < y.size()) {
    report.auc = roc_auc(y, scores).auc;
  } else {
    report.auc = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

MetricsReport average_reports(std::span<const MetricsReport> reports) {
  if (reports.empty()) fail(ErrorKind::kUsage, "average_reports: no reports");
  MetricsReport out;
  out.cm.positive = reports.front().cm.positive;
  for (const auto& r : reports) {
    out.accuracy += r.accuracy;
    out.precision += r.precision;
    out.recall += r.recall;
    out.f1 += r.f1;
    out.auc += r.auc;
    out.cm += r.cm;
    out.n_test += r.n_test;
  }
  const auto k = static_cast<double>(reports.size());
  out.accuracy /= k;
  out.precision /= k;
  out.recall /= k;
  out.f1 /= k;
  out.auc /= k;
  return out;
}

double metric_value(const MetricsReport& report, std::string_view name) {
  if (name == "accuracy") return report.accuracy;
  if (name == "precision") return report.precision;
  if (name == "recall") return report.recall;
  if (name == "f1") return report.f1;
  if (name == "auc") return report.auc;
  fail(ErrorKind::kUsage, fmt::format("unknown metric '{}' (accuracy, precision, recall, f1, auc)", name));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::kUsage, "pearson: length mismatch");
  if (x.size() < 2) fail(ErrorKind::kUsage, "pearson: need at least two points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::kData, "pearson: correlation undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(const DesignMatrix& matrix, std::span<const std::string> markers) {
  std::vector<std::size_t> cols;
  if (markers.empty()) {
    cols.resize(matrix.cols());
    std::iota(cols.begin(), cols.end(), 0);
  } else {
    for (const auto& m : markers) {
      const auto mc = matrix.marker_columns(m);
      if (mc.empty()) fail(ErrorKind::kNotFound, fmt::format("marker '{}' not in the design matrix", m));
      cols.insert(cols.end(), mc.begin(), mc.end());
    }
  }
  CorrelationMatrix out;
  std::vector<std::vector<double>> data;
  std::vector<bool> constant;
  for (auto c : cols) {
    out.labels.push_back(matrix.columns()[c].label);
    std::vector<double> v(matrix.rows());
    for (std::size_t i = 0; i < matrix.rows(); ++i) v[i] = matrix.at(i, c);
    const bool flat = std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
    constant.push_back(flat);
    if (flat) out.constant_columns.push_back(out.labels.back());
    data.push_back(std::move(v));
  }
  const std::size_t k = cols.size();
  out.r.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a) {
    out.r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      const double r = (constant[a] || constant[b] || matrix.rows() < 2) ? 0.0 : pearson(data[a], data[b]);
      out.r[a][b] = out.r[b][a] = r;
    }
  }
  return out;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}, {"positive", cm.positive}};
}

namespace {
nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double number_or_nan(const nlohmann::json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}
}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"auc", number_or_null(r.auc)}, {"n_test", r.n_test},  {"confusion", to_json(r.cm)}};
}

MetricsReport metrics_from_json(const nlohmann::json& doc) {
  MetricsReport r;
  try {
    r.accuracy = doc.at("accuracy").get<double>();
    r.precision = doc.at("precision").get<double>();
    r.recall = doc.at("recall").get<double>();
    r.f1 = doc.at("f1").get<double>();
    r.auc = number_or_nan(doc.at("auc"));
    r.n_test = doc.at("n_test").get<std::size_t>();
    const auto& cm = doc.at("confusion");
    r.cm.tp = cm.at("tp");
    r.cm.fp = cm.at("fp");
    r.cm.fn = cm.at("fn");
    r.cm.tn = cm.at("tn");
    r.cm.positive = cm.at("positive");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, fmt::format("malformed metrics document: {}", e.what()));
  }
  return r;
}

nlohmann::json to_json(const RocCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points) pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", number_or_null(p.threshold)}});
  return {{"points", std::move(pts)}};
}

RocCurve roc_from_json(const nlohmann::json& doc) {
  RocCurve c;
  for (const auto& p : doc.at("points")) {
    const auto& t = p.at("threshold");
    c.points.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>(),
                        t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>()});
  }
  return c;
}

nlohmann::json to_json(const CorrelationMatrix& m) {
  return {{"labels", m.labels}, {"r", m.r}, {"constant_columns", m.constant_columns}};
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) {
    out += fmt::format("{},{},{}\n", p.fpr, p.tpr, std::isfinite(p.threshold) ? fmt::format("{}", p.threshold) : "inf");
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
  std::string out = "index,accuracy,precision,recall,f1,auc,tp,fp,fn,tn,n_test\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", i, r.accuracy, r.precision, r.recall, r.f1, r.auc, r.cm.tp,
                       r.cm.fp, r.cm.fn, r.cm.tn, r.n_test);
  }
  return out;
}

}  // namespace markerlab
