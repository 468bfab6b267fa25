#include "markerlab/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/synthetic.hpp"

namespace markerlab {

namespace {

std::uint64_t name_stream(std::string_view name) {
  Fingerprint fp;
  fp.add(name);
  return fp.value();
}

double evaluate_metric(std::span<const int> y, std::span<const double> scores, const PermutationOptions& options) {
  return metric_value(evaluate_scores(y, scores, options.threshold), options.metric);
}

void check_evaluation_set(std::span<const int> y) {
  if (y.empty()) fail(ErrorKind::kUsage, "permutation importance needs a non-empty evaluation set");
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos == 0 || static_cast<std::size_t>(pos) == y.size()) {
    fail(ErrorKind::kUsage, "permutation importance needs both classes in the evaluation set");
  }
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(p);
  return p;
}

}  // namespace

std::string_view to_string(AttributionMethod method) {
  return method == AttributionMethod::kGain ? "gain" : "permutation";
}

AttributionMethod parse_attribution(std::string_view text) {
  if (text == "gain") return AttributionMethod::kGain;
  if (text == "permutation") return AttributionMethod::kPermutation;
  fail(ErrorKind::kUsage, fmt::format("unknown attribution method '{}' (gain, permutation)", text));
}

double AttributionReport::score(std::string_view marker) const {
  for (const auto& e : markers) {
    if (e.name == marker) return e.score;
  }
  fail(ErrorKind::kNotFound, fmt::format("marker '{}' not in attribution report", marker));
}

AttributionReport gain_importance(const TrainedModel& model) {
  if (model.family == ModelFamily::kLogistic) {
    fail(ErrorKind::kUsage, "gain importance needs a tree model; use permutation importance");
  }
  std::vector<double> per_column(model.columns.size(), 0.0);
  for (const auto& tree : model.trees) {
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf()) per_column[static_cast<std::size_t>(node.feature)] += node.gain;
    }
  }
  const double total = std::accumulate(per_column.begin(), per_column.end(), 0.0);
  auto share = [&](double v) { return total > 0.0 ? v / total : 0.0; };
  AttributionReport report;
  report.method = AttributionMethod::kGain;
  for (std::size_t c = 0; c < model.columns.size(); ++c) {
    const auto& col = model.columns[c];
    report.columns.push_back({col.label, share(per_column[c]), per_column[c]});
    if (report.markers.empty() || report.markers.back().name != col.marker) report.markers.push_back({col.marker, 0.0, 0.0});
    report.markers.back().raw += per_column[c];
  }
  for (auto& e : report.markers) e.score = share(e.raw);
  return report;
}

AttributionReport permutation_importance(const TrainedModel& model, const DesignMatrix& x, std::span<const int> y,
                                         const PermutationOptions& options) {
  if (options.repeats < 1) fail(ErrorKind::kUsage, "permutation repeats must be >= 1");
  if (x.rows() != y.size()) fail(ErrorKind::kUsage, "evaluation labels do not match rows");
  check_evaluation_set(y);
  const double baseline = evaluate_metric(y, predict_proba(model, x), options);

  AttributionReport report;
  report.method = AttributionMethod::kPermutation;
  report.metric = options.metric;
  report.repeats = options.repeats;
  report.seed = options.seed;
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  for (const auto& marker : x.markers()) {
    const auto cols = x.marker_columns(marker);
    const std::uint64_t marker_seed = mix_seed(options.seed, name_stream(marker));
    double drop = 0.0;
    for (int r = 0; r < options.repeats; ++r) {
      const auto perm = permutation(n, mix_seed(marker_seed, static_cast<std::uint64_t>(r)));
      std::vector<double> values = x.values();
      for (std::size_t i = 0; i < n; ++i) {
        for (auto c : cols) values[i * d + c] = x.at(perm[i], c);
      }
      const DesignMatrix permuted(x.columns(), n, std::move(values), x.sentinel());
      drop += baseline - evaluate_metric(y, predict_proba(model, permuted), options);
    }
    const double score = drop / options.repeats;
    report.markers.push_back({marker, score, score});
  }
  return report;
}

double permutation_importance_of(const TrainedModel& model, const PatientTable& table, std::span<const int> y,
                                 std::string_view marker, const PermutationOptions& options) {
  if (options.repeats < 1) fail(ErrorKind::kUsage, "permutation repeats must be >= 1");
  if (table.row_count() != y.size()) fail(ErrorKind::kUsage, "evaluation labels do not match rows");
  check_evaluation_set(y);
  const auto col = table.schema().find(marker);
  if (!col) fail(ErrorKind::kNotFound, fmt::format("marker '{}' not in table", marker));
  const double baseline = evaluate_metric(y, predict_table(model, table), options);
  const auto cells = table.column(*col);
  const std::uint64_t marker_seed = mix_seed(options.seed, name_stream(marker));
  double drop = 0.0;
  for (int r = 0; r < options.repeats; ++r) {
    const auto perm = permutation(table.row_count(), mix_seed(marker_seed, static_cast<std::uint64_t>(r)));
    std::vector<Cell> shuffled(cells.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = cells[perm[i]];
    const auto permuted = table.with_column(*col, table.schema().markers()[*col], std::move(shuffled));
    drop += baseline - evaluate_metric(y, predict_table(model, permuted), options);
  }
  return drop / options.repeats;
}

AttributionReport average_attribution(std::span<const AttributionReport> reports) {
  if (reports.empty()) fail(ErrorKind::kUsage, "no attribution reports to average");
  AttributionReport out;
  out.method = reports.front().method;
  out.metric = reports.front().metric;
  out.repeats = reports.front().repeats;
  out.seed = reports.front().seed;
  out.models = reports.size();
  auto merge = [&](std::vector<AttributionEntry> AttributionReport::*field) {
    std::vector<AttributionEntry>& dst = out.*field;
    std::map<std::string, std::size_t> slot;
    for (const auto& r : reports) {
      for (const auto& e : r.*field) {
        auto [it, inserted] = slot.try_emplace(e.name, dst.size());
        if (inserted) dst.push_back({e.name, 0.0, 0.0});
        dst[it->second].score += e.score;
        dst[it->second].raw += e.raw;
      }
    }
    for (auto& e : dst) {
      e.score /= static_cast<double>(reports.size());
      e.raw /= static_cast<double>(reports.size());
    }
  };
  merge(&AttributionReport::markers);
  merge(&AttributionReport::columns);
  return out;
}

std::vector<AttributionEntry> top_k(const AttributionReport& report, std::size_t k) {
  auto entries = report.markers;
  std::sort(entries.begin(), entries.end(), [](const AttributionEntry& a, const AttributionEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
  if (entries.size() > k) entries.resize(k);
  return entries;
}

nlohmann::json to_json(const AttributionReport& report) {
  auto entries = [](const std::vector<AttributionEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"name", e.name}, {"score", e.score}, {"raw", e.raw}});
    return a;
  };
  return {{"method", to_string(report.method)}, {"markers", entries(report.markers)},
          {"columns", entries(report.columns)}, {"metric", report.metric},
          {"repeats", report.repeats},          {"seed", report.seed},
          {"models", report.models}};
}

AttributionReport attribution_from_json(const nlohmann::json& doc) {
  AttributionReport r;
  try {
    r.method = parse_attribution(doc.at("method").get<std::string>());
    for (const auto& e : doc.at("markers")) r.markers.push_back({e.at("name"), e.at("score"), e.at("raw")});
    for (const auto& e : doc.at("columns")) r.columns.push_back({e.at("name"), e.at("score"), e.at("raw")});
    r.metric = doc.at("metric");
    r.repeats = doc.at("repeats");
    r.seed = doc.at("seed");
    r.models = doc.at("models");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, fmt::format("malformed attribution document: {}", e.what()));
  }
  return r;
}

std::string attribution_csv(const AttributionReport& report) {
  std::string out = "rank,marker,score,raw\n";
  const auto ranked = top_k(report, report.markers.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::string name = ranked[i].name;
    if (name.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : name) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      name = quoted + "\"";
    }
    out += fmt::format("{},{},{},{}\n", i + 1, name, ranked[i].score, ranked[i].raw);
  }
  return out;
}

std::string_view to_string(Verdict verdict) { return verdict == Verdict::kApproved ? "approved" : "rejected"; }

Verdict parse_verdict(std::string_view text) {
  if (text == "approved" || text == "approve") return Verdict::kApproved;
  if (text == "rejected" || text == "reject") return Verdict::kRejected;
  fail(ErrorKind::kUsage, fmt::format("unknown verdict '{}' (approved, rejected)", text));
}

nlohmann::json to_json(const Decision& d) {
  return {{"marker", d.marker}, {"verdict", to_string(d.verdict)}, {"note", d.note}, {"timestamp", d.timestamp}};
}

Decision decision_from_json(const nlohmann::json& doc) {
  try {
    return {doc.at("marker").get<std::string>(), parse_verdict(doc.at("verdict").get<std::string>()),
            doc.value("note", std::string{}), doc.value("timestamp", std::string{})};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed decision: {}", e.what()));
  }
}

std::string_view to_string(IterationStatus status) {
  switch (status) {
    case IterationStatus::kRunning:
      return "running";
    case IterationStatus::kAwaitingReview:
      return "awaiting_review";
    case IterationStatus::kClosed:
      return "closed";
    case IterationStatus::kFailed:
      return "failed";
  }
  return "?";
}

IterationStatus parse_iteration_status(std::string_view text) {
  if (text == "running") return IterationStatus::kRunning;
  if (text == "awaiting_review") return IterationStatus::kAwaitingReview;
  if (text == "closed") return IterationStatus::kClosed;
  if (text == "failed") return IterationStatus::kFailed;
  fail(ErrorKind::kData, fmt::format("unknown iteration status '{}'", text));
}

HyperParams ExperimentConfig::resolved_hyperparams() const {
  if (hyperparams) return *hyperparams;
  return markerlab::preset(preset, parse_task(task));
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json doc{{"dataset", c.dataset},
                     {"schema", c.schema},
                     {"protocol", to_json(c.protocol)},
                     {"preset", c.preset},
                     {"task", c.task},
                     {"grid_max_points", c.grid_max_points},
                     {"objective", c.objective},
                     {"attribution", to_string(c.attribution)},
                     {"permutation",
                      {{"metric", c.permutation.metric},
                       {"repeats", c.permutation.repeats},
                       {"seed", c.permutation.seed},
                       {"threshold", c.permutation.threshold}}},
                     {"top_k", c.top_k},
                     {"max_iterations", c.max_iterations}};
  if (c.synthetic) doc["synthetic"] = *c.synthetic;
  if (c.hyperparams) doc["hyperparams"] = to_json(*c.hyperparams);
  if (c.grid) doc["grid"] = to_json(*c.grid);
  return doc;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::kUsage, "experiment configuration must be an object");
  ExperimentConfig c;
  try {
    c.dataset = doc.value("dataset", c.dataset);
    if (doc.contains("synthetic")) c.synthetic = doc.at("synthetic");
    c.schema = doc.value("schema", c.schema);
    if (doc.contains("protocol")) c.protocol = protocol_from_json(doc.at("protocol"));
    c.preset = doc.value("preset", c.preset);
    c.task = doc.value("task", c.task);
    if (doc.contains("hyperparams")) c.hyperparams = hyperparams_from_json(doc.at("hyperparams"));
    if (doc.contains("grid")) c.grid = grid_from_json(doc.at("grid"));
    c.grid_max_points = doc.value("grid_max_points", c.grid_max_points);
    c.objective = doc.value("objective", c.objective);
    if (doc.contains("attribution")) c.attribution = parse_attribution(doc.at("attribution").get<std::string>());
    if (doc.contains("permutation")) {
      const auto& p = doc.at("permutation");
      c.permutation.metric = p.value("metric", c.permutation.metric);
      c.permutation.repeats = p.value("repeats", c.permutation.repeats);
      c.permutation.seed = p.value("seed", c.permutation.seed);
      c.permutation.threshold = p.value("threshold", c.permutation.threshold);
    }
    c.top_k = doc.value("top_k", c.top_k);
    c.max_iterations = doc.value("max_iterations", c.max_iterations);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed experiment configuration: {}", e.what()));
  }
  if (c.dataset.empty() == !c.synthetic.has_value()) {
    fail(ErrorKind::kUsage, "experiment configuration needs exactly one of 'dataset' or 'synthetic'");
  }
  if (c.protocol.target.empty()) {
    if (c.synthetic) {
      c.protocol.target = synthetic_spec_from_json(*c.synthetic).target;
    } else {
      c.protocol.target = target_for(parse_task(c.task));
    }
  }
  if (c.top_k < 1) fail(ErrorKind::kUsage, "top_k must be >= 1");
  if (c.max_iterations < 1) fail(ErrorKind::kUsage, "max_iterations must be >= 1");
  if (c.permutation.repeats < 1) fail(ErrorKind::kUsage, "permutation repeats must be >= 1");
  metric_value(MetricsReport{}, c.objective);
  metric_value(MetricsReport{}, c.permutation.metric);
  c.resolved_hyperparams().validate();
  return c;
}

nlohmann::json to_json(const Iteration& it) {
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& d : it.decisions) decisions.push_back(to_json(d));
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& r : it.split_test) splits.push_back(to_json(r));
  return {{"index", it.index},
          {"status", to_string(it.status)},
          {"exclusions", it.exclusions},
          {"features", it.features},
          {"hyperparams", to_json(it.hyperparams)},
          {"val", to_json(it.val)},
          {"test", to_json(it.test)},
          {"split_test", std::move(splits)},
          {"roc", to_json(it.roc)},
          {"attribution", to_json(it.attribution)},
          {"top", it.top},
          {"decisions", std::move(decisions)},
          {"data_fingerprint", it.data_fingerprint},
          {"error", it.error}};
}

Iteration iteration_from_json(const nlohmann::json& doc) {
  Iteration it;
  try {
    it.index = doc.at("index");
    it.status = parse_iteration_status(doc.at("status").get<std::string>());
    it.exclusions = doc.at("exclusions").get<std::vector<std::string>>();
    it.features = doc.at("features").get<std::vector<std::string>>();
    it.hyperparams = hyperparams_from_json(doc.at("hyperparams"));
    it.val = metrics_from_json(doc.at("val"));
    it.test = metrics_from_json(doc.at("test"));
    for (const auto& r : doc.at("split_test")) it.split_test.push_back(metrics_from_json(r));
    it.roc = roc_from_json(doc.at("roc"));
    it.attribution = attribution_from_json(doc.at("attribution"));
    it.top = doc.at("top").get<std::vector<std::string>>();
    for (const auto& d : doc.at("decisions")) it.decisions.push_back(decision_from_json(d));
    it.data_fingerprint = doc.at("data_fingerprint");
    it.error = doc.at("error");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, fmt::format("malformed iteration document: {}", e.what()));
  }
  return it;
}

nlohmann::json to_json(const Ablation& a) {
  nlohmann::json base = nlohmann::json::array();
  nlohmann::json abl = nlohmann::json::array();
  for (const auto& r : a.baseline_splits) base.push_back(to_json(r));
  for (const auto& r : a.ablated_splits) abl.push_back(to_json(r));
  return {{"index", a.index},
          {"status", a.status},
          {"error", a.error},
          {"marker", a.marker},
          {"exclusions", a.exclusions},
          {"hyperparams", to_json(a.hyperparams)},
          {"baseline", to_json(a.baseline)},
          {"ablated", to_json(a.ablated)},
          {"baseline_splits", std::move(base)},
          {"ablated_splits", std::move(abl)},
          {"delta_accuracy", a.ablated.accuracy - a.baseline.accuracy}};
}

Ablation ablation_from_json(const nlohmann::json& doc) {
  Ablation a;
  try {
    a.index = doc.value("index", 0);
    a.status = doc.value("status", std::string("completed"));
    a.error = doc.value("error", std::string{});
    a.marker = doc.at("marker");
    a.exclusions = doc.at("exclusions").get<std::vector<std::string>>();
    a.hyperparams = hyperparams_from_json(doc.at("hyperparams"));
    a.baseline = metrics_from_json(doc.at("baseline"));
    a.ablated = metrics_from_json(doc.at("ablated"));
    for (const auto& r : doc.at("baseline_splits")) a.baseline_splits.push_back(metrics_from_json(r));
    for (const auto& r : doc.at("ablated_splits")) a.ablated_splits.push_back(metrics_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, fmt::format("malformed ablation document: {}", e.what()));
  }
  return a;
}

std::vector<std::string> Experiment::exclusions() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& m) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  };
  for (const auto& m : config.protocol.exclusions) add(m);
  for (const auto& it : iterations) {
    for (const auto& d : it.decisions) {
      if (d.verdict == Verdict::kRejected) add(d.marker);
    }
  }
  return out;
}

nlohmann::json to_json(const Experiment& e) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& it : e.iterations) iterations.push_back(to_json(it));
  nlohmann::json ablations = nlohmann::json::array();
  for (const auto& a : e.ablations) ablations.push_back(to_json(a));
  return {{"id", e.id},
          {"config", to_json(e.config)},
          {"data_fingerprint", e.data_fingerprint},
          {"terminal", e.terminal},
          {"converged", e.converged},
          {"exclusions", e.exclusions()},
          {"iterations", std::move(iterations)},
          {"ablations", std::move(ablations)}};
}

void check_can_start(const Experiment& experiment) {
  if (experiment.terminal) fail(ErrorKind::kConflict, fmt::format("experiment {} is terminal", experiment.id));
  if (!experiment.iterations.empty()) {
    const auto& last = experiment.iterations.back();
    if (last.status == IterationStatus::kRunning) {
      fail(ErrorKind::kConflict, fmt::format("iteration {} is still running", last.index));
    }
    if (last.status == IterationStatus::kAwaitingReview) {
      fail(ErrorKind::kConflict, fmt::format("iteration {} is awaiting review", last.index));
    }
  }
}

Iteration run_iteration(const Experiment& experiment, const PatientTable& table) {
  check_can_start(experiment);
  const auto& cfg = experiment.config;
  Iteration it;
  it.index = static_cast<int>(experiment.iterations.size());
  it.exclusions = experiment.exclusions();
  ProtocolConfig protocol = cfg.protocol;
  protocol.exclusions = it.exclusions;
  const PreparedData data = prepare(table, protocol);
  it.data_fingerprint = table.fingerprint();
  for (const auto& m : data.features.schema().markers()) it.features.push_back(m.name);
  try {
    it.hyperparams = cfg.resolved_hyperparams();
    if (cfg.grid) {
      GridOptions options;
      options.objective = cfg.objective;
      options.max_points = cfg.grid_max_points;
      it.hyperparams = grid_search(*cfg.grid, data, protocol, options).best;
    }
    const auto ev = evaluate(data, it.hyperparams, protocol);
    it.val = ev.val;
    it.test = ev.test;
    std::vector<AttributionReport> reports;
    std::vector<int> pooled_y;
    std::vector<double> pooled_scores;
    for (std::size_t s = 0; s < ev.splits.size(); ++s) {
      const auto& outcome = ev.splits[s];
      it.split_test.push_back(outcome.test);
      it.models.push_back(outcome.model);
      pooled_y.insert(pooled_y.end(), outcome.test_y.begin(), outcome.test_y.end());
      pooled_scores.insert(pooled_scores.end(), outcome.test_scores.begin(), outcome.test_scores.end());
      if (cfg.attribution == AttributionMethod::kGain) {
        reports.push_back(gain_importance(outcome.model));
      } else {
        PermutationOptions options = cfg.permutation;
        options.seed = mix_seed(cfg.permutation.seed, s);
        reports.push_back(permutation_importance(outcome.model, outcome.val_x, outcome.val_y, options));
        reports.back().seed = cfg.permutation.seed;
      }
    }
    it.attribution = average_attribution(reports);
    it.roc = roc_auc(pooled_y, pooled_scores).curve;
    for (const auto& e : top_k(it.attribution, cfg.top_k)) it.top.push_back(e.name);
    it.status = IterationStatus::kAwaitingReview;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kTraining && e.kind() != ErrorKind::kData) throw;
    spdlog::error("iteration {} failed: {}", it.index, e.what());
    it.status = IterationStatus::kFailed;
    it.error = e.what();
    it.models.clear();
  }
  return it;
}

Termination check_termination(const Iteration& iteration, std::span<const Decision> decisions, int max_iterations) {
  Termination t;
  const bool any_rejected =
      std::any_of(decisions.begin(), decisions.end(), [](const Decision& d) { return d.verdict == Verdict::kRejected; });
  bool top_approved = true;
  for (const auto& m : iteration.top) {
    const auto it = std::find_if(decisions.begin(), decisions.end(), [&](const Decision& d) { return d.marker == m; });
    if (it == decisions.end() || it->verdict != Verdict::kApproved) top_approved = false;
  }
  if (top_approved && !any_rejected) {
    t.terminal = true;
    t.converged = true;
  } else if (iteration.index + 1 >= max_iterations) {
    t.terminal = true;
    t.converged = false;
  }
  return t;
}

Termination submit_decisions(Experiment& experiment, int index, std::vector<Decision> decisions) {
  if (index < 0 || static_cast<std::size_t>(index) >= experiment.iterations.size()) {
    fail(ErrorKind::kNotFound, fmt::format("experiment {} has no iteration {}", experiment.id, index));
  }
  Iteration& it = experiment.iterations[static_cast<std::size_t>(index)];
  if (it.status != IterationStatus::kAwaitingReview) {
    fail(ErrorKind::kConflict, fmt::format("iteration {} is {}, not awaiting review", index, to_string(it.status)));
  }
  const auto excluded = experiment.exclusions();
  std::set<std::string> seen;
  for (const auto& d : decisions) {
    if (std::find(excluded.begin(), excluded.end(), d.marker) != excluded.end()) {
      fail(ErrorKind::kUsage, fmt::format("marker '{}' is already excluded", d.marker));
    }
    if (std::find(it.features.begin(), it.features.end(), d.marker) == it.features.end()) {
      fail(ErrorKind::kUsage, fmt::format("unknown marker '{}' in decisions", d.marker));
    }
    if (!seen.insert(d.marker).second) fail(ErrorKind::kUsage, fmt::format("duplicate decision for '{}'", d.marker));
  }
  std::vector<std::string> missing;
  for (const auto& m : it.top) {
    if (!seen.count(m)) missing.push_back(m);
  }
  if (!missing.empty()) {
    fail(ErrorKind::kUsage, fmt::format("decisions must cover every top-{} marker; missing: {}", it.top.size(),
                                        fmt::join(missing, ", ")));
  }
  const auto t = check_termination(it, decisions, experiment.config.max_iterations);
  it.decisions = std::move(decisions);
  it.status = IterationStatus::kClosed;
  experiment.terminal = t.terminal;
  experiment.converged = t.converged;
  return t;
}

Ablation ablate(const Experiment& experiment, const PatientTable& table, std::string_view marker) {
  const auto excluded = experiment.exclusions();
  if (std::find(excluded.begin(), excluded.end(), marker) != excluded.end()) {
    fail(ErrorKind::kUsage, fmt::format("marker '{}' is already excluded", marker));
  }
  ProtocolConfig protocol = experiment.config.protocol;
  protocol.exclusions = excluded;
  const PreparedData data = prepare(table, protocol);
  if (!data.features.schema().find(marker)) {
    fail(ErrorKind::kUsage, fmt::format("marker '{}' is not a current feature", marker));
  }
  Ablation a;
  a.marker = std::string(marker);
  a.index = static_cast<int>(experiment.ablations.size());
  a.exclusions = excluded;
  a.hyperparams = experiment.config.resolved_hyperparams();
  for (auto it = experiment.iterations.rbegin(); it != experiment.iterations.rend(); ++it) {
    if (it->status == IterationStatus::kAwaitingReview || it->status == IterationStatus::kClosed) {
      a.hyperparams = it->hyperparams;
      break;
    }
  }
  const auto base = evaluate(data, a.hyperparams, protocol);
  const std::string removed[] = {a.marker};
  const auto abl = evaluate(without_markers(data, removed), a.hyperparams, protocol);
  a.baseline = base.test;
  a.ablated = abl.test;
  for (const auto& s : base.splits) a.baseline_splits.push_back(s.test);
  for (const auto& s : abl.splits) a.ablated_splits.push_back(s.test);
  return a;
}

}  // namespace markerlab
