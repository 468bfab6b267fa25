// markerlab command-line front end. Every verb writes its outputs and a
// manifest.json into --out.
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/service.hpp"
#include "markerlab/synthetic.hpp"

namespace fs = std::filesystem;
using namespace markerlab;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

void write_text(const fs::path& path, std::string_view text) { write_atomic(path, text); }
void write_json(const fs::path& path, const json& doc) { write_atomic(path, doc.dump(2) + "\n"); }

// Flags shared by every verb that needs a dataset and a protocol.
struct RunFlags {
  std::string config;
  std::string data;
  std::string synthetic;
  std::string schema = "builtin";
  std::string task = "survival";
  std::string target;
  std::string positive;
  std::string preset = "lgbm-like";
  std::string params;
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<std::string> exclude;
  double rebalance = 1.0;
  double threshold = 0.5;
  std::string attribution = "gain";
  std::string metric = "accuracy";
  int repeats = 10;
  std::uint64_t perm_seed = 0;
  std::size_t top_k = 10;
  int max_iterations = 10;
  std::map<std::string, CLI::Option*> opts;

  void add_to(CLI::App* app) {
    opts["config"] = app->add_option("--config", config, "run configuration or manifest document");
    opts["data"] = app->add_option("--data", data, "patient table (CSV)");
    opts["synthetic"] = app->add_option("--synthetic", synthetic, "synthetic cohort spec (JSON)");
    opts["schema"] = app->add_option("--schema", schema, "marker schema document or 'builtin'");
    opts["task"] = app->add_option("--task", task, "survival | aki");
    opts["target"] = app->add_option("--target", target, "target marker (default from task)");
    opts["positive"] = app->add_option("--positive", positive, "positive class label");
    opts["preset"] = app->add_option("--preset,--family", preset, "lgbm-like | xgb-like | cat-like | rf | logistic");
    opts["params"] = app->add_option("--params", params, "hyperparameter document overriding the preset");
    opts["k"] = app->add_option("--splits,-k", k, "Monte Carlo splits");
    opts["seed"] = app->add_option("--seed", seed, "base split seed");
    opts["exclude"] = app->add_option("--exclude", exclude, "clinician-excluded marker (repeatable)");
    opts["rebalance"] = app->add_option("--rebalance", rebalance, "minority:majority ratio after upsampling, 0 = off");
    opts["threshold"] = app->add_option("--threshold", threshold, "decision threshold");
    opts["attribution"] = app->add_option("--attribution", attribution, "gain | permutation");
    opts["metric"] = app->add_option("--perm-metric", metric, "metric for permutation importance");
    opts["repeats"] = app->add_option("--perm-repeats", repeats, "permutation repeats");
    opts["perm_seed"] = app->add_option("--perm-seed", perm_seed, "permutation seed");
    opts["top_k"] = app->add_option("--top-k", top_k, "markers shown for review");
    opts["max_iterations"] = app->add_option("--max-iterations", max_iterations, "refinement round limit");
  }

  bool given(const std::string& name) const { return opts.at(name)->count() > 0; }

  json document() const {
    json doc = json::object();
    if (!config.empty()) {
      doc = read_json(config);
      if (doc.value("format", "") == "markerlab.manifest") doc = doc.at("config");
    }
    auto& protocol = doc["protocol"];
    if (protocol.is_null()) protocol = json::object();
    if (given("data")) {
      doc["dataset"] = fs::absolute(data).lexically_normal().string();
      doc.erase("synthetic");
    }
    if (given("synthetic")) {
      doc["synthetic"] = read_json(synthetic);
      doc.erase("dataset");
    }
    if (given("schema") || !doc.contains("schema")) doc["schema"] = schema;
    if (given("task") || !doc.contains("task")) doc["task"] = task;
    if (given("preset") || !doc.contains("preset")) doc["preset"] = preset;
    if (given("params")) doc["hyperparams"] = read_json(params);
    if (given("target")) protocol["target"] = target;
    if (given("positive")) protocol["positive_class"] = positive;
    if (given("k")) protocol["k"] = k;
    if (given("seed")) protocol["base_seed"] = seed;
    if (given("exclude")) protocol["exclusions"] = exclude;
    if (given("rebalance")) protocol["rebalance_ratio"] = rebalance;
    if (given("threshold")) protocol["threshold"] = threshold;
    if (given("attribution")) doc["attribution"] = attribution;
    auto& perm = doc["permutation"];
    if (perm.is_null()) perm = json::object();
    if (given("metric")) perm["metric"] = metric;
    if (given("repeats")) perm["repeats"] = repeats;
    if (given("perm_seed")) perm["seed"] = perm_seed;
    if (given("top_k")) doc["top_k"] = top_k;
    if (given("max_iterations")) doc["max_iterations"] = max_iterations;
    return doc;
  }

  ExperimentConfig resolve() const { return experiment_config_from_json(document()); }
};

struct Context {
  fs::path out;
  std::vector<std::string> argv;

  void manifest(std::string_view verb, const ExperimentConfig& cfg, const PatientTable& table,
                const std::vector<std::string>& outputs) const {
    auto doc = make_manifest(verb, cfg, table);
    doc["argv"] = argv;
    doc["outputs"] = outputs;
    write_json(out / "manifest.json", doc);
  }

  void plain_manifest(std::string_view verb, json extra, const std::vector<std::string>& outputs) const {
    json doc = {{"format", "markerlab.manifest"}, {"format_version", 1}, {"producer_version", std::string(kVersion)},
                {"verb", verb},                   {"argv", argv},        {"outputs", outputs}};
    doc.update(extra);
    write_json(out / "manifest.json", doc);
  }
};

void print_metrics(std::string_view label, const MetricsReport& r) {
  fmt::print("{:<6} accuracy={:.4f} precision={:.4f} recall={:.4f} f1={:.4f} auc={:.4f}\n", label, r.accuracy,
             r.precision, r.recall, r.f1, r.auc);
}

void print_ranking(const AttributionReport& report, std::size_t k) {
  int rank = 1;
  for (const auto& e : top_k(report, k)) fmt::print("  {:>2}. {:<32} {:.4f}\n", rank++, e.name, e.score);
}

// --- verbs -----------------------------------------------------------------

int cmd_synth(const Context& ctx, const std::string& spec_path, std::size_t rows, std::uint64_t seed,
              const std::vector<std::string>& informative, const std::string& leakage, double determinism,
              const CLI::App& app) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = synthetic_spec_from_json(read_json(spec_path));
  if (app.get_option("--rows")->count()) spec.n_rows = rows;
  if (app.get_option("--seed")->count()) spec.seed = seed;
  for (const auto& item : informative) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kUsage, fmt::format("--informative expects name=effect, got '{}'", item));
    spec.informative.push_back({item.substr(0, eq), std::stod(item.substr(eq + 1))});
  }
  if (!leakage.empty()) spec.leakage = LeakageSpec{leakage, determinism};
  const auto table = generate_synthetic(spec);
  write_table(table, ctx.out / "data.csv");
  save_schema(table.schema(), ctx.out / "schema.json");
  write_json(ctx.out / "spec.json", to_json(spec));
  ctx.plain_manifest("synth",
                     {{"config", {{"synthetic", to_json(spec)}}},
                      {"data", {{"fingerprint", table.fingerprint()}, {"rows", table.row_count()}}},
                      {"seeds", {{"synthetic_seed", spec.seed}}}},
                     {"data.csv", "schema.json", "spec.json"});
  fmt::print("wrote {} rows x {} markers to {}\n", table.row_count(), table.column_count(),
             (ctx.out / "data.csv").string());
  return 0;
}

int cmd_ingest(const Context& ctx, const std::string& data, const std::string& schema_ref, bool strict, double drop) {
  IngestOptions options;
  options.strict = strict;
  const auto result = ingest_table(data, resolve_schema(schema_ref), options);
  const auto& t = result.table;
  json missing = json::object();
  for (std::size_t c = 0; c < t.column_count(); ++c) {
    missing[t.schema().markers()[c].name] = static_cast<double>(t.missing_count(c)) / std::max<std::size_t>(1, t.row_count());
  }
  const auto dropped = drop_sparse_markers(t, drop).dropped;
  const json report = {{"rows", t.row_count()},
                       {"markers", t.column_count()},
                       {"fingerprint", t.fingerprint()},
                       {"warnings", result.warnings},
                       {"missing_fraction", missing},
                       {"sparse_markers", dropped}};
  write_table(t, ctx.out / "table.csv");
  save_schema(t.schema(), ctx.out / "schema.json");
  write_json(ctx.out / "ingest.json", report);
  ctx.plain_manifest("ingest",
                     {{"config", {{"dataset", fs::absolute(data).string()}, {"schema", schema_ref}, {"strict", strict}}},
                      {"data", {{"fingerprint", t.fingerprint()}, {"rows", t.row_count()}}}},
                     {"table.csv", "schema.json", "ingest.json"});
  fmt::print("{} rows, {} markers, {} warnings\n", t.row_count(), t.column_count(), result.warnings.size());
  for (const auto& w : result.warnings) fmt::print("  warning: {}\n", w);
  if (!dropped.empty()) fmt::print("  above {:.0f}% missing: {}\n", drop * 100, fmt::join(dropped, ", "));
  return 0;
}

int cmd_validate(const Context& ctx, const std::string& data, const std::string& schema_ref, bool strict) {
  const auto t = ingest_table(data, resolve_schema(schema_ref)).table;
  const auto report = validate_ranges(t);
  write_json(ctx.out / "validation.json", to_json(report));
  ctx.plain_manifest("validate",
                     {{"config", {{"dataset", fs::absolute(data).string()}, {"schema", schema_ref}}},
                      {"data", {{"fingerprint", t.fingerprint()}, {"rows", t.row_count()}}}},
                     {"validation.json"});
  fmt::print("{} range violations\n", report.violations.size());
  for (std::size_t i = 0; i < std::min<std::size_t>(report.violations.size(), 20); ++i) {
    const auto& v = report.violations[i];
    fmt::print("  row {} {} = {}\n", v.row, v.marker, v.value);
  }
  if (strict && !report.ok()) return exit_code(ErrorKind::kData);
  return 0;
}

int cmd_train(const Context& ctx, const RunFlags& flags, std::size_t split_index) {
  const auto cfg = flags.resolve();
  const auto table = load_dataset(cfg);
  const auto data = prepare(table, cfg.protocol);
  const auto splits = mc_splits(data.labels.size(), data.labels, cfg.protocol.k, cfg.protocol.base_seed, cfg.protocol.split);
  if (split_index >= splits.size()) fail(ErrorKind::kUsage, fmt::format("split {} out of range (k={})", split_index, splits.size()));
  const auto outcome = run_split(data, splits[split_index], split_index, cfg.resolved_hyperparams(), cfg.protocol);
  write_json(ctx.out / "model.json", serialize_model(outcome.model));
  write_json(ctx.out / "metrics.json", {{"split", split_index}, {"val", to_json(outcome.val)}, {"test", to_json(outcome.test)}});
  write_json(ctx.out / "split.json", to_json(outcome.split));
  ctx.manifest("train", cfg, table, {"model.json", "metrics.json", "split.json"});
  for (const auto& note : outcome.model.meta.notes) fmt::print("note: {}\n", note);
  print_metrics("val", outcome.val);
  print_metrics("test", outcome.test);
  return 0;
}

int cmd_evaluate(const Context& ctx, const RunFlags& flags, const std::string& model_path) {
  const auto cfg = flags.resolve();
  const auto table = load_dataset(cfg);
  if (!model_path.empty()) {
    const auto model = deserialize_model(read_json(model_path));
    const auto selection = select_target(table, cfg.protocol.target, cfg.protocol.positive_class);
    const auto scores = predict_table(model, selection.features);
    const auto report = evaluate_scores(selection.labels, scores, cfg.protocol.threshold);
    const auto roc = roc_auc(selection.labels, scores);
    write_json(ctx.out / "metrics.json", {{"model", fs::absolute(model_path).string()}, {"all_rows", to_json(report)}});
    write_text(ctx.out / "roc.csv", roc_csv(roc.curve));
    ctx.manifest("evaluate", cfg, table, {"metrics.json", "roc.csv"});
    print_metrics("all", report);
    return 0;
  }
  const auto data = prepare(table, cfg.protocol);
  const auto ev = evaluate(data, cfg.resolved_hyperparams(), cfg.protocol);
  std::vector<int> y;
  std::vector<double> s;
  std::vector<MetricsReport> per_split;
  json splits = json::array();
  for (const auto& o : ev.splits) {
    y.insert(y.end(), o.test_y.begin(), o.test_y.end());
    s.insert(s.end(), o.test_scores.begin(), o.test_scores.end());
    per_split.push_back(o.test);
    splits.push_back(to_json(o.split));
  }
  const auto roc = roc_auc(y, s);
  json splits_metrics = json::array();
  for (const auto& r : per_split) splits_metrics.push_back(to_json(r));
  write_json(ctx.out / "metrics.json", {{"val", to_json(ev.val)}, {"test", to_json(ev.test)}, {"split_test", splits_metrics}});
  write_text(ctx.out / "metrics.csv", metrics_csv(per_split));
  write_json(ctx.out / "roc.json", to_json(roc.curve));
  write_text(ctx.out / "roc.csv", roc_csv(roc.curve));
  write_json(ctx.out / "splits.json", splits);
  ctx.manifest("evaluate", cfg, table, {"metrics.json", "metrics.csv", "roc.json", "roc.csv", "splits.json"});
  if (!data.dropped_sparse.empty()) fmt::print("dropped (sparse): {}\n", fmt::join(data.dropped_sparse, ", "));
  if (!data.unknown_exclusions.empty()) fmt::print("unknown exclusions: {}\n", fmt::join(data.unknown_exclusions, ", "));
  print_metrics("val", ev.val);
  print_metrics("test", ev.test);
  fmt::print("pooled test auc={:.4f} over {} rows\n", roc.auc, y.size());
  return 0;
}

int cmd_gridsearch(const Context& ctx, const RunFlags& flags, const std::string& grid_path, const std::string& objective,
                   unsigned threads, std::size_t max_points) {
  const auto cfg = flags.resolve();
  const auto table = load_dataset(cfg);
  const auto data = prepare(table, cfg.protocol);
  const HyperGrid grid = grid_path.empty() ? builtin_grid(cfg.preset, parse_task(cfg.task)) : grid_from_json(read_json(grid_path));
  GridOptions options;
  options.objective = objective;
  options.threads = threads;
  options.max_points = max_points;
  const auto result = grid_search(grid, data, cfg.protocol, options);
  write_text(ctx.out / "leaderboard.csv", leaderboard_csv(grid, result));
  write_json(ctx.out / "result.json", to_json(result));
  write_json(ctx.out / "grid.json", to_json(grid));
  write_json(ctx.out / "best.json", preset_document(result.best));
  auto m = make_manifest("gridsearch", cfg, table);
  m["argv"] = ctx.argv;
  m["grid"] = to_json(grid);
  m["objective"] = objective;
  m["outputs"] = {"leaderboard.csv", "result.json", "grid.json", "best.json"};
  write_json(ctx.out / "manifest.json", m);
  fmt::print("{} points evaluated, {} failed\n", result.evaluated, result.failures.size());
  for (std::size_t i = 0; i < std::min<std::size_t>(5, result.leaderboard.size()); ++i) {
    const auto& row = result.leaderboard[i];
    std::vector<std::string> parts;
    for (const auto& axis : grid.axes) parts.push_back(fmt::format("{}={}", axis.name, get_param(row.hyperparams, axis.name)));
    fmt::print("  #{} {}={:.4f} {}\n", i + 1, objective, row.objective, fmt::join(parts, " "));
  }
  if (result.leaderboard.empty()) return exit_code(ErrorKind::kTraining);
  return 0;
}

int cmd_explain(const Context& ctx, const RunFlags& flags) {
  Experiment e;
  e.id = "adhoc";
  e.config = flags.resolve();
  const auto table = load_dataset(e.config);
  e.data_fingerprint = table.fingerprint();
  const auto it = run_iteration(e, table);
  if (it.status == IterationStatus::kFailed) fail(ErrorKind::kTraining, it.error);
  write_json(ctx.out / "attribution.json", to_json(it.attribution));
  write_text(ctx.out / "attribution.csv", attribution_csv(it.attribution));
  write_json(ctx.out / "metrics.json", {{"val", to_json(it.val)}, {"test", to_json(it.test)}});
  ctx.manifest("explain", e.config, table, {"attribution.json", "attribution.csv", "metrics.json"});
  fmt::print("{} attribution, top {}:\n", to_string(it.attribution.method), e.config.top_k);
  print_ranking(it.attribution, e.config.top_k);
  print_metrics("test", it.test);
  return 0;
}

// Scripted decisions: an array (position = iteration index) or an object keyed
// by index. Each entry is a list of decision documents, or {"reject": [...]}
// which approves every other top-k marker.
json scripted_decisions(const json& script, int index, const std::vector<std::string>& top) {
  json entry;
  if (script.is_array()) {
    if (index >= static_cast<int>(script.size())) return nullptr;
    entry = script[static_cast<std::size_t>(index)];
  } else {
    const auto key = std::to_string(index);
    if (!script.contains(key)) return nullptr;
    entry = script.at(key);
  }
  if (entry.is_array()) return {{"decisions", entry}};
  const auto rejected = entry.value("reject", std::vector<std::string>{});
  const auto note = entry.value("note", std::string{});
  json out = json::array();
  for (const auto& m : top) {
    const bool reject = std::find(rejected.begin(), rejected.end(), m) != rejected.end();
    json d = {{"marker", m}, {"verdict", reject ? "rejected" : "approved"}, {"note", reject ? note : ""}};
    if (entry.contains("timestamp")) d["timestamp"] = entry.at("timestamp");
    out.push_back(std::move(d));
  }
  for (const auto& r : rejected) {
    if (std::find(top.begin(), top.end(), r) == top.end()) out.push_back({{"marker", r}, {"verdict", "rejected"}, {"note", note}});
  }
  return {{"decisions", out}};
}

json interactive_decisions(const std::vector<std::string>& top) {
  json out = json::array();
  fmt::print("review each marker: [a]pprove (default), [r]eject, [q]uit\n");
  for (const auto& m : top) {
    fmt::print("  {} > ", m);
    std::fflush(stdout);
    std::string line;
    if (!std::getline(std::cin, line)) return nullptr;
    line = trim(line);
    if (line == "q") return nullptr;
    const bool reject = !line.empty() && (line[0] == 'r' || line[0] == 'R');
    std::string note;
    if (reject) {
      fmt::print("    reason > ");
      std::fflush(stdout);
      std::getline(std::cin, note);
    }
    out.push_back({{"marker", m}, {"verdict", reject ? "rejected" : "approved"}, {"note", trim(note)}});
  }
  return {{"decisions", out}};
}

int cmd_refine(const Context& ctx, const RunFlags& flags, const fs::path& store_root, std::string id,
               const std::string& decisions_path, int rounds) {
  Service service(ExperimentStore(store_root), {}, false);
  if (id.empty()) {
    id = service.create(to_json(flags.resolve()));
    fmt::print("created experiment {}\n", id);
  }
  const json script = decisions_path.empty() ? json(nullptr) : read_json(decisions_path);
  int exit = 0;
  for (int round = 0; rounds <= 0 || round < rounds; ++round) {
    const auto state = service.get(id);
    if (state.at("terminal").get<bool>()) break;
    int n = 0;
    const auto& its = state.at("iterations");
    if (!its.empty() && its.back().at("status") == "awaiting_review") {
      n = its.back().at("index");
    } else {
      n = service.start_iteration(id);
    }
    const auto it = service.iteration(id, n);
    if (it.at("status") == "failed") {
      fmt::print("iteration {} failed: {}\n", n, it.at("error").get<std::string>());
      exit = exit_code(ErrorKind::kTraining);
      break;
    }
    const auto top = it.at("top").get<std::vector<std::string>>();
    const auto report = attribution_from_json(it.at("attribution"));
    fmt::print("iteration {} (excluded: {})\n", n, fmt::join(it.at("exclusions").get<std::vector<std::string>>(), ", "));
    print_ranking(report, top.size());
    print_metrics("test", metrics_from_json(it.at("test")));
    const json body = script.is_null() ? interactive_decisions(top) : scripted_decisions(script, n, top);
    if (body.is_null()) {
      fmt::print("iteration {} left awaiting review\n", n);
      break;
    }
    const auto next = service.post_decisions(id, n, body);
    if (next.at("terminal").get<bool>()) {
      fmt::print("experiment {} terminal ({})\n", id, next.at("converged").get<bool>() ? "converged" : "iteration limit");
      break;
    }
  }
  const auto ledger = service.get(id);
  write_json(ctx.out / "ledger.json", ledger);
  write_json(ctx.out / "compare.json", service.compare(id));
  auto m = service.manifest(id);
  m["argv"] = ctx.argv;
  m["verb"] = "refine";
  m["store"] = fs::absolute(store_root).string();
  m["outputs"] = {"ledger.json", "compare.json"};
  write_json(ctx.out / "manifest.json", m);
  return exit;
}

int cmd_ablate(const Context& ctx, const RunFlags& flags, const fs::path& store_root, const std::string& id,
               const std::string& marker) {
  json result;
  if (!id.empty()) {
    Service service(ExperimentStore(store_root), {}, false);
    const int index = service.start_ablation(id, marker);
    result = service.ablation(id, index);
    auto m = service.manifest(id);
    m["argv"] = ctx.argv;
    m["verb"] = "ablate";
    m["outputs"] = {"ablation.json"};
    write_json(ctx.out / "manifest.json", m);
  } else {
    Experiment e;
    e.id = "adhoc";
    e.config = flags.resolve();
    const auto table = load_dataset(e.config);
    e.data_fingerprint = table.fingerprint();
    result = to_json(ablate(e, table, marker));
    ctx.manifest("ablate", e.config, table, {"ablation.json"});
  }
  write_json(ctx.out / "ablation.json", result);
  if (result.value("status", "") == "failed") fail(ErrorKind::kTraining, result.value("error", std::string{}));
  print_metrics("with", metrics_from_json(result.at("baseline")));
  print_metrics("w/o", metrics_from_json(result.at("ablated")));
  fmt::print("delta accuracy {:+.4f}\n", result.at("delta_accuracy").get<double>());
  return 0;
}

int cmd_compare(const Context& ctx, const fs::path& store_root, const std::string& id) {
  Service service(ExperimentStore(store_root), {}, false);
  const auto doc = service.compare(id);
  write_json(ctx.out / "compare.json", doc);
  ctx.plain_manifest("compare", {{"id", id}, {"store", fs::absolute(store_root).string()}}, {"compare.json"});
  fmt::print("{:>4} {:<16} {:>9} {:>9} {:>9}  newly excluded\n", "iter", "status", "accuracy", "f1", "auc");
  for (const auto& row : doc.at("iterations")) {
    if (row.contains("test")) {
      const auto t = metrics_from_json(row.at("test"));
      fmt::print("{:>4} {:<16} {:>9.4f} {:>9.4f} {:>9.4f}  {}\n", row.at("index").get<int>(), row.at("status").get<std::string>(),
                 t.accuracy, t.f1, t.auc, fmt::join(row.at("newly_excluded").get<std::vector<std::string>>(), ", "));
    } else {
      fmt::print("{:>4} {:<16} {}\n", row.at("index").get<int>(), row.at("status").get<std::string>(),
                 row.value("error", std::string{}));
    }
  }
  for (const auto& a : doc.at("ablations")) {
    fmt::print("ablation {} '{}': {} delta accuracy {:+.4f}\n", a.at("index").get<int>(), a.at("marker").get<std::string>(),
               a.at("status").get<std::string>(), a.at("delta_accuracy").get<double>());
  }
  return 0;
}

int cmd_serve(const fs::path& store_root, const std::string& host, int port, const std::string& token) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  Service service{ExperimentStore(store_root)};
  HttpServer server(service, token);
  const int bound = server.bind(host, port);
  fmt::print("listening on http://{}:{}\n", host, bound);
  std::fflush(stdout);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.wait_idle();
  return 0;
}

int cmd_export(const Context& ctx, const fs::path& store_root, const std::string& id) {
  Service service(ExperimentStore(store_root), {}, false);
  auto m = service.manifest(id);
  write_json(ctx.out / "manifest.json", m);
  const auto src = service.store().dir(id);
  fs::copy(src, ctx.out / id, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::remove(ctx.out / id / "lock");
  fmt::print("exported {} to {}\n", id, ctx.out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("markerlab");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"markerlab: clinician-in-the-loop marker refinement workbench"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  std::string out;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");
  app.add_option("-o,--out", out, "output directory (default markerlab-out/<verb>)");
  std::string store = ExperimentStore::default_root().string();
  std::string experiment;

  auto* synth = app.add_subcommand("synth", "generate a planted-signal cohort");
  std::string spec_path, leakage;
  std::size_t rows = 2000;
  std::uint64_t synth_seed = 7;
  std::vector<std::string> informative;
  double determinism = 0.95;
  synth->add_option("--spec", spec_path, "synthetic spec document");
  synth->add_option("--rows", rows, "rows");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--informative", informative, "planted marker name=effect (repeatable)");
  synth->add_option("--leakage", leakage, "leakage marker name");
  synth->add_option("--determinism", determinism, "probability the leakage marker equals the label");

  auto* ingest = app.add_subcommand("ingest", "load a patient table and report on it");
  auto* validate = app.add_subcommand("validate", "check numeric markers against their ranges");
  std::string data, schema = "builtin";
  bool strict = false;
  double drop = 0.75;
  for (auto* sub : {ingest, validate}) {
    sub->add_option("--data", data, "patient table (CSV)")->required();
    sub->add_option("--schema", schema, "marker schema document or 'builtin'");
    sub->add_flag("--strict", strict, "unknown columns and range violations are errors");
  }
  ingest->add_option("--drop-threshold", drop, "missing fraction above which a marker is dropped");

  RunFlags flags;
  auto* train = app.add_subcommand("train", "train one model on one split");
  std::size_t split_index = 0;
  flags.add_to(train);
  train->add_option("--split", split_index, "split index");

  RunFlags eval_flags;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "k-split evaluation, or score a saved model");
  std::string model_path;
  eval_flags.add_to(evaluate_cmd);
  evaluate_cmd->add_option("--model", model_path, "saved model to score on the whole table");

  RunFlags grid_flags;
  auto* gridsearch = app.add_subcommand("gridsearch", "exhaustive hyperparameter search");
  std::string grid_path, objective = "accuracy";
  unsigned threads = 1;
  std::size_t max_points = 512;
  grid_flags.add_to(gridsearch);
  gridsearch->add_option("--grid", grid_path, "grid document (default: the preset's built-in grid)");
  gridsearch->add_option("--objective", objective, "validation metric to maximize");
  gridsearch->add_option("--threads", threads, "worker threads");
  gridsearch->add_option("--max-points", max_points, "refuse grids larger than this");

  RunFlags explain_flags;
  auto* explain = app.add_subcommand("explain", "per-marker attribution averaged over splits");
  explain_flags.add_to(explain);

  RunFlags refine_flags;
  auto* refine = app.add_subcommand("refine", "clinician exclude-and-retrain loop");
  std::string decisions_path;
  int rounds = 0;
  refine_flags.add_to(refine);
  refine->add_option("--decisions", decisions_path, "scripted decisions document (default: prompt)");
  refine->add_option("--rounds", rounds, "stop after this many rounds (0 = until terminal)");

  RunFlags ablate_flags;
  auto* ablate_cmd = app.add_subcommand("ablate", "metrics with and without one marker");
  std::string marker;
  ablate_flags.add_to(ablate_cmd);
  ablate_cmd->add_option("--marker", marker, "marker to remove")->required();

  auto* compare = app.add_subcommand("compare", "per-iteration metrics of an experiment");
  auto* serve = app.add_subcommand("serve", "HTTP API over the experiment store");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port, 0 = ephemeral");
  serve->add_option("--token", token, "bearer token required on every route except /health");

  auto* export_cmd = app.add_subcommand("export", "copy an experiment and its manifest");

  for (auto* sub : {refine, ablate_cmd, compare, serve, export_cmd}) {
    sub->add_option("--store", store, "experiment store root (env MARKERLAB_STORE)");
  }
  refine->add_option("--experiment", experiment, "resume an existing experiment");
  ablate_cmd->add_option("--experiment", experiment, "experiment whose exclusion set is used");
  compare->add_option("--experiment", experiment, "experiment id")->required();
  export_cmd->add_option("--experiment", experiment, "experiment id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::kUsage);
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  auto* sub = app.get_subcommands().front();
  Context ctx;
  ctx.out = out.empty() ? fs::path("markerlab-out") / sub->get_name() : fs::path(out);
  ctx.argv.assign(argv, argv + argc);

  try {
    if (sub != serve) fs::create_directories(ctx.out);
    if (sub == synth) return cmd_synth(ctx, spec_path, rows, synth_seed, informative, leakage, determinism, *synth);
    if (sub == ingest) return cmd_ingest(ctx, data, schema, strict, drop);
    if (sub == validate) return cmd_validate(ctx, data, schema, strict);
    if (sub == train) return cmd_train(ctx, flags, split_index);
    if (sub == evaluate_cmd) return cmd_evaluate(ctx, eval_flags, model_path);
    if (sub == gridsearch) return cmd_gridsearch(ctx, grid_flags, grid_path, objective, threads, max_points);
    if (sub == explain) return cmd_explain(ctx, explain_flags);
    if (sub == refine) return cmd_refine(ctx, refine_flags, store, experiment, decisions_path, rounds);
    if (sub == ablate_cmd) return cmd_ablate(ctx, ablate_flags, store, experiment, marker);
    if (sub == compare) return cmd_compare(ctx, store, experiment);
    if (sub == serve) return cmd_serve(store, host, port, token);
    if (sub == export_cmd) return cmd_export(ctx, store, experiment);
  } catch (const Error& e) {
    fmt::print(stderr, "error ({}): {}\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    fmt::print(stderr, "error (usage): {}\n", e.what());
    return exit_code(ErrorKind::kUsage);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error (data): {}\n", e.what());
    return exit_code(ErrorKind::kData);
  }
  return 0;
}
