// Acceptance run: one PASS/FAIL line per primary criterion with its wall time.
// Exits non-zero when any criterion fails or overruns its time budget.
//
// Set MARKERLAB_COHORT_CSV to a cohort file in the builtin schema to add the
// informational real-data run.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "markerlab/common.hpp"
#include "markerlab/service.hpp"

using namespace markerlab;
namespace fs = std::filesystem;

namespace {

// Collects failed expectations for one criterion.
class Checklist {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(std::string line) { notes_.push_back(std::move(line)); }
  bool ok() const { return failures_.empty(); }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

struct Criterion {
  std::string name;
  double budget_s;  // 0: no time limit
  std::function<void(Checklist&)> run;
};

bool exact(double a, double b) { return std::abs(a - b) <= 1e-12; }

ConfusionMatrix cm(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  ConfusionMatrix c;
  c.tp = tp;
  c.fp = fp;
  c.fn = fn;
  c.tn = tn;
  return c;
}

void metrics_arithmetic(Checklist& v) {
  const auto cat = classification_metrics(cm(233, 13, 4, 23));
  v.expect(exact(cat.accuracy, 256.0 / 273.0), fmt::format("CatBoost accuracy {} != 256/273", cat.accuracy));
  v.expect(exact(cat.precision, 233.0 / 246.0), fmt::format("CatBoost precision {} != 233/246", cat.precision));
  v.expect(exact(cat.recall, 233.0 / 237.0), fmt::format("CatBoost recall {} != 233/237", cat.recall));
  const auto xgb = classification_metrics(cm(34, 13, 16, 210));
  v.expect(exact(xgb.accuracy, 244.0 / 273.0), fmt::format("XGBoost accuracy {} != 244/273", xgb.accuracy));
  v.expect(exact(xgb.recall, 0.68), fmt::format("XGBoost recall {} != 0.68", xgb.recall));
  v.note(fmt::format("survival {:.4f}/{:.4f}/{:.4f}, AKI {:.4f}/{:.4f}", cat.accuracy, cat.precision, cat.recall,
                     xgb.accuracy, xgb.recall));
}

void split_arithmetic(Checklist& v) {
  std::vector<int> y(1366, 0);
  for (std::size_t i = 0; i < 237 + 13; ++i) y[(i * 7919) % y.size()] = 1;
  const auto s = split(y.size(), y, SplitSpec{});
  v.expect(s.test.size() == 273, fmt::format("|test| = {}", s.test.size()));
  v.expect(s.test.size() == cm(233, 13, 4, 23).total(), "survival confusion total differs from |test|");
  v.expect(s.test.size() == cm(34, 13, 16, 210).total(), "AKI confusion total differs from |test|");
  v.expect(s.train.size() + s.val.size() + s.test.size() == 1366, "split does not partition the rows");
  v.note(fmt::format("train {} / val {} / test {}", s.train.size(), s.val.size(), s.test.size()));
}

void gbdt_oracle(Checklist& v) {
  double gain_dev = 0.0, weight_dev = 0.0;
  std::size_t splits = 0, leaves = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto toy = oracle::random_toy(9000 + seed, seed % 2 == 1);
    HyperParams hp;
    hp.growth = Growth::kDepthwise;
    hp.max_depth = 1 + static_cast<int>(seed % 2);
    hp.num_leaves = 1 << hp.max_depth;
    hp.n_estimators = 1 + static_cast<int>(seed % 3);
    hp.learning_rate = 0.3 + 0.1 * static_cast<double>(seed % 5);
    hp.l2_lambda = static_cast<double>(seed % 3);
    hp.min_child_weight = (seed % 4 == 0) ? 0.3 : 0.0;
    const auto model = train_gbdt(toy.x, toy.y, hp);
    const auto check = oracle::check_gbdt(model, toy.x, toy.y, hp);
    v.expect(check.ok, fmt::format("dataset {}: {}", seed, check.why));
    gain_dev = std::max(gain_dev, check.max_gain_dev);
    weight_dev = std::max(weight_dev, check.max_weight_dev);
    splits += check.splits;
    leaves += check.leaves;
  }
  v.expect(gain_dev <= 1e-9 && weight_dev <= 1e-9, "deviation above 1e-9");
  v.expect(splits > 0, "no splits were exercised");
  v.note(fmt::format("50 datasets, {} splits, {} leaves, max gain dev {:.1e}, max weight dev {:.1e}", splits, leaves,
                     gain_dev, weight_dev));
}

void leaf_audit(Checklist& v) {
  const auto data = fixtures::encoded(fixtures::planted(true));
  std::size_t leaves = 0;
  double dev = 0.0;
  for (const char* name : {"lgbm-like", "xgb-like", "cat-like"}) {
    auto hp = preset(name, Task::kSurvival);
    hp.n_estimators = std::min(hp.n_estimators, 60);
    hp.subsample = 1.0;
    const auto model = train_gbdt(data.x, data.y, hp);
    const auto check = oracle::audit_leaves(model, data.x, data.y, hp.l2_lambda);
    v.expect(check.ok, fmt::format("{}: {}", name, check.why));
    const auto lib = audit_leaf_weights(model, data.x, data.y);
    v.expect(lib.max_abs_deviation <= 1e-9, fmt::format("{}: library audit deviation {}", name, lib.max_abs_deviation));
    leaves += check.leaves;
    dev = std::max(dev, check.max_weight_dev);
  }
  v.expect(leaves > 100, "too few leaves audited");
  v.note(fmt::format("{} leaves across three presets, max deviation {:.1e}", leaves, dev));
}

Experiment planted_experiment(bool leakage) {
  Experiment e;
  e.id = "exp-acceptance";
  e.config.synthetic = to_json(fixtures::planted(leakage));
  e.config.protocol = fixtures::synthetic_protocol(5);
  e.config.preset = "lgbm-like";
  e.config.task = "survival";
  e.config.top_k = 5;
  return e;
}

PatientTable table_of(const Experiment& e) { return generate_synthetic(synthetic_spec_from_json(*e.config.synthetic)); }

void planted_pipeline(Checklist& v) {
  auto e = planted_experiment(false);
  const auto table = table_of(e);
  v.expect(table.column_count() == 21, fmt::format("expected 20 markers plus target, got {} columns", table.column_count()));
  const auto gain = run_iteration(e, table);
  v.expect(gain.status == IterationStatus::kAwaitingReview, "gain run failed: " + gain.error);
  v.expect(gain.test.accuracy >= 0.90, fmt::format("test accuracy {:.4f} < 0.90", gain.test.accuracy));
  v.expect(gain.test.auc >= 0.97, fmt::format("test AUC {:.4f} < 0.97", gain.test.auc));
  v.expect(!gain.top.empty() && gain.top[0] == "signal", "gain top-1 is " + (gain.top.empty() ? "" : gain.top[0]));
  e.config.attribution = AttributionMethod::kPermutation;
  const auto perm = run_iteration(e, table);
  v.expect(!perm.top.empty() && perm.top[0] == "signal", "permutation top-1 is " + (perm.top.empty() ? "" : perm.top[0]));
  v.note(fmt::format("accuracy {:.4f}, AUC {:.4f}, gain top-1 {} ({:.3f}), permutation top-1 {} ({:.3f})",
                     gain.test.accuracy, gain.test.auc, gain.top[0], gain.attribution.score(gain.top[0]), perm.top[0],
                     perm.attribution.score(perm.top[0])));
}

void refinement_loop(Checklist& v) {
  const std::string leak = "length of stay";
  // Boosted presets rank the near-deterministic planted signal above the
  // leakage marker, so the loop runs with the random-forest preset.
  auto e = planted_experiment(true);
  e.config.preset = "rf";
  e.config.task = "aki";
  const auto table = table_of(e);
  auto it0 = run_iteration(e, table);
  v.expect(it0.status == IterationStatus::kAwaitingReview, "iteration 0 failed: " + it0.error);
  if (!v.ok()) return;
  v.expect(it0.top[0] == leak, fmt::format("iteration 0 top-1 is '{}'", it0.top[0]));
  v.note(fmt::format("iteration 0: top-1 {} ({:.3f}), then {} ({:.3f}), accuracy {:.4f}", it0.top[0],
                     it0.attribution.score(it0.top[0]), it0.top[1], it0.attribution.score(it0.top[1]), it0.test.accuracy));
  it0.models.clear();
  e.iterations.push_back(it0);

  std::vector<Decision> decisions;
  for (const auto& m : it0.top) decisions.push_back({m, m == leak ? Verdict::kRejected : Verdict::kApproved, "", utc_timestamp()});
  const auto t = submit_decisions(e, 0, decisions);
  v.expect(!t.terminal, "loop terminated after a rejection");
  const auto excluded = e.exclusions();
  v.expect(std::find(excluded.begin(), excluded.end(), leak) != excluded.end(), "exclusion set lacks the leakage marker");

  const auto it1 = run_iteration(e, table);
  v.expect(it1.status == IterationStatus::kAwaitingReview, "iteration 1 failed: " + it1.error);
  if (!v.ok()) return;
  v.expect(std::find(it1.features.begin(), it1.features.end(), leak) == it1.features.end(), "leakage marker still trained on");
  const auto sel = select_target(table, "outcome", kSyntheticPositive);
  PermutationOptions options;
  options.repeats = 5;
  double worst = 0.0;
  for (const auto& model : it1.models) {
    worst = std::max(worst, std::abs(permutation_importance_of(model, sel.features, sel.labels, leak, options)));
  }
  v.expect(worst == 0.0, fmt::format("iteration 1 permutation importance of the leakage marker is {}", worst));
  v.expect(it1.test.accuracy >= 0.85, fmt::format("iteration 1 accuracy {:.4f} < 0.85", it1.test.accuracy));
  v.note(fmt::format("iteration 1: exclusions [{}], leakage importance {} over {} models, accuracy {:.4f}, top-1 {}",
                     fmt::join(excluded, ", "), worst, it1.models.size(), it1.test.accuracy, it1.top[0]));

  // Informational: the same first iteration with the lgbm-like preset.
  auto boosted = planted_experiment(true);
  boosted.config.protocol.k = 1;
  const auto b = run_iteration(boosted, table);
  v.note(fmt::format("info: lgbm-like gain ranking {} ({:.3f}), {} ({:.3f})", b.top[0], b.attribution.score(b.top[0]),
                     b.top[1], b.attribution.score(b.top[1])));
}

void ablation_direction(Checklist& v) {
  const auto e = planted_experiment(false);
  const auto table = table_of(e);
  const auto signal = ablate(e, table, "signal");
  const double drop = signal.baseline.accuracy - signal.ablated.accuracy;
  v.expect(drop >= 0.10, fmt::format("removing the signal lowers accuracy by only {:.4f}", drop));
  const auto noise = ablate(e, table, "noise_num_01");
  const double change = std::abs(noise.baseline.accuracy - noise.ablated.accuracy);
  v.expect(change <= 0.03, fmt::format("removing a noise marker changes accuracy by {:.4f}", change));
  v.note(fmt::format("baseline {:.4f}; without signal {:.4f} (drop {:.4f}); without noise_num_01 {:.4f} (change {:.4f})",
                     signal.baseline.accuracy, signal.ablated.accuracy, drop, noise.ablated.accuracy, change));
}

void grid_search_correctness(Checklist& v) {
  auto spec = fixtures::planted(false);
  spec.n_rows = 600;
  const auto config = fixtures::synthetic_protocol(2);
  const auto data = prepare(generate_synthetic(spec), config);
  HyperGrid grid;
  grid.base = preset("lgbm-like", Task::kSurvival);
  grid.base.n_estimators = 15;
  grid.axes = {{"learning_rate", {0.05, 0.2, 0.5}}, {"num_leaves", {2, 4}}, {"l2_lambda", {1, 10}}};
  v.expect(grid.size() == 12, "grid is not 12 points");

  double best = -1.0;
  HyperParams argmax;
  for (const auto& hp : grid.points()) {
    const double score = evaluate(data, hp, config).val.accuracy;
    if (score > best) {
      best = score;
      argmax = hp;
    }
  }
  const auto first = grid_search(grid, data, config);
  v.expect(first.best == argmax, "best differs from the exhaustive argmax");
  v.expect(first.leaderboard.front().objective == best, "best objective differs from re-evaluation");
  const auto again = grid_search(grid, data, config);
  v.expect(to_json(first).dump() == to_json(again).dump(), "two runs differ");
  GridOptions four;
  four.threads = 4;
  const auto parallel = grid_search(grid, data, config, four);
  v.expect(to_json(first).dump() == to_json(parallel).dump(), "1 and 4 threads differ");
  v.note(fmt::format("best lr {} leaves {} lambda {} at val accuracy {:.4f}", first.best.learning_rate,
                     first.best.num_leaves, first.best.l2_lambda, best));
}

MarkerSpec numeric_marker(std::string name) {
  MarkerSpec m;
  m.name = std::move(name);
  m.range = NumericRange{0, 500};
  return m;
}

void preprocessing_contracts(Checklist& v) {
  // 100 rows: a has 76 missing cells, b has 75.
  std::vector<std::vector<Cell>> cols(2);
  for (std::size_t r = 0; r < 100; ++r) {
    cols[0].push_back(r < 76 ? Cell{Missing{}} : Cell{1.0});
    cols[1].push_back(r < 75 ? Cell{Missing{}} : Cell{1.0});
  }
  const PatientTable sparse(MarkerSchema({numeric_marker("a"), numeric_marker("b")}, "v", ""), cols);
  const auto dropped = drop_sparse_markers(sparse);
  v.expect(dropped.dropped == std::vector<std::string>{"a"}, "76% missing marker not dropped alone");
  v.expect(static_cast<bool>(dropped.table.schema().find("b")), "75% missing marker dropped");

  const auto x = encode(impute(generate_synthetic(fixtures::planted(true))));
  std::size_t groups = 0;
  for (const auto& marker : x.markers()) {
    const auto idx = x.marker_columns(marker);
    if (x.columns()[idx[0]].kind != ColumnKind::kIndicator) continue;
    ++groups;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double sum = 0.0;
      for (auto c : idx) sum += x.at(r, c);
      if (sum != 1.0) {
        v.expect(false, fmt::format("{} row {} indicator sum {}", marker, r, sum));
        break;
      }
    }
  }
  v.expect(groups > 0, "no categorical groups encoded");

  std::vector<int> y(300, 0);
  for (std::size_t i = 0; i < 30; ++i) y[i * 10] = 1;
  std::vector<std::size_t> train(300);
  std::iota(train.begin(), train.end(), std::size_t{0});
  const auto up = rebalance(train, y, 1.0, 1);
  std::size_t pos = 0;
  for (auto r : up) pos += static_cast<std::size_t>(y[r]);
  v.expect(pos == 270 && up.size() - pos == 270, fmt::format("rebalance gave {}/{}", pos, up.size() - pos));

  auto spec = fixtures::planted(false);
  spec.n_rows = 600;
  const auto config = fixtures::synthetic_protocol(3);
  const auto data = prepare(generate_synthetic(spec), config);
  auto hp = preset("lgbm-like", Task::kSurvival);
  hp.n_estimators = 10;
  const auto ev = evaluate(data, hp, config);
  for (const char* m : {"accuracy", "precision", "recall", "f1", "auc"}) {
    double mean = 0.0;
    for (const auto& s : ev.splits) mean += metric_value(s.test, m);
    mean /= static_cast<double>(ev.splits.size());
    v.expect(std::abs(metric_value(ev.test, m) - mean) <= 1e-12, fmt::format("MC-CV mean of {} differs", m));
  }
  v.note(fmt::format("{} indicator groups checked, rebalance {}/{}", groups, pos, up.size() - pos));
}

void auc_properties(Checklist& v) {
  Rng rng(21);
  double dev = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto n = 5 + rng.below(80);
    std::vector<int> y;
    std::vector<double> s;
    int pos = 0;
    do {
      y.clear();
      s.clear();
      pos = 0;
      for (std::uint64_t j = 0; j < n; ++j) {
        y.push_back(rng.bernoulli(0.4) ? 1 : 0);
        pos += y.back();
        s.push_back(static_cast<double>(rng.below(10)) / 10.0 + 0.15 * y.back());
      }
    } while (pos == 0 || pos == static_cast<int>(n));
    const double auc = roc_auc(y, s).auc;
    dev = std::max(dev, std::abs(auc - oracle::mann_whitney(y, s)));
    std::vector<double> t;
    for (double x : s) t.push_back(std::exp(3.0 * x) - 7.0);
    v.expect(roc_auc(y, t).auc == auc, fmt::format("instance {} not invariant to a monotone transform", i));
  }
  v.expect(dev <= 1e-12, fmt::format("Mann-Whitney deviation {}", dev));
  const std::vector<int> y = {0, 1, 1, 0, 1};
  const std::vector<double> tied(5, 0.3);
  v.expect(roc_auc(y, tied).auc == 0.5, "all-tied scores do not give 0.5");
  v.note(fmt::format("100 instances, max deviation {:.1e}", dev));
}

// Stub training: ranks the first two features and awaits review.
Iteration stub_iteration(const Experiment& e, const PatientTable& table) {
  check_can_start(e);
  Iteration it;
  it.index = static_cast<int>(e.iterations.size());
  it.status = IterationStatus::kAwaitingReview;
  it.exclusions = e.exclusions();
  for (const auto& m : table.schema().markers()) {
    if (m.name == e.config.protocol.target) continue;
    if (std::find(it.exclusions.begin(), it.exclusions.end(), m.name) == it.exclusions.end()) it.features.push_back(m.name);
  }
  it.attribution.markers = {{it.features[0], 0.7, 0.7}, {it.features[1], 0.3, 0.3}};
  it.top = {it.features[0], it.features[1]};
  it.data_fingerprint = e.data_fingerprint;
  return it;
}

void service_state_machine(Checklist& v) {
  fixtures::TempDir dir;
  Runners runners;
  runners.iterate = stub_iteration;
  ExperimentConfig config;
  auto spec = fixtures::planted(true);
  spec.n_rows = 300;
  config.synthetic = to_json(spec);
  config.protocol = fixtures::synthetic_protocol(1);
  config.top_k = 2;
  config.max_iterations = 3;

  std::string id;
  std::string before;
  {
    Service service(ExperimentStore(dir.path()), runners, true);
    HttpServer server(service);
    const int port = server.bind("127.0.0.1", 0);
    std::thread loop([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    auto post = [&](const std::string& path, const nlohmann::json& body) {
      auto r = client.Post(path, body.dump(), "application/json");
      return std::make_pair(r ? r->status : -1, r ? r->body : std::string());
    };
    auto get = [&](const std::string& path) {
      auto r = client.Get(path);
      return std::make_pair(r ? r->status : -1, r ? r->body : std::string());
    };
    auto await = [&](int index) {
      nlohmann::json doc;
      for (int i = 0; i < 200; ++i) {
        doc = nlohmann::json::parse(get(fmt::format("/experiments/{}/iterations/{}", id, index)).second);
        if (doc.at("status") != "running") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      return doc;
    };
    auto decide = [](const nlohmann::json& it, const std::string& rejected) {
      auto list = nlohmann::json::array();
      for (const auto& m : it.at("top")) list.push_back({{"marker", m}, {"verdict", m == rejected ? "rejected" : "approved"}});
      return nlohmann::json{{"decisions", list}};
    };

    auto [status, body] = post("/experiments", to_json(config));
    v.expect(status == 201, fmt::format("create returned {}", status));
    id = nlohmann::json::parse(body).at("id");
    v.expect(post(fmt::format("/experiments/{}/iterations", id), {}).first == 202, "iteration 0 not accepted");
    const auto it0 = await(0);
    v.expect(it0.at("status") == "awaiting_review", "iteration 0 not awaiting review");
    v.expect(post(fmt::format("/experiments/{}/iterations", id), {}).first == 409, "start before review not refused");
    const auto d0 = decide(it0, it0.at("top")[0]);
    v.expect(post(fmt::format("/experiments/{}/iterations/0/decisions", id), d0).first == 200, "review not accepted");
    v.expect(post(fmt::format("/experiments/{}/iterations/0/decisions", id), d0).first == 409, "double submit not refused");
    v.expect(post(fmt::format("/experiments/{}/iterations", id), {}).first == 202, "iteration 1 not accepted");
    const auto it1 = await(1);
    const auto [s1, b1] = post(fmt::format("/experiments/{}/iterations/1/decisions", id), decide(it1, ""));
    v.expect(s1 == 200 && nlohmann::json::parse(b1).at("terminal") == true, "approving everything did not terminate");
    v.expect(post(fmt::format("/experiments/{}/iterations", id), {}).first == 409, "terminal experiment accepted work");
    v.expect(get("/experiments/exp-9999").first == 404, "unknown experiment not 404");
    service.wait_idle();
    auto doc = service.get(id);
    doc.erase("busy");
    before = doc.dump();
    server.stop();
    loop.join();
  }

  // Crash mid-append: a torn record at the end of the journal.
  const auto journal = dir.path() / id / "journal.jsonl";
  {
    std::ofstream out(journal, std::ios::app);
    out << R"({"event":"iteration_started","ind)";
  }
  Service restarted(ExperimentStore(dir.path()), runners, true);
  auto doc = restarted.get(id);
  doc.erase("busy");
  v.expect(doc.dump() == before, "restarted state differs from the state before the crash");
  std::ifstream in(journal);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto replayed = to_json(replay_journal(text));
  v.expect(replayed.dump() == doc.dump(), "restarted state differs from a journal replay");
  v.note(fmt::format("{} iterations, converged {}, state rebuilt from the journal", doc.at("iterations").size(),
                     doc.at("converged").get<bool>()));
}

void real_cohort(Checklist& v, const std::string& path) {
  for (const char* task : {"survival", "aki"}) {
    Experiment e;
    e.id = "exp-cohort";
    e.config.dataset = path;
    e.config.task = task;
    e.config.protocol.target = target_for(parse_task(task));
    for (const char* name : {"lgbm-like", "xgb-like", "cat-like", "rf"}) {
      e.config.preset = name;
      const auto it = run_iteration(e, load_dataset(e.config));
      v.expect(it.status == IterationStatus::kAwaitingReview, fmt::format("{} {}: {}", task, name, it.error));
      v.note(fmt::format("info: {} {:10} accuracy {:.4f} precision {:.4f} recall {:.4f} F1 {:.4f} AUC {:.4f}", task, name,
                         it.test.accuracy, it.test.precision, it.test.recall, it.test.f1, it.test.auc));
    }
  }
  v.note("info: published best accuracy 93.55% (survival), 88.05% (AKI); no parity is asserted");
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  std::vector<Criterion> criteria = {
      {"metrics arithmetic", 1, metrics_arithmetic},
      {"split arithmetic", 1, split_arithmetic},
      {"GBDT oracle equivalence", 30, gbdt_oracle},
      {"leaf-weight audit", 0, leaf_audit},
      {"planted-signal pipeline", 20, planted_pipeline},
      {"refinement loop", 40, refinement_loop},
      {"ablation direction", 0, ablation_direction},
      {"grid-search correctness", 60, grid_search_correctness},
      {"preprocessing contracts", 0, preprocessing_contracts},
      {"AUC properties", 0, auc_properties},
      {"service state machine", 10, service_state_machine},
  };
  if (const char* csv = std::getenv("MARKERLAB_COHORT_CSV"); csv && *csv) {
    criteria.push_back({"real-cohort smoke", 0, [path = std::string(csv)](Checklist& v) { real_cohort(v, path); }});
  }

  int failed = 0;
  for (const auto& c : criteria) {
    Checklist v;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& ex) {
      v.expect(false, fmt::format("exception: {}", ex.what()));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs > c.budget_s) v.expect(false, fmt::format("took {:.2f} s, budget {} s", secs, c.budget_s));
    const bool ok = v.ok();
    if (!ok) ++failed;
    fmt::print("{}  {:<26} {:8.3f} s\n", ok ? "PASS" : "FAIL", c.name, secs);
    for (const auto& n : v.notes()) fmt::print("        {}\n", n);
    for (const auto& f : v.failures()) fmt::print("        failed: {}\n", f);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
