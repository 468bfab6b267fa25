#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/service.hpp"
#include "markerlab/synthetic.hpp"

namespace markerlab {

namespace fs = std::filesystem;

namespace {

fs::path iteration_dir(int index) { return fs::path("iterations") / std::to_string(index); }

const Iteration& iteration_at(const Experiment& e, int index) {
  if (index < 0 || index >= static_cast<int>(e.iterations.size())) {
    fail(ErrorKind::kNotFound, fmt::format("experiment {} has no iteration {}", e.id, index));
  }
  return e.iterations[static_cast<std::size_t>(index)];
}

const Iteration& completed_iteration(const Experiment& e, int index) {
  const auto& it = iteration_at(e, index);
  if (it.status == IterationStatus::kRunning) fail(ErrorKind::kConflict, fmt::format("iteration {} is still running", index));
  if (it.status == IterationStatus::kFailed) fail(ErrorKind::kTraining, fmt::format("iteration {} failed: {}", index, it.error));
  return it;
}

std::vector<Decision> parse_decisions(const nlohmann::json& body) {
  const nlohmann::json* list = &body;
  if (body.is_object()) {
    if (!body.contains("decisions")) fail(ErrorKind::kUsage, "request body needs a 'decisions' array");
    list = &body.at("decisions");
  }
  if (!list->is_array()) fail(ErrorKind::kUsage, "'decisions' must be an array");
  std::vector<Decision> out;
  for (const auto& d : *list) {
    try {
      out.push_back(decision_from_json(d));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::kUsage, fmt::format("malformed decision: {}", ex.what()));
    }
    if (out.back().timestamp.empty()) out.back().timestamp = utc_timestamp();
  }
  return out;
}

}  // namespace

nlohmann::json make_manifest(std::string_view verb, const ExperimentConfig& config, const PatientTable& table) {
  const PreparedData data = prepare(table, config.protocol);
  auto splits = nlohmann::json::array();
  for (const auto& s :
       mc_splits(data.labels.size(), data.labels, config.protocol.k, config.protocol.base_seed, config.protocol.split)) {
    splits.push_back(to_json(s));
  }
  nlohmann::json seeds = {{"base_seed", config.protocol.base_seed}, {"permutation_seed", config.permutation.seed}};
  if (config.synthetic) seeds["synthetic_seed"] = synthetic_spec_from_json(*config.synthetic).seed;
  return {{"format", "markerlab.manifest"},
          {"format_version", 1},
          {"producer_version", std::string(kVersion)},
          {"verb", verb},
          {"config", to_json(config)},
          {"data",
           {{"source", config.synthetic ? "synthetic" : config.dataset},
            {"fingerprint", table.fingerprint()},
            {"schema_fingerprint", table.schema().fingerprint()},
            {"rows", table.row_count()},
            {"rows_used", data.labels.size()},
            {"dropped_sparse", data.dropped_sparse},
            {"unknown_exclusions", data.unknown_exclusions}}},
          {"hyperparams", to_json(config.resolved_hyperparams())},
          {"seeds", std::move(seeds)},
          {"splits", std::move(splits)}};
}

Service::Service(ExperimentStore store, Runners runners, bool async)
    : store_(std::move(store)), runners_(std::move(runners)), async_(async) {}

Service::~Service() {
  wait_idle();
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

void Service::wait_idle() {
  std::unique_lock lk(jobs_mutex_);
  jobs_cv_.wait(lk, [&] { return active_jobs_ == 0; });
}

void Service::launch(std::function<void()> job) {
  if (!async_) {
    job();
    return;
  }
  std::lock_guard lk(jobs_mutex_);
  ++active_jobs_;
  workers_.emplace_back([this, job = std::move(job)] {
    try {
      job();
    } catch (const std::exception& ex) {
      spdlog::error("background job: {}", ex.what());
    }
    std::lock_guard done(jobs_mutex_);
    --active_jobs_;
    jobs_cv_.notify_all();
  });
}

Service::Entry& Service::entry(const std::string& id) const {
  std::lock_guard lk(registry_mutex_);
  if (auto it = entries_.find(id); it != entries_.end()) return *it->second;
  if (!store_.exists(id)) fail(ErrorKind::kNotFound, fmt::format("no experiment '{}'", id));
  auto e = std::make_unique<Entry>();
  e->lock = store_.lock(id);
  e->experiment = store_.load(id);
  auto& ref = *e;
  entries_.emplace(id, std::move(e));
  return ref;
}

PatientTable Service::load_checked(const Experiment& e) const {
  PatientTable table = runners_.load(e.config);
  const auto fp = table.fingerprint();
  if (fp != e.data_fingerprint) {
    fail(ErrorKind::kConflict,
         fmt::format("dataset changed since experiment {} was created (fingerprint {} != {})", e.id, fp, e.data_fingerprint));
  }
  return table;
}

nlohmann::json Service::health() const {
  std::error_code ec;
  const auto probe = store_.root() / ".health";
  bool writable = true;
  try {
    write_atomic(probe, "ok");
    fs::remove(probe, ec);
  } catch (const std::exception&) {
    writable = false;
  }
  return {{"status", "ok"},
          {"version", std::string(kVersion)},
          {"store", {{"root", store_.root().string()}, {"writable", writable}, {"experiments", store_.list().size()}}}};
}

std::string Service::create(const nlohmann::json& doc) {
  ExperimentConfig config;
  try {
    config = experiment_config_from_json(doc);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kUsage, fmt::format("invalid experiment configuration: {}", ex.what()));
  }
  if (!config.dataset.empty()) config.dataset = fs::absolute(config.dataset).lexically_normal().string();
  config.resolved_hyperparams().validate();
  const PatientTable table = runners_.load(config);
  prepare(table, config.protocol);  // surfaces target and exclusion errors now
  const Experiment e = store_.create(config, table.fingerprint());
  spdlog::info("created {} ({} rows)", e.id, table.row_count());
  auto ent = std::make_unique<Entry>();
  ent->lock = store_.lock(e.id);
  ent->experiment = e;
  std::lock_guard lk(registry_mutex_);
  entries_.emplace(e.id, std::move(ent));
  return e.id;
}

nlohmann::json Service::list() const {
  auto out = nlohmann::json::array();
  for (const auto& id : store_.list()) {
    Experiment e;
    {
      std::lock_guard lk(registry_mutex_);
      if (auto it = entries_.find(id); it != entries_.end()) {
        std::lock_guard el(it->second->mutex);
        e = it->second->experiment;
      }
    }
    if (e.id.empty()) {
      try {
        e = store_.load(id);
      } catch (const Error& ex) {
        out.push_back({{"id", id}, {"error", ex.what()}});
        continue;
      }
    }
    out.push_back({{"id", e.id},
                   {"preset", e.config.preset},
                   {"target", e.config.protocol.target},
                   {"iterations", e.iterations.size()},
                   {"terminal", e.terminal},
                   {"converged", e.converged},
                   {"status", e.iterations.empty() ? "created" : std::string(to_string(e.iterations.back().status))}});
  }
  return out;
}

nlohmann::json Service::get(const std::string& id) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  auto doc = to_json(ent.experiment);
  doc["busy"] = ent.busy;
  return doc;
}

int Service::start_iteration(const std::string& id) {
  auto& ent = entry(id);
  int index = 0;
  Experiment snapshot;
  {
    std::lock_guard lk(ent.mutex);
    if (ent.busy) fail(ErrorKind::kConflict, fmt::format("experiment {} has work in flight", id));
    check_can_start(ent.experiment);
    snapshot = ent.experiment;
  }
  // Refuse up front when the dataset no longer matches the experiment.
  auto table = std::make_shared<const PatientTable>(load_checked(snapshot));
  {
    std::lock_guard lk(ent.mutex);
    if (ent.busy) fail(ErrorKind::kConflict, fmt::format("experiment {} has work in flight", id));
    check_can_start(ent.experiment);
    snapshot = ent.experiment;
    index = static_cast<int>(ent.experiment.iterations.size());
    Iteration placeholder;
    placeholder.index = index;
    placeholder.exclusions = ent.experiment.exclusions();
    store_.append(id, {{"event", "iteration_started"}, {"index", index}, {"exclusions", placeholder.exclusions}});
    ent.experiment.iterations.push_back(std::move(placeholder));
    ent.busy = true;
  }
  launch([this, &ent, snapshot = std::move(snapshot), table, index] {
    Iteration it;
    try {
      it = runners_.iterate(snapshot, *table);
    } catch (const std::exception& ex) {
      spdlog::error("{} iteration {}: {}", snapshot.id, index, ex.what());
      it = Iteration{};
      it.status = IterationStatus::kFailed;
      it.exclusions = snapshot.exclusions();
      it.error = ex.what();
    }
    it.index = index;
    finish_iteration(ent, std::move(it));
  });
  return index;
}

void Service::persist_iteration(const std::string& id, const Iteration& it) const {
  const auto dir = iteration_dir(it.index);
  const std::string& fp = it.data_fingerprint;
  for (std::size_t k = 0; k < it.models.size(); ++k) {
    store_.write_artifact(id, dir / fmt::format("model_{}.json", k), serialize_model(it.models[k]).dump() + "\n");
  }
  if (it.status == IterationStatus::kFailed) return;
  nlohmann::json metrics = {{"data_fingerprint", fp}, {"val", to_json(it.val)}, {"test", to_json(it.test)}};
  metrics["split_test"] = nlohmann::json::array();
  for (const auto& r : it.split_test) metrics["split_test"].push_back(to_json(r));
  store_.write_artifact(id, dir / "metrics.json", metrics.dump(2) + "\n");
  nlohmann::json attribution = to_json(it.attribution);
  attribution["data_fingerprint"] = fp;
  attribution["top"] = it.top;
  store_.write_artifact(id, dir / "attribution.json", attribution.dump(2) + "\n");
  store_.write_artifact(id, dir / "attribution.csv", attribution_csv(it.attribution));
  nlohmann::json roc = to_json(it.roc);
  roc["data_fingerprint"] = fp;
  store_.write_artifact(id, dir / "roc.json", roc.dump() + "\n");
  store_.write_artifact(id, dir / "roc.csv", roc_csv(it.roc));
}

void Service::finish_iteration(Entry& ent, Iteration it) {
  const std::string id = [&] {
    std::lock_guard lk(ent.mutex);
    return ent.experiment.id;
  }();
  try {
    persist_iteration(id, it);
  } catch (const std::exception& ex) {
    spdlog::error("{} iteration {}: cannot write artifacts: {}", id, it.index, ex.what());
    it.status = IterationStatus::kFailed;
    it.error = fmt::format("artifact write failed: {}", ex.what());
  }
  it.models.clear();
  std::lock_guard lk(ent.mutex);
  try {
    store_.append(id, {{"event", "iteration_finished"}, {"iteration", to_json(it)}});
  } catch (const std::exception& ex) {
    spdlog::error("{} iteration {}: journal append failed: {}", id, it.index, ex.what());
    it.status = IterationStatus::kFailed;
    it.error = fmt::format("journal append failed: {}", ex.what());
  }
  spdlog::info("{} iteration {} {}", id, it.index, to_string(it.status));
  ent.experiment.iterations[static_cast<std::size_t>(it.index)] = std::move(it);
  ent.busy = false;
}

nlohmann::json Service::iteration(const std::string& id, int index) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  return to_json(iteration_at(ent.experiment, index));
}

nlohmann::json Service::attribution(const std::string& id, int index, std::size_t k) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  const auto& it = completed_iteration(ent.experiment, index);
  if (k == 0) k = ent.experiment.config.top_k;
  auto top = nlohmann::json::array();
  int rank = 1;
  for (const auto& e : top_k(it.attribution, k)) top.push_back({{"rank", rank++}, {"marker", e.name}, {"score", e.score}});
  return {{"index", index},
          {"status", to_string(it.status)},
          {"k", k},
          {"top", std::move(top)},
          {"report", to_json(it.attribution)},
          {"data_fingerprint", it.data_fingerprint}};
}

nlohmann::json Service::post_decisions(const std::string& id, int index, const nlohmann::json& body) {
  auto decisions = parse_decisions(body);
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  iteration_at(ent.experiment, index);
  Experiment next = ent.experiment;
  const Termination t = submit_decisions(next, index, decisions);
  auto recorded = nlohmann::json::array();
  for (const auto& d : decisions) recorded.push_back(to_json(d));
  store_.write_artifact(id, iteration_dir(index) / "decisions.json", recorded.dump(2) + "\n");
  store_.append(id, {{"event", "decisions"}, {"index", index}, {"decisions", recorded}});
  ent.experiment = std::move(next);
  return {{"index", index},
          {"terminal", t.terminal},
          {"converged", t.converged},
          {"exclusions", ent.experiment.exclusions()},
          {"decisions", recorded}};
}

nlohmann::json Service::metrics(const std::string& id, int index) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  const auto& it = completed_iteration(ent.experiment, index);
  nlohmann::json doc = {{"index", index}, {"val", to_json(it.val)}, {"test", to_json(it.test)}};
  doc["split_test"] = nlohmann::json::array();
  for (const auto& r : it.split_test) doc["split_test"].push_back(to_json(r));
  return doc;
}

nlohmann::json Service::roc(const std::string& id, int index) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  const auto& it = completed_iteration(ent.experiment, index);
  nlohmann::json doc = to_json(it.roc);
  doc["index"] = index;
  doc["auc"] = it.test.auc;
  return doc;
}

nlohmann::json Service::compare(const std::string& id) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  const auto& e = ent.experiment;
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json series;
  for (const char* m : {"accuracy", "precision", "recall", "f1", "auc"}) series[m] = nlohmann::json::array();
  std::vector<std::string> previous = e.config.protocol.exclusions;
  for (const auto& it : e.iterations) {
    const std::set<std::string> before(previous.begin(), previous.end());
    std::vector<std::string> added;
    for (const auto& x : it.exclusions) {
      if (!before.count(x)) added.push_back(x);
    }
    const bool done = it.status == IterationStatus::kAwaitingReview || it.status == IterationStatus::kClosed;
    nlohmann::json row = {{"index", it.index}, {"status", to_string(it.status)}, {"exclusions", it.exclusions},
                          {"newly_excluded", added}, {"top", it.top}};
    if (done) {
      row["test"] = to_json(it.test);
      row["val"] = to_json(it.val);
    } else {
      row["error"] = it.error;
    }
    for (const char* m : {"accuracy", "precision", "recall", "f1", "auc"}) {
      if (done) {
        series[m].push_back(metric_value(it.test, m));
      } else {
        series[m].push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
    previous = it.exclusions;
  }
  auto ablations = nlohmann::json::array();
  for (const auto& a : e.ablations) ablations.push_back(to_json(a));
  return {{"id", e.id}, {"terminal", e.terminal}, {"converged", e.converged},
          {"iterations", std::move(rows)}, {"series", std::move(series)}, {"ablations", std::move(ablations)}};
}

int Service::start_ablation(const std::string& id, const std::string& marker) {
  auto& ent = entry(id);
  Experiment snapshot;
  {
    std::lock_guard lk(ent.mutex);
    snapshot = ent.experiment;
  }
  const auto excluded = snapshot.exclusions();
  if (std::find(excluded.begin(), excluded.end(), marker) != excluded.end()) {
    fail(ErrorKind::kUsage, fmt::format("marker '{}' is already excluded", marker));
  }
  PatientTable table = load_checked(snapshot);
  if (!table.schema().find(marker)) fail(ErrorKind::kUsage, fmt::format("unknown marker '{}'", marker));
  int index = 0;
  {
    std::lock_guard lk(ent.mutex);
    if (ent.busy) fail(ErrorKind::kConflict, fmt::format("experiment {} has work in flight", id));
    snapshot = ent.experiment;
    index = static_cast<int>(ent.experiment.ablations.size());
    store_.append(id, {{"event", "ablation_started"}, {"index", index}, {"marker", marker}});
    Ablation a;
    a.index = index;
    a.marker = marker;
    a.status = "running";
    ent.experiment.ablations.push_back(std::move(a));
    ent.busy = true;
  }
  launch([this, &ent, snapshot = std::move(snapshot), table = std::move(table), index, marker] {
    Ablation a;
    try {
      a = runners_.ablate(snapshot, table, marker);
      a.status = "completed";
    } catch (const std::exception& ex) {
      spdlog::error("{} ablation {}: {}", snapshot.id, index, ex.what());
      a = Ablation{};
      a.marker = marker;
      a.status = "failed";
      a.error = ex.what();
    }
    a.index = index;
    const auto doc = to_json(a);
    std::lock_guard lk(ent.mutex);
    try {
      store_.write_artifact(snapshot.id, fs::path("ablations") / fmt::format("{}.json", index), doc.dump(2) + "\n");
      store_.append(snapshot.id, {{"event", "ablation_finished"}, {"ablation", doc}});
    } catch (const std::exception& ex) {
      spdlog::error("{} ablation {}: cannot record result: {}", snapshot.id, index, ex.what());
      a.status = "failed";
      a.error = ex.what();
    }
    ent.experiment.ablations[static_cast<std::size_t>(index)] = std::move(a);
    ent.busy = false;
  });
  return index;
}

nlohmann::json Service::ablation(const std::string& id, int index) const {
  auto& ent = entry(id);
  std::lock_guard lk(ent.mutex);
  const auto& list = ent.experiment.ablations;
  if (index < 0 || index >= static_cast<int>(list.size())) {
    fail(ErrorKind::kNotFound, fmt::format("experiment {} has no ablation {}", id, index));
  }
  return to_json(list[static_cast<std::size_t>(index)]);
}

nlohmann::json Service::manifest(const std::string& id) const {
  Experiment snapshot;
  {
    auto& ent = entry(id);
    std::lock_guard lk(ent.mutex);
    snapshot = ent.experiment;
  }
  auto doc = make_manifest("experiment", snapshot.config, load_checked(snapshot));
  doc["id"] = id;
  doc["ledger"] = to_json(snapshot);
  return doc;
}

}  // namespace markerlab
