#pragma once

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "markerlab/explain.hpp"

namespace httplib {
class Server;
}

namespace markerlab {

inline constexpr std::string_view kStoreEnv = "MARKERLAB_STORE";

// Dataset named by an experiment configuration: the CSV under its schema, or
// the synthetic cohort.
PatientTable load_dataset(const ExperimentConfig& config);

std::string utc_timestamp();

// Reproduction record for a run: tool version, the full configuration, the
// dataset fingerprint, every seed and the split index arrays.
nlohmann::json make_manifest(std::string_view verb, const ExperimentConfig& config, const PatientTable& table);

// Exclusive advisory lock on a file, released on destruction.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

// Writes `content` to a temporary sibling, syncs it and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view content);

// On-disk experiment store. Each experiment directory holds config.json, an
// append-only journal.jsonl and the iteration artifacts. The journal is the
// source of truth: load() replays it, so the index can always be rebuilt by
// scanning the directory.
class ExperimentStore {
 public:
  explicit ExperimentStore(std::filesystem::path root);
  // $MARKERLAB_STORE, or ./markerlab-store.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path dir(std::string_view id) const;

  std::vector<std::string> list() const;
  bool exists(std::string_view id) const;

  // Allocates an id, writes config.json and the first journal record.
  Experiment create(const ExperimentConfig& config, const std::string& data_fingerprint);
  Experiment load(std::string_view id) const;

  // Appends one record and syncs it to disk before returning.
  void append(std::string_view id, const nlohmann::json& event) const;
  void write_artifact(std::string_view id, const std::filesystem::path& relative, std::string_view content) const;
  std::string read_artifact(std::string_view id, const std::filesystem::path& relative) const;

  std::unique_ptr<FileLock> lock(std::string_view id) const;

 private:
  std::filesystem::path root_;
};

// Rebuilds experiment state from journal records. A torn final line (crash
// mid-append) is ignored; damage anywhere else is an error.
Experiment replay_journal(std::string_view journal_text);

struct Runners {
  std::function<PatientTable(const ExperimentConfig&)> load = load_dataset;
  std::function<Iteration(const Experiment&, const PatientTable&)> iterate = run_iteration;
  std::function<Ablation(const Experiment&, const PatientTable&, const std::string&)> ablate =
      [](const Experiment& e, const PatientTable& t, const std::string& m) { return markerlab::ablate(e, t, m); };
};

// Transport-independent control plane. Mutations on one experiment are
// serialized; training and ablations run on worker threads when `async`.
class Service {
 public:
  explicit Service(ExperimentStore store, Runners runners = {}, bool async = true);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  nlohmann::json health() const;
  std::string create(const nlohmann::json& config);
  nlohmann::json list() const;
  nlohmann::json get(const std::string& id) const;
  int start_iteration(const std::string& id);
  nlohmann::json iteration(const std::string& id, int index) const;
  nlohmann::json attribution(const std::string& id, int index, std::size_t k = 0) const;
  nlohmann::json post_decisions(const std::string& id, int index, const nlohmann::json& body);
  nlohmann::json metrics(const std::string& id, int index) const;
  nlohmann::json roc(const std::string& id, int index) const;
  nlohmann::json compare(const std::string& id) const;
  int start_ablation(const std::string& id, const std::string& marker);
  nlohmann::json ablation(const std::string& id, int index) const;
  // make_manifest for the experiment plus its id and ledger.
  nlohmann::json manifest(const std::string& id) const;

  // Blocks until no background work is running.
  void wait_idle();
  const ExperimentStore& store() const { return store_; }

 private:
  struct Entry {
    mutable std::mutex mutex;
    Experiment experiment;
    std::unique_ptr<FileLock> lock;  // held while this process owns the experiment
    bool busy = false;               // an iteration or ablation is in flight
  };

  Entry& entry(const std::string& id) const;
  void launch(std::function<void()> job);
  void finish_iteration(Entry& e, Iteration it);
  void persist_iteration(const std::string& id, const Iteration& it) const;
  PatientTable load_checked(const Experiment& e) const;

  ExperimentStore store_;
  Runners runners_;
  bool async_;
  mutable std::mutex registry_mutex_;
  mutable std::map<std::string, std::unique_ptr<Entry>> entries_;
  std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  int active_jobs_ = 0;
  std::vector<std::thread> workers_;
};

// HTTP front end over a Service. Requests carry JSON bodies; errors map to
// 400/404/409/422 with {"error": {"kind", "message"}}.
class HttpServer {
 public:
  HttpServer(Service& service, std::string token = {});
  ~HttpServer();

  // Binds and returns the port (an ephemeral one when port is 0).
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  Service& service_;
  std::string token_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace markerlab
