#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/service.hpp"
#include "markerlab/synthetic.hpp"

namespace markerlab {

namespace fs = std::filesystem;

namespace {

constexpr int kJournalVersion = 1;

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const auto n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::kData, fmt::format("write to {} failed: {}", path.string(), std::strerror(errno)));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void sync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kNotFound, fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool valid_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

}  // namespace

PatientTable load_dataset(const ExperimentConfig& config) {
  if (config.synthetic) return generate_synthetic(synthetic_spec_from_json(*config.synthetic));
  const auto result = ingest_table(config.dataset, resolve_schema(config.schema));
  return result.table;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

FileLock::FileLock(const fs::path& path) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorKind::kData, fmt::format("cannot open lock file {}: {}", path.string(), std::strerror(errno)));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorKind::kConflict, fmt::format("{} is locked by another writer", path.parent_path().string()));
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

void write_atomic(const fs::path& path, std::string_view content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail(ErrorKind::kData, fmt::format("cannot write {}: {}", tmp.string(), std::strerror(errno)));
  write_all(fd, content, tmp);
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path);
  sync_dir(path.parent_path());
}

ExperimentStore::ExperimentStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) fail(ErrorKind::kData, fmt::format("cannot create store {}: {}", root_.string(), ec.message()));
}

fs::path ExperimentStore::default_root() {
  if (const char* env = std::getenv(std::string(kStoreEnv).c_str()); env && *env) return env;
  return fs::current_path() / "markerlab-store";
}

fs::path ExperimentStore::dir(std::string_view id) const {
  if (!valid_id(id)) fail(ErrorKind::kNotFound, fmt::format("invalid experiment id '{}'", id));
  return root_ / std::string(id);
}

std::vector<std::string> ExperimentStore::list() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory() && fs::exists(entry.path() / "journal.jsonl")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool ExperimentStore::exists(std::string_view id) const {
  return valid_id(id) && fs::exists(root_ / std::string(id) / "journal.jsonl");
}

Experiment ExperimentStore::create(const ExperimentConfig& config, const std::string& data_fingerprint) {
  FileLock guard(root_ / ".lock");
  int next = 1;
  for (const auto& id : list()) {
    if (id.rfind("exp-", 0) == 0) {
      try {
        next = std::max(next, std::stoi(id.substr(4)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
  Experiment e;
  e.id = fmt::format("exp-{:04}", next);
  e.config = config;
  e.data_fingerprint = data_fingerprint;
  const auto d = root_ / e.id;
  if (!fs::create_directory(d)) fail(ErrorKind::kConflict, fmt::format("experiment directory {} already exists", d.string()));
  write_atomic(d / "config.json", to_json(config).dump(2) + "\n");
  append(e.id, {{"event", "created"},
                {"id", e.id},
                {"config", to_json(config)},
                {"data_fingerprint", data_fingerprint},
                {"producer_version", std::string(kVersion)}});
  return e;
}

void ExperimentStore::append(std::string_view id, const nlohmann::json& event) const {
  nlohmann::json record = event;
  record["journal_version"] = kJournalVersion;
  const std::string line = record.dump() + "\n";
  const fs::path path = dir(id) / "journal.jsonl";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) fail(ErrorKind::kData, fmt::format("cannot open journal {}: {}", path.string(), std::strerror(errno)));
  write_all(fd, line, path);
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) fail(ErrorKind::kData, fmt::format("fsync of {} failed", path.string()));
}

void ExperimentStore::write_artifact(std::string_view id, const fs::path& relative, std::string_view content) const {
  write_atomic(dir(id) / relative, content);
}

std::string ExperimentStore::read_artifact(std::string_view id, const fs::path& relative) const {
  return read_file(dir(id) / relative);
}

std::unique_ptr<FileLock> ExperimentStore::lock(std::string_view id) const {
  return std::make_unique<FileLock>(dir(id) / "lock");
}

Experiment ExperimentStore::load(std::string_view id) const {
  if (!exists(id)) fail(ErrorKind::kNotFound, fmt::format("no experiment '{}'", id));
  return replay_journal(read_file(dir(id) / "journal.jsonl"));
}

Experiment replay_journal(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
  }
  Experiment e;
  bool created = false;
  auto interrupt_running = [&]() {
    if (!e.iterations.empty() && e.iterations.back().status == IterationStatus::kRunning) {
      e.iterations.back().status = IterationStatus::kFailed;
      e.iterations.back().error = "interrupted before completion";
    }
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception&) {
      if (i + 1 == lines.size()) {
        spdlog::warn("journal: ignoring torn final record");
        break;
      }
      fail(ErrorKind::kData, fmt::format("journal record {} is corrupted", i + 1));
    }
    try {
      const auto event = rec.at("event").get<std::string>();
      if (event == "created") {
        e.id = rec.at("id");
        e.config = experiment_config_from_json(rec.at("config"));
        e.data_fingerprint = rec.at("data_fingerprint");
        created = true;
      } else if (!created) {
        fail(ErrorKind::kData, "journal does not start with a creation record");
      } else if (event == "iteration_started") {
        interrupt_running();
        Iteration it;
        it.index = rec.at("index");
        if (it.index != static_cast<int>(e.iterations.size())) fail(ErrorKind::kData, "journal iteration indices are not contiguous");
        it.exclusions = rec.at("exclusions").get<std::vector<std::string>>();
        e.iterations.push_back(std::move(it));
      } else if (event == "iteration_finished") {
        auto it = iteration_from_json(rec.at("iteration"));
        if (it.index < 0 || it.index >= static_cast<int>(e.iterations.size())) fail(ErrorKind::kData, "journal finishes an unknown iteration");
        e.iterations[static_cast<std::size_t>(it.index)] = std::move(it);
      } else if (event == "decisions") {
        std::vector<Decision> ds;
        for (const auto& d : rec.at("decisions")) ds.push_back(decision_from_json(d));
        submit_decisions(e, rec.at("index").get<int>(), std::move(ds));
      } else if (event == "ablation_started") {
        Ablation a;
        a.index = rec.at("index");
        a.marker = rec.at("marker");
        a.status = "running";
        if (a.index != static_cast<int>(e.ablations.size())) fail(ErrorKind::kData, "journal ablation indices are not contiguous");
        e.ablations.push_back(std::move(a));
      } else if (event == "ablation_finished") {
        auto a = ablation_from_json(rec.at("ablation"));
        if (a.index < 0 || a.index >= static_cast<int>(e.ablations.size())) fail(ErrorKind::kData, "journal finishes an unknown ablation");
        e.ablations[static_cast<std::size_t>(a.index)] = std::move(a);
      } else {
        fail(ErrorKind::kData, fmt::format("unknown journal event '{}'", event));
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::kData, fmt::format("journal record {} is malformed: {}", i + 1, ex.what()));
    }
  }
  if (!created) fail(ErrorKind::kData, "journal has no creation record");
  interrupt_running();
  for (auto& a : e.ablations) {
    if (a.status == "running") {
      a.status = "failed";
      a.error = "interrupted before completion";
    }
  }
  return e;
}

}  // namespace markerlab
