#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace markerlab {

inline constexpr std::string_view kVersion = "0.3.0";

// Error categories map one-to-one onto CLI exit codes and HTTP statuses.
enum class ErrorKind {
  kUsage,     // bad arguments / invalid configuration
  kData,      // unreadable or malformed input data
  kTraining,  // model fitting failed
  kConflict,  // state-machine violation (double submit, in-flight iteration)
  kNotFound,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

int exit_code(ErrorKind kind);
int http_status(ErrorKind kind);
std::string_view to_string(ErrorKind kind);

// Random helpers built on the fully specified mt19937_64 output sequence.
// Standard distributions are implementation-defined, so results would differ
// between standard libraries; these do not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound), rejection sampling to avoid modulo bias.
  std::uint64_t below(std::uint64_t bound);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; derives independent child seeds deterministically.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a 64-bit; used for dataset and schema fingerprints, not for security.
class Fingerprint {
 public:
  void add(std::string_view bytes);
  void add(double value);
  void add(std::uint64_t value);
  std::uint64_t value() const { return hash_; }
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

double sigmoid(double raw);
double logit(double p);

std::string trim(std::string_view text);

}  // namespace markerlab
