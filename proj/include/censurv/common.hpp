#pragma once

// Error codes, deterministic RNG, and small numeric helpers shared by all
// components.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace censurv {

enum class ErrorCode {
  NEGATIVE_TIME,
  DIM_MISMATCH,
  INDEX_OUT_OF_RANGE,
  ORACLE_SCALE_EXCEEDED,
  SHAPE_MISMATCH,
  STALE_GRADIENTS,
  INCOMPATIBLE_CONTEXT,
  DIVERGED,
  EXPLANATION_UNAVAILABLE,
  NO_EVENTS,
  MISSING_LABEL_COLUMNS,
  UNKNOWN_COLUMN,
  EMPTY_RECORD,
  MISSING_OUTCOME,
  EMPTY_DATASET,
  NO_LABELED_PATIENTS,
  TOO_FEW_RECORDS,
  UNKNOWN_PATIENT,
  PARSE_ERROR,
  CONFIG_ERROR,
  IO_ERROR,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NEGATIVE_TIME: return "NEGATIVE_TIME";
    case ErrorCode::DIM_MISMATCH: return "DIM_MISMATCH";
    case ErrorCode::INDEX_OUT_OF_RANGE: return "INDEX_OUT_OF_RANGE";
    case ErrorCode::ORACLE_SCALE_EXCEEDED: return "ORACLE_SCALE_EXCEEDED";
    case ErrorCode::SHAPE_MISMATCH: return "SHAPE_MISMATCH";
    case ErrorCode::STALE_GRADIENTS: return "STALE_GRADIENTS";
    case ErrorCode::INCOMPATIBLE_CONTEXT: return "INCOMPATIBLE_CONTEXT";
    case ErrorCode::DIVERGED: return "DIVERGED";
    case ErrorCode::EXPLANATION_UNAVAILABLE: return "EXPLANATION_UNAVAILABLE";
    case ErrorCode::NO_EVENTS: return "NO_EVENTS";
    case ErrorCode::MISSING_LABEL_COLUMNS: return "MISSING_LABEL_COLUMNS";
    case ErrorCode::UNKNOWN_COLUMN: return "UNKNOWN_COLUMN";
    case ErrorCode::EMPTY_RECORD: return "EMPTY_RECORD";
    case ErrorCode::MISSING_OUTCOME: return "MISSING_OUTCOME";
    case ErrorCode::EMPTY_DATASET: return "EMPTY_DATASET";
    case ErrorCode::NO_LABELED_PATIENTS: return "NO_LABELED_PATIENTS";
    case ErrorCode::TOO_FEW_RECORDS: return "TOO_FEW_RECORDS";
    case ErrorCode::UNKNOWN_PATIENT: return "UNKNOWN_PATIENT";
    case ErrorCode::PARSE_ERROR: return "PARSE_ERROR";
    case ErrorCode::CONFIG_ERROR: return "CONFIG_ERROR";
    case ErrorCode::IO_ERROR: return "IO_ERROR";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Deterministic random source. The engine is the standard mt19937_64 (whose
// output sequence is pinned by the standard); the distributions are
// hand-rolled so that draws are identical across platforms and standard
// library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % bound;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle, independent of std::shuffle's unspecified draws.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Max-shifted log(sum(exp(values))).
inline double logsumexp(std::span<const double> values) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

inline bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace censurv
