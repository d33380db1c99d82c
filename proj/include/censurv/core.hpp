#pragma once

// Domain types for discrete-time survival data: the time grid, labels,
// grid-quantized outcomes, patient records, and datasets.
//
// Index conventions used throughout:
//   - intervals are 1-indexed: interval i covers [boundaries[i-1], boundaries[i])
//     (right-open; a time exactly on a boundary belongs to the interval that
//     starts there)
//   - the outcome index k is the last interval the patient survived,
//     k in 0..m; k = m means surviving the whole grid
//   - censoring inside interval j+1 yields censored_at = j, and the feasible
//     outcomes are k >= j+1 (the patient is assumed to survive the whole
//     censoring interval)

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "censurv/common.hpp"

namespace censurv {

// Discretization of the survival timeline into m right-open intervals.
struct TimeGrid {
  std::vector<double> boundaries;  // length m+1, strictly increasing, [0] == 0

  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> b) : boundaries(std::move(b)) {
    validate();
  }

  static TimeGrid uniform(int m, double interval_days) {
    std::vector<double> b(static_cast<std::size_t>(m) + 1);
    for (int i = 0; i <= m; ++i) b[i] = i * interval_days;
    return TimeGrid(std::move(b));
  }

  int m() const { return static_cast<int>(boundaries.size()) - 1; }
  double cap() const { return boundaries.back(); }

  // Midpoint of 1-indexed interval i.
  double interval_midpoint(int i) const {
    return 0.5 * (boundaries[i - 1] + boundaries[i]);
  }

  void validate() const {
    if (boundaries.size() < 2)
      throw Error(ErrorCode::CONFIG_ERROR, "time grid needs at least one interval");
    if (boundaries.front() != 0.0)
      throw Error(ErrorCode::CONFIG_ERROR, "time grid must start at 0");
    for (std::size_t i = 1; i < boundaries.size(); ++i) {
      if (!(boundaries[i] > boundaries[i - 1]) || !std::isfinite(boundaries[i]))
        throw Error(ErrorCode::CONFIG_ERROR,
                    "time grid boundaries must be finite and strictly increasing");
    }
  }

  bool operator==(const TimeGrid&) const = default;
};

struct SurvivalLabel {
  double observed_time = 0.0;  // days
  bool event_observed = false; // true = death observed, false = censored
};

// Grid-quantized outcome: either a definite death interval or a censoring
// point. Exactly one of the two holds.
class Outcome {
 public:
  static Outcome event(int k) { return Outcome(true, k); }
  static Outcome censored(int j) { return Outcome(false, j); }

  bool is_event() const { return event_; }
  bool is_censored() const { return !event_; }

  // Last interval survived (0..m-1 for in-grid deaths from to_outcome;
  // k = m is representable for the survived-everything outcome).
  int k() const { return index_; }
  // Last interval index j such that survival of intervals 1..j+1 is assumed.
  int censored_at() const { return index_; }
  int index() const { return index_; }

  // The binary sequence y^1..y^m implied by outcome index k: y^t = 1 iff t > k.
  std::vector<int> implied_sequence(int m) const {
    std::vector<int> y(static_cast<std::size_t>(m));
    for (int t = 1; t <= m; ++t) y[t - 1] = (t > index_) ? 1 : 0;
    return y;
  }

  bool operator==(const Outcome&) const = default;

 private:
  Outcome(bool event, int index) : event_(event), index_(index) {}
  bool event_;
  int index_;
};

// Maps a raw label onto the grid. Deaths at or beyond the grid cap carry no
// within-grid death information and are converted to censored-at-last-interval.
inline Outcome to_outcome(const SurvivalLabel& label, const TimeGrid& grid) {
  if (!std::isfinite(label.observed_time) || label.observed_time < 0.0)
    throw Error(ErrorCode::NEGATIVE_TIME,
                "observed_time must be finite and >= 0, got " +
                    format_double(label.observed_time));
  const auto& b = grid.boundaries;
  const int m = grid.m();
  if (label.observed_time >= b[m]) return Outcome::censored(m - 1);
  // 1-indexed interval j containing the time: first boundary strictly greater.
  int j = static_cast<int>(
      std::upper_bound(b.begin(), b.end(), label.observed_time) - b.begin());
  if (label.event_observed) return Outcome::event(j - 1);
  return Outcome::censored(j - 1);
}

struct StaticContext {
  std::vector<double> values;  // d_c
};

struct SeriesContext {
  int steps = 0;               // T
  int vars = 0;                // d_c
  std::vector<double> values;  // T x d_c, row-major

  double at(int t, int v) const { return values[static_cast<std::size_t>(t) * vars + v]; }
  double& at(int t, int v) { return values[static_cast<std::size_t>(t) * vars + v]; }
};

using Context = std::variant<StaticContext, SeriesContext>;

enum class ContextKind { static_vector, series };

inline const char* context_kind_name(ContextKind k) {
  return k == ContextKind::static_vector ? "static" : "series";
}

struct PatientRecord {
  std::string id;
  std::vector<double> attributes;  // d_x, attributes[0] == 1 (bias)
  Context context;
  SurvivalLabel label;
};

struct Dataset {
  std::vector<PatientRecord> records;
  TimeGrid grid;
  std::vector<std::string> attribute_names;  // d_x names, [0] == "bias"
  std::vector<std::string> context_names;    // d_c names
  ContextKind context_kind = ContextKind::static_vector;

  int d_x() const { return static_cast<int>(attribute_names.size()); }
  int d_c() const { return static_cast<int>(context_names.size()); }
  int size() const { return static_cast<int>(records.size()); }
};

struct Violation {
  std::string record_id;  // empty for dataset-level violations
  std::string rule;
  std::string detail;
};

// Checks every type invariant for every record. Violations are data, not
// exceptions: an empty report means the dataset is well formed.
inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  auto add = [&out](const std::string& id, const char* rule, std::string detail) {
    out.push_back({id, rule, std::move(detail)});
  };

  if (d.attribute_names.empty() || d.attribute_names[0] != "bias")
    add("", "attribute-names", "attribute_names[0] must be \"bias\"");
  try {
    d.grid.validate();
  } catch (const Error& e) {
    add("", "grid", e.what());
  }

  const int dx = d.d_x();
  const int dc = d.d_c();
  for (const auto& r : d.records) {
    if (static_cast<int>(r.attributes.size()) != dx) {
      add(r.id, "attribute-dim",
          "expected " + std::to_string(dx) + " attributes, got " +
              std::to_string(r.attributes.size()));
    } else if (r.attributes[0] != 1.0) {
      add(r.id, "bias-attribute",
          "attributes[0] must equal 1, got " + format_double(r.attributes[0]));
    }
    if (!all_finite(r.attributes))
      add(r.id, "finite-attributes", "attribute vector contains NaN or Inf");

    if (d.context_kind == ContextKind::static_vector) {
      const auto* sc = std::get_if<StaticContext>(&r.context);
      if (sc == nullptr) {
        add(r.id, "context-kind", "expected static context");
      } else {
        if (static_cast<int>(sc->values.size()) != dc)
          add(r.id, "context-dim",
              "expected " + std::to_string(dc) + " context values, got " +
                  std::to_string(sc->values.size()));
        if (!all_finite(sc->values))
          add(r.id, "finite-context", "context contains NaN or Inf");
      }
    } else {
      const auto* se = std::get_if<SeriesContext>(&r.context);
      if (se == nullptr) {
        add(r.id, "context-kind", "expected series context");
      } else {
        if (se->vars != dc)
          add(r.id, "context-dim",
              "expected " + std::to_string(dc) + " series variables, got " +
                  std::to_string(se->vars));
        if (se->steps <= 0 ||
            se->values.size() !=
                static_cast<std::size_t>(se->steps) * static_cast<std::size_t>(se->vars))
          add(r.id, "context-shape", "series buffer does not match steps x vars");
        if (!all_finite(se->values))
          add(r.id, "finite-context", "context contains NaN or Inf");
      }
    }

    if (!std::isfinite(r.label.observed_time) || r.label.observed_time < 0.0)
      add(r.id, "label-time", "observed_time must be finite and >= 0");
  }
  return out;
}

inline double censoring_rate(const Dataset& d) {
  if (d.records.empty()) return 0.0;
  int censored = 0;
  for (const auto& r : d.records)
    if (!r.label.event_observed) ++censored;
  return static_cast<double>(censored) / static_cast<double>(d.records.size());
}

}  // namespace censurv
