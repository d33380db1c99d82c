#pragma once

// Additive hazards baseline. At each distinct event time the coefficient
// increment solves the normal equations of the at-risk design (bias column
// included); the ridge is applied only when those equations are singular,
// so the intercept-only fit reproduces Nelson-Aalen increments exactly.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "censurv/core.hpp"

namespace censurv {

struct AalenModel {
  std::vector<double> times;                    // distinct event times, ascending
  std::vector<std::vector<double>> increments;  // dB per time, full attribute width
  std::vector<char> ridged;                     // 1 where the solve needed the ridge
};

inline AalenModel aalen_fit(const Dataset& d) {
  const std::size_t n = d.records.size();
  if (n == 0) throw Error(ErrorCode::EMPTY_DATASET, "aalen_fit needs records");
  const int p = d.d_x();

  std::vector<double> event_times;
  for (const auto& r : d.records)
    if (r.label.event_observed) event_times.push_back(r.label.observed_time);
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()),
                    event_times.end());

  AalenModel model;  // no events: empty path, survival identically 1
  for (double t : event_times) {
    std::vector<std::size_t> at_risk;
    for (std::size_t i = 0; i < n; ++i)
      if (d.records[i].label.observed_time >= t) at_risk.push_back(i);

    Eigen::MatrixXd xr(static_cast<Eigen::Index>(at_risk.size()), p);
    Eigen::VectorXd dn(static_cast<Eigen::Index>(at_risk.size()));
    for (std::size_t q = 0; q < at_risk.size(); ++q) {
      const auto& r = d.records[at_risk[q]];
      for (int j = 0; j < p; ++j)
        xr(static_cast<Eigen::Index>(q), j) = r.attributes[static_cast<std::size_t>(j)];
      dn(static_cast<Eigen::Index>(q)) =
          (r.label.event_observed && r.label.observed_time == t) ? 1.0 : 0.0;
    }

    Eigen::MatrixXd a = xr.transpose() * xr;
    Eigen::VectorXd rhs = xr.transpose() * dn;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    Eigen::VectorXd db;
    bool ridged = false;
    if (lu.isInvertible()) {
      db = lu.solve(rhs);
    } else {
      ridged = true;
      Eigen::MatrixXd ridged_a = a + 1e-6 * Eigen::MatrixXd::Identity(p, p);
      db = ridged_a.ldlt().solve(rhs);
    }

    model.times.push_back(t);
    model.increments.emplace_back(db.data(), db.data() + db.size());
    model.ridged.push_back(ridged ? 1 : 0);
  }
  return model;
}

// S[i] = prod over event times strictly before b_i of (1 - x . dB), each
// factor clamped to [0,1] so the curve stays a valid survival function.
inline std::vector<double> aalen_survival(const AalenModel& model,
                                          std::span<const double> attributes,
                                          const TimeGrid& grid) {
  if (!model.increments.empty() &&
      model.increments.front().size() != attributes.size())
    throw Error(ErrorCode::DIM_MISMATCH,
                "record width does not match aalen increments");
  const int m = grid.m();
  std::vector<double> curve(static_cast<std::size_t>(m) + 1, 1.0);
  double surv = 1.0;
  std::size_t e = 0;
  for (int i = 1; i <= m; ++i) {
    const double b = grid.boundaries[static_cast<std::size_t>(i)];
    while (e < model.times.size() && model.times[e] < b) {
      double hazard = 0.0;
      for (std::size_t j = 0; j < attributes.size(); ++j)
        hazard += attributes[j] * model.increments[e][j];
      const double factor = std::clamp(1.0 - hazard, 0.0, 1.0);
      surv *= factor;
      ++e;
    }
    curve[static_cast<std::size_t>(i)] = surv;
  }
  return curve;
}

// Per-interval explanation: each interval's row sums the increments of the
// event times it contains (right-open intervals, so a boundary-exact event
// lands in the following interval).
inline std::vector<std::vector<double>> aalen_interval_increments(
    const AalenModel& model, const TimeGrid& grid, int width) {
  const int m = grid.m();
  std::vector<std::vector<double>> rows(
      static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(width), 0.0));
  for (std::size_t e = 0; e < model.times.size(); ++e) {
    const double t = model.times[e];
    auto it = std::upper_bound(grid.boundaries.begin(), grid.boundaries.end(), t);
    int interval = static_cast<int>(it - grid.boundaries.begin());
    if (interval < 1) interval = 1;
    if (interval > m) continue;  // beyond the grid cap
    auto& row = rows[static_cast<std::size_t>(interval) - 1];
    for (std::size_t j = 0; j < row.size() && j < model.increments[e].size(); ++j)
      row[j] += model.increments[e][j];
  }
  return rows;
}

}  // namespace censurv
