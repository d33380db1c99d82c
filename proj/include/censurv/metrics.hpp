#pragma once

// Survival evaluation: population temporal quantiles, accuracy-at-horizon,
// relative absolute error, and the k-fold retrain/evaluate harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "censurv/common.hpp"
#include "censurv/core.hpp"
#include "censurv/models.hpp"
#include "censurv/pipelines.hpp"

namespace censurv {

struct AccResult {
  double percent = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;
};

struct EvalReport {
  std::string model_id;
  std::string split_id;
  AccResult acc25, acc50, acc75;
  double rae = 0.0;
  std::size_t rae_count = 0;  // uncensored patients entering the RAE mean
};

// Smallest observed last-follow-up time (death or censoring alike) whose
// cumulative fraction reaches p. Lower interpolation keeps this exact.
inline double temporal_quantile(const Dataset& d, double p) {
  if (d.records.empty()) throw Error(ErrorCode::EMPTY_DATASET, "quantile of empty dataset");
  if (!(p > 0.0) || p > 1.0)
    throw Error(ErrorCode::CONFIG_ERROR, "quantile level must be in (0,1]");
  std::vector<double> times;
  times.reserve(d.records.size());
  for (const auto& r : d.records) times.push_back(r.label.observed_time);
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  if (rank == 0) rank = 1;
  if (rank > n) rank = n;
  return times[rank - 1];
}

// S at the interval containing tau. tau <= 0 is before the grid: certain
// survival. tau at or beyond the cap clamps to the final entry.
inline double survival_at(const std::vector<double>& curve, const TimeGrid& grid, double tau) {
  const int m = grid.m();
  if (static_cast<int>(curve.size()) != m + 1)
    throw Error(ErrorCode::DIM_MISMATCH, "curve length does not match grid");
  if (tau <= 0.0) return 1.0;
  auto it = std::upper_bound(grid.boundaries.begin(), grid.boundaries.end(), tau);
  auto i = static_cast<std::size_t>(it - grid.boundaries.begin());
  if (i > static_cast<std::size_t>(m)) i = static_cast<std::size_t>(m);
  return curve[i];
}

namespace detail {

// status at tau: 1 survivor, 0 non-survivor, -1 unknown (excluded)
inline int status_at(const SurvivalLabel& label, double tau) {
  if (label.event_observed) return label.observed_time <= tau ? 0 : 1;
  return label.observed_time >= tau ? 1 : -1;
}

inline AccResult acc_from_curves(const std::vector<std::vector<double>>& curves,
                                 const Dataset& d, double tau) {
  AccResult res;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const int st = status_at(d.records[i].label, tau);
    if (st < 0) {
      ++res.excluded;
      continue;
    }
    ++res.included;
    const int pred = survival_at(curves[i], d.grid, tau) >= 0.5 ? 1 : 0;
    if (pred == st) ++correct;
  }
  if (res.included == 0)
    throw Error(ErrorCode::NO_LABELED_PATIENTS,
                "every patient is censored before tau=" + std::to_string(tau));
  res.percent = 100.0 * static_cast<double>(correct) / static_cast<double>(res.included);
  return res;
}

inline std::pair<double, std::size_t> rae_from_curves(
    const std::vector<std::vector<double>>& curves, const Dataset& d) {
  const double floor_t = d.grid.boundaries[1] - d.grid.boundaries[0];
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& label = d.records[i].label;
    if (!label.event_observed) continue;
    const double that = predicted_event_time(curves[i], d.grid);
    const double denom = std::max(label.observed_time, floor_t);
    sum += std::min(std::abs(that - label.observed_time) / denom, 1.0);
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::NO_EVENTS, "no uncensored patients for RAE");
  return {sum / static_cast<double>(count), count};
}

inline std::vector<std::vector<double>> predict_all(const ModelArtifact& art,
                                                    const Dataset& d) {
  if (art.grid.boundaries != d.grid.boundaries)
    throw Error(ErrorCode::CONFIG_ERROR, "artifact and dataset use different time grids");
  std::vector<std::vector<double>> curves;
  curves.reserve(d.records.size());
  for (const auto& r : d.records) curves.push_back(predict_survival(art, r));
  return curves;
}

}  // namespace detail

// Fraction of status-known patients whose survivor/non-survivor call at tau
// (threshold S(tau) >= 0.5) matches the observed status.
inline AccResult acc_at(const ModelArtifact& art, const Dataset& d, double tau) {
  return detail::acc_from_curves(detail::predict_all(art, d), d, tau);
}

// Clipped relative error of predicted vs observed death time, uncensored only.
inline double rae(const ModelArtifact& art, const Dataset& d) {
  return detail::rae_from_curves(detail::predict_all(art, d), d).first;
}

inline EvalReport evaluate(const ModelArtifact& art, const Dataset& d,
                           const std::array<double, 3>& taus,
                           const std::string& model_id, const std::string& split_id = "") {
  const auto curves = detail::predict_all(art, d);
  EvalReport rep;
  rep.model_id = model_id;
  rep.split_id = split_id;
  rep.acc25 = detail::acc_from_curves(curves, d, taus[0]);
  rep.acc50 = detail::acc_from_curves(curves, d, taus[1]);
  rep.acc75 = detail::acc_from_curves(curves, d, taus[2]);
  auto [r, n] = detail::rae_from_curves(curves, d);
  rep.rae = r;
  rep.rae_count = n;
  return rep;
}

inline std::array<double, 3> quantile_horizons(const Dataset& d) {
  return {temporal_quantile(d, 0.25), temporal_quantile(d, 0.5), temporal_quantile(d, 0.75)};
}

struct KfoldResult {
  std::vector<EvalReport> folds;
  EvalReport mean;
};

// Seeded shuffle, contiguous folds. Each fold is the test split once; the
// remainder is split 90/10 into train/valid for early stopping. Horizons tau
// come from the full dataset so every fold is judged on the same clock.
inline KfoldResult kfold_eval(const ModelSpec& spec, const Dataset& d, int k = 5,
                              std::uint64_t seed = 0, FitHooks hooks = {}) {
  const std::size_t n = d.records.size();
  if (k < 2) throw Error(ErrorCode::CONFIG_ERROR, "k-fold needs k >= 2");
  if (n < static_cast<std::size_t>(k))
    throw Error(ErrorCode::TOO_FEW_RECORDS,
                "k=" + std::to_string(k) + " folds need at least that many records, have " +
                    std::to_string(n));

  const auto taus = quantile_horizons(d);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  KfoldResult out;
  const std::string model_id = family_name(spec.family);
  for (int f = 0; f < k; ++f) {
    const std::size_t lo = n * static_cast<std::size_t>(f) / static_cast<std::size_t>(k);
    const std::size_t hi = n * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(k);
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                      order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<std::size_t> rest;
    rest.reserve(n - test_idx.size());
    rest.insert(rest.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(lo));
    rest.insert(rest.end(), order.begin() + static_cast<std::ptrdiff_t>(hi), order.end());

    const std::size_t n_valid = rest.size() / 10;
    std::vector<std::size_t> train_idx(rest.begin(),
                                       rest.end() - static_cast<std::ptrdiff_t>(n_valid));
    std::vector<std::size_t> valid_idx(rest.end() - static_cast<std::ptrdiff_t>(n_valid),
                                       rest.end());

    const Dataset test = subset(d, test_idx);
    const Dataset train = subset(d, train_idx);
    const Dataset valid = subset(d, valid_idx);

    ModelArtifact art = fit(spec, train, valid, hooks);
    out.folds.push_back(evaluate(art, test, taus, model_id,
                                 "fold" + std::to_string(f + 1)));
  }

  EvalReport& mean = out.mean;
  mean.model_id = model_id;
  mean.split_id = "mean";
  for (const auto& rep : out.folds) {
    mean.acc25.percent += rep.acc25.percent;
    mean.acc50.percent += rep.acc50.percent;
    mean.acc75.percent += rep.acc75.percent;
    mean.rae += rep.rae;
    mean.acc25.included += rep.acc25.included;
    mean.acc25.excluded += rep.acc25.excluded;
    mean.acc50.included += rep.acc50.included;
    mean.acc50.excluded += rep.acc50.excluded;
    mean.acc75.included += rep.acc75.included;
    mean.acc75.excluded += rep.acc75.excluded;
    mean.rae_count += rep.rae_count;
  }
  const double dk = static_cast<double>(k);
  mean.acc25.percent /= dk;
  mean.acc50.percent /= dk;
  mean.acc75.percent /= dk;
  mean.rae /= dk;
  return out;
}

// One CSV row per report; the model cell is "model" or "model:split".
inline void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "model,acc25,acc50,acc75,rae\n";
  for (const auto& rep : reports) {
    std::string cell = rep.model_id;
    if (!rep.split_id.empty()) cell += ":" + rep.split_id;
    os << cell << ',' << format_double(rep.acc25.percent) << ','
       << format_double(rep.acc50.percent) << ',' << format_double(rep.acc75.percent) << ','
       << format_double(rep.rae) << '\n';
  }
}

}  // namespace censurv
