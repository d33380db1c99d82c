#pragma once

// Proportional-hazards baseline: Breslow-ties partial likelihood maximized
// by damped Newton iterations, gradient steps when the Hessian is not
// usable. The bias attribute column is excluded (the partial likelihood is
// invariant to covariate translation, so an intercept is unidentifiable).

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "censurv/core.hpp"

namespace censurv {

struct CoxConfig {
  int max_iterations = 100;
  double gradient_tol = 1e-9;
  double separation_norm = 50.0;
};

struct CoxModel {
  std::vector<double> beta;            // covariate coefficients, no bias slot
  std::vector<double> baseline_times;  // distinct event times, ascending
  std::vector<double> baseline_dh;     // Breslow hazard increments
  bool separation = false;             // true when the fit hit the norm cap
  int iterations = 0;
  double log_partial_lik = 0.0;
};

namespace detail {

struct CoxData {
  std::vector<double> time;
  std::vector<char> event;
  Eigen::MatrixXd x;  // n rows, covariates without bias
  std::vector<std::size_t> order;  // indices sorted by descending time
};

inline CoxData cox_prepare(const Dataset& d) {
  const std::size_t n = d.records.size();
  if (n == 0) throw Error(ErrorCode::EMPTY_DATASET, "cox_fit needs records");
  const int d_cov = d.d_x() - 1;
  CoxData cd;
  cd.time.resize(n);
  cd.event.resize(n);
  cd.x.resize(static_cast<Eigen::Index>(n), d_cov);
  for (std::size_t i = 0; i < n; ++i) {
    cd.time[i] = d.records[i].label.observed_time;
    cd.event[i] = d.records[i].label.event_observed ? 1 : 0;
    for (int j = 0; j < d_cov; ++j)
      cd.x(static_cast<Eigen::Index>(i), j) = d.records[i].attributes[static_cast<std::size_t>(j) + 1];
  }
  cd.order.resize(n);
  std::iota(cd.order.begin(), cd.order.end(), std::size_t{0});
  std::stable_sort(cd.order.begin(), cd.order.end(),
                   [&](std::size_t a, std::size_t b) { return cd.time[a] > cd.time[b]; });
  bool any_event = false;
  for (char e : cd.event) any_event |= (e != 0);
  if (!any_event)
    throw Error(ErrorCode::NO_EVENTS, "cox_fit needs at least one uncensored event");
  return cd;
}

struct CoxEval {
  double log_lik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd neg_hessian;  // observed information (positive semidefinite)
};

// Single descending-time sweep accumulating risk-set sums. eta is shifted
// by its max so the exponentials stay in range at any beta.
inline CoxEval cox_eval(const CoxData& cd, const Eigen::VectorXd& beta,
                        bool with_derivs, std::vector<double>* breslow_dh = nullptr,
                        std::vector<double>* breslow_times = nullptr) {
  const std::size_t n = cd.time.size();
  const int p = static_cast<int>(beta.size());
  Eigen::VectorXd eta = cd.x * beta;
  const double shift = n ? eta.maxCoeff() : 0.0;

  CoxEval ev;
  ev.grad = Eigen::VectorXd::Zero(p);
  ev.neg_hessian = Eigen::MatrixXd::Zero(p, p);

  double sum_w = 0.0;                               // sum of exp(eta - shift) over risk set
  Eigen::VectorXd sum_wx = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd sum_wxx = Eigen::MatrixXd::Zero(p, p);

  std::size_t pos = 0;
  while (pos < n) {
    const double t = cd.time[cd.order[pos]];
    // admit everything tied at this time into the risk set
    std::size_t end = pos;
    while (end < n && cd.time[cd.order[end]] == t) {
      const std::size_t i = cd.order[end];
      const double w = std::exp(eta(static_cast<Eigen::Index>(i)) - shift);
      sum_w += w;
      if (with_derivs) {
        sum_wx += w * cd.x.row(static_cast<Eigen::Index>(i)).transpose();
        sum_wxx += w * cd.x.row(static_cast<Eigen::Index>(i)).transpose() *
                   cd.x.row(static_cast<Eigen::Index>(i));
      }
      ++end;
    }
    int deaths = 0;
    Eigen::VectorXd death_x = Eigen::VectorXd::Zero(p);
    double death_eta = 0.0;
    for (std::size_t q = pos; q < end; ++q) {
      const std::size_t i = cd.order[q];
      if (cd.event[i]) {
        ++deaths;
        death_eta += eta(static_cast<Eigen::Index>(i));
        if (with_derivs) death_x += cd.x.row(static_cast<Eigen::Index>(i)).transpose();
      }
    }
    if (deaths > 0) {
      ev.log_lik += death_eta - deaths * (std::log(sum_w) + shift);
      if (with_derivs) {
        const Eigen::VectorXd xbar = sum_wx / sum_w;
        ev.grad += death_x - deaths * xbar;
        ev.neg_hessian += deaths * (sum_wxx / sum_w - xbar * xbar.transpose());
      }
      if (breslow_dh) {
        breslow_times->push_back(t);
        breslow_dh->push_back(deaths * std::exp(-shift) / sum_w);
      }
    }
    pos = end;
  }
  if (breslow_dh) {  // times were collected descending
    std::reverse(breslow_times->begin(), breslow_times->end());
    std::reverse(breslow_dh->begin(), breslow_dh->end());
  }
  return ev;
}

}  // namespace detail

inline CoxModel cox_fit(const Dataset& d, const CoxConfig& cfg = {}) {
  detail::CoxData cd = detail::cox_prepare(d);
  const int p = static_cast<int>(cd.x.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

  CoxModel model;
  detail::CoxEval ev = detail::cox_eval(cd, beta, true);

  for (int iter = 0; iter < cfg.max_iterations && p > 0; ++iter) {
    if (ev.grad.lpNorm<Eigen::Infinity>() < cfg.gradient_tol) break;

    Eigen::VectorXd direction;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.neg_hessian);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      direction = ldlt.solve(ev.grad);
      if (direction.dot(ev.grad) <= 0.0) direction = ev.grad;  // not ascent, fall back
    } else {
      direction = ev.grad;
    }

    // backtracking line search on the partial likelihood
    double step = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = beta + step * direction;
      detail::CoxEval cand_ev = detail::cox_eval(cd, cand, true);
      if (std::isfinite(cand_ev.log_lik) && cand_ev.log_lik > ev.log_lik) {
        const double gain = cand_ev.log_lik - ev.log_lik;
        beta = cand;
        ev = std::move(cand_ev);
        improved = true;
        model.iterations = iter + 1;
        if (gain < 1e-12 * (1.0 + std::abs(ev.log_lik))) iter = cfg.max_iterations;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;

    if (beta.norm() > cfg.separation_norm) {
      beta *= cfg.separation_norm / beta.norm();  // return the capped fit
      ev = detail::cox_eval(cd, beta, true);
      model.separation = true;
      break;
    }
  }

  model.beta.assign(beta.data(), beta.data() + beta.size());
  model.log_partial_lik = ev.log_lik;
  detail::cox_eval(cd, beta, false, &model.baseline_dh, &model.baseline_times);
  return model;
}

// S[i] = exp(-H0(b_i^-) * exp(x . beta)): only event times strictly before
// the boundary contribute, matching the right-open interval convention.
inline std::vector<double> cox_survival(const CoxModel& model,
                                        std::span<const double> attributes,
                                        const TimeGrid& grid) {
  if (attributes.size() != model.beta.size() + 1)
    throw Error(ErrorCode::DIM_MISMATCH,
                "record has " + std::to_string(attributes.size()) +
                    " attributes, cox model expects " +
                    std::to_string(model.beta.size() + 1));
  double eta = 0.0;
  for (std::size_t j = 0; j < model.beta.size(); ++j)
    eta += model.beta[j] * attributes[j + 1];
  const double risk = std::exp(eta);

  const int m = grid.m();
  std::vector<double> curve(static_cast<std::size_t>(m) + 1, 1.0);
  double h0 = 0.0;
  std::size_t e = 0;
  for (int i = 1; i <= m; ++i) {
    const double b = grid.boundaries[static_cast<std::size_t>(i)];
    while (e < model.baseline_times.size() && model.baseline_times[e] < b)
      h0 += model.baseline_dh[e++];
    curve[static_cast<std::size_t>(i)] = std::exp(-h0 * risk);
  }
  return curve;
}

// Gradient of the Breslow partial likelihood at a given beta. Exposed for
// closed-form fixtures (at beta = 0 it is the at-risk-mean residual sum).
inline std::vector<double> cox_score(const Dataset& d, std::span<const double> beta) {
  detail::CoxData cd = detail::cox_prepare(d);
  if (static_cast<int>(beta.size()) != cd.x.cols())
    throw Error(ErrorCode::DIM_MISMATCH, "beta width does not match covariates");
  Eigen::VectorXd b(static_cast<Eigen::Index>(beta.size()));
  for (std::size_t j = 0; j < beta.size(); ++j) b(static_cast<Eigen::Index>(j)) = beta[j];
  detail::CoxEval ev = detail::cox_eval(cd, b, true);
  return std::vector<double>(ev.grad.data(), ev.grad.data() + ev.grad.size());
}

inline double cox_log_partial_lik(const Dataset& d, std::span<const double> beta) {
  detail::CoxData cd = detail::cox_prepare(d);
  Eigen::VectorXd b(static_cast<Eigen::Index>(beta.size()));
  for (std::size_t j = 0; j < beta.size(); ++j) b(static_cast<Eigen::Index>(j)) = beta[j];
  return detail::cox_eval(cd, b, false).log_lik;
}

}  // namespace censurv
