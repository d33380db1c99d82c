#pragma once

// Linear-chain CRF over monotone survival sequences.
//
// An outcome k (see core.hpp) corresponds to the unique valid binary
// sequence y^t = [t > k] over intervals t = 1..m. The score of outcome k is
//
//   s(k) = sum_{t=k+1}^m x . theta^t  +  pairwise(k)
//
// where pairwise(k) counts adjacent label pairs along the sequence:
// max(k-1,0) of (0,0), one (0,1) when 0 < k < m, and max(m-k-1,0) of (1,1).
// The (1,0) transition is structurally forbidden and never carries a weight.
// Probabilities are the softmax of the m+1 scores, so normalization runs
// over m+1 terms instead of 2^m sequences. brute_force_distribution keeps
// the 2^m enumeration as a cross-check oracle.

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "censurv/common.hpp"
#include "censurv/core.hpp"

namespace censurv {

struct PairwisePotentials {
  double w00 = 0.0;
  double w01 = 0.0;
  double w11 = 0.0;
};

// Per-patient interval coefficients theta^t, t = 1..m, each of width d_x.
class ExplanationSet {
 public:
  ExplanationSet(int m, int d_x)
      : m_(m), d_x_(d_x), coef_(static_cast<std::size_t>(m) * d_x, 0.0) {
    if (m < 1 || d_x < 1)
      throw Error(ErrorCode::DIM_MISMATCH,
                  "explanation needs m >= 1 intervals and d_x >= 1 features");
  }

  int m() const { return m_; }
  int d_x() const { return d_x_; }

  // t is the 1-indexed interval, j the 0-indexed feature.
  double& at(int t, int j) {
    check(t, j);
    return coef_[static_cast<std::size_t>(t - 1) * d_x_ + j];
  }
  double at(int t, int j) const {
    check(t, j);
    return coef_[static_cast<std::size_t>(t - 1) * d_x_ + j];
  }

  std::span<const double> interval(int t) const {
    if (t < 1 || t > m_)
      throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                  "interval " + std::to_string(t) + " outside 1.." + std::to_string(m_));
    return {coef_.data() + static_cast<std::size_t>(t - 1) * d_x_,
            static_cast<std::size_t>(d_x_)};
  }

  std::span<const double> flat() const { return coef_; }
  std::span<double> flat_mutable() { return coef_; }

 private:
  void check(int t, int j) const {
    if (t < 1 || t > m_ || j < 0 || j >= d_x_)
      throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                  "(" + std::to_string(t) + "," + std::to_string(j) + ") outside " +
                      std::to_string(m_) + "x" + std::to_string(d_x_));
  }

  int m_;
  int d_x_;
  std::vector<double> coef_;
};

// Counts of adjacent label pairs along the sequence for outcome k.
inline double pair_count_00(int k, int /*m*/) { return k > 1 ? k - 1 : 0; }
inline double pair_count_01(int k, int m) { return (k > 0 && k < m) ? 1 : 0; }
inline double pair_count_11(int k, int m) { return m - k > 1 ? m - k - 1 : 0; }

inline double pairwise_score(int k, int m, const PairwisePotentials& w) {
  return pair_count_00(k, m) * w.w00 + pair_count_01(k, m) * w.w01 +
         pair_count_11(k, m) * w.w11;
}

// Scores s(k) for k = 0..m.
inline std::vector<double> outcome_scores(
    std::span<const double> x, const ExplanationSet& theta,
    const std::optional<PairwisePotentials>& pairwise = std::nullopt) {
  const int m = theta.m();
  if (static_cast<int>(x.size()) != theta.d_x())
    throw Error(ErrorCode::DIM_MISMATCH,
                "x has " + std::to_string(x.size()) + " features, explanation expects " +
                    std::to_string(theta.d_x()));

  std::vector<double> dot(static_cast<std::size_t>(m) + 1, 0.0);  // dot[t] = x . theta^t
  for (int t = 1; t <= m; ++t) {
    auto row = theta.interval(t);
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * row[j];
    dot[static_cast<std::size_t>(t)] = s;
  }

  std::vector<double> scores(static_cast<std::size_t>(m) + 1, 0.0);
  double suffix = 0.0;  // sum_{t=k+1}^m dot[t], built from k = m downward
  scores[static_cast<std::size_t>(m)] = 0.0;
  for (int k = m - 1; k >= 0; --k) {
    suffix += dot[static_cast<std::size_t>(k) + 1];
    scores[static_cast<std::size_t>(k)] = suffix;
  }
  if (pairwise) {
    for (int k = 0; k <= m; ++k)
      scores[static_cast<std::size_t>(k)] += pairwise_score(k, m, *pairwise);
  }
  return scores;
}

struct OutcomeDistribution {
  std::vector<double> log_probs;  // indexed by outcome k = 0..m

  int m() const { return static_cast<int>(log_probs.size()) - 1; }

  double log_prob(int k) const {
    if (k < 0 || k > m())
      throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                  "outcome " + std::to_string(k) + " outside 0.." + std::to_string(m()));
    return log_probs[static_cast<std::size_t>(k)];
  }
  double prob(int k) const { return std::exp(log_prob(k)); }
};

inline OutcomeDistribution outcome_distribution(std::span<const double> scores) {
  if (scores.size() < 2)
    throw Error(ErrorCode::DIM_MISMATCH, "need scores for at least outcomes 0 and 1");
  if (!all_finite(scores))
    throw Error(ErrorCode::DIVERGED, "non-finite outcome score");
  const double log_z = logsumexp(scores);
  OutcomeDistribution dist;
  dist.log_probs.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    dist.log_probs[i] = scores[i] - log_z;
  return dist;
}

// log P(K = k) for an observed event; k = m is survival, not an event.
inline double log_prob_event(const OutcomeDistribution& dist, int k) {
  if (k < 0 || k > dist.m() - 1)
    throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                "event outcome " + std::to_string(k) + " outside 0.." +
                    std::to_string(dist.m() - 1));
  return dist.log_prob(k);
}

// log P(K > j): the likelihood of a record censored inside interval j+1.
inline double log_prob_censored(const OutcomeDistribution& dist, int censored_at) {
  const int m = dist.m();
  if (censored_at < 0 || censored_at > m - 1)
    throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                "censored_at " + std::to_string(censored_at) + " outside 0.." +
                    std::to_string(m - 1));
  std::span<const double> tail{dist.log_probs.data() + censored_at + 1,
                               static_cast<std::size_t>(m - censored_at)};
  return logsumexp(tail);
}

inline double log_prob_outcome(const OutcomeDistribution& dist, const Outcome& y) {
  return y.is_event() ? log_prob_event(dist, y.k())
                      : log_prob_censored(dist, y.censored_at());
}

struct CrfGradients {
  double log_prob = 0.0;
  // d log_prob / d theta^t = theta_coeff[t-1] * x, t = 1..m.
  std::vector<double> theta_coeff;
  double d_w00 = 0.0;
  double d_w01 = 0.0;
  double d_w11 = 0.0;
};

// Analytic gradient of the (possibly censored) log-likelihood in the scores'
// parameters. theta_coeff[t-1] multiplies x for the theta^t block; pairwise
// derivatives are expectation gaps of the pair-count features.
inline CrfGradients grad_log_prob(const OutcomeDistribution& dist, const Outcome& y) {
  const int m = dist.m();
  CrfGradients g;
  g.theta_coeff.assign(static_cast<std::size_t>(m), 0.0);

  std::vector<double> p(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k) p[static_cast<std::size_t>(k)] = dist.prob(k);

  // cum_lt[t] = P(K < t), t = 0..m+1.
  std::vector<double> cum_lt(static_cast<std::size_t>(m) + 2, 0.0);
  for (int t = 1; t <= m + 1; ++t)
    cum_lt[static_cast<std::size_t>(t)] =
        cum_lt[static_cast<std::size_t>(t) - 1] + p[static_cast<std::size_t>(t) - 1];

  double e00 = 0.0, e01 = 0.0, e11 = 0.0;
  for (int k = 0; k <= m; ++k) {
    const double pk = p[static_cast<std::size_t>(k)];
    e00 += pk * pair_count_00(k, m);
    e01 += pk * pair_count_01(k, m);
    e11 += pk * pair_count_11(k, m);
  }

  if (y.is_event()) {
    const int k = y.k();
    g.log_prob = log_prob_event(dist, k);
    for (int t = 1; t <= m; ++t)
      g.theta_coeff[static_cast<std::size_t>(t) - 1] =
          (t > k ? 1.0 : 0.0) - cum_lt[static_cast<std::size_t>(t)];
    g.d_w00 = pair_count_00(k, m) - e00;
    g.d_w01 = pair_count_01(k, m) - e01;
    g.d_w11 = pair_count_11(k, m) - e11;
  } else {
    const int j = y.censored_at();
    const double log_tail = log_prob_censored(dist, j);
    g.log_prob = log_tail;

    // q is the distribution of K conditioned on K > j.
    std::vector<double> q(static_cast<std::size_t>(m) + 1, 0.0);
    for (int k = j + 1; k <= m; ++k)
      q[static_cast<std::size_t>(k)] =
          std::exp(dist.log_prob(k) - log_tail);

    std::vector<double> qcum_lt(static_cast<std::size_t>(m) + 2, 0.0);
    for (int t = 1; t <= m + 1; ++t)
      qcum_lt[static_cast<std::size_t>(t)] =
          qcum_lt[static_cast<std::size_t>(t) - 1] + q[static_cast<std::size_t>(t) - 1];

    double q00 = 0.0, q01 = 0.0, q11 = 0.0;
    for (int k = j + 1; k <= m; ++k) {
      const double qk = q[static_cast<std::size_t>(k)];
      q00 += qk * pair_count_00(k, m);
      q01 += qk * pair_count_01(k, m);
      q11 += qk * pair_count_11(k, m);
    }

    for (int t = 1; t <= m; ++t)
      g.theta_coeff[static_cast<std::size_t>(t) - 1] =
          qcum_lt[static_cast<std::size_t>(t)] - cum_lt[static_cast<std::size_t>(t)];
    g.d_w00 = q00 - e00;
    g.d_w01 = q01 - e01;
    g.d_w11 = q11 - e11;
  }
  return g;
}

// S[i] = P(K >= i) for i = 0..m; S[0] is pinned to exactly 1.
inline std::vector<double> survival_curve(const OutcomeDistribution& dist) {
  const int m = dist.m();
  std::vector<double> s(static_cast<std::size_t>(m) + 1, 0.0);
  double tail = 0.0;
  for (int i = m; i >= 1; --i) {
    tail += dist.prob(i);
    s[static_cast<std::size_t>(i)] = std::min(tail, 1.0);
  }
  s[0] = 1.0;
  return s;
}

// Midpoint of the first interval where the curve has dropped below 1/2;
// the last interval's midpoint when it never does.
inline double predicted_event_time(std::span<const double> curve, const TimeGrid& grid) {
  const int m = grid.m();
  if (static_cast<int>(curve.size()) != m + 1)
    throw Error(ErrorCode::DIM_MISMATCH,
                "curve has " + std::to_string(curve.size()) + " points, grid expects " +
                    std::to_string(m + 1));
  for (int i = 1; i <= m; ++i)
    if (curve[static_cast<std::size_t>(i)] < 0.5) return grid.interval_midpoint(i);
  return grid.interval_midpoint(m);
}

// Exhaustive 2^m enumeration over all binary sequences. Sequences with a
// forbidden (1,0) transition get zero weight; the rest map 1:1 onto
// outcomes. Cross-check oracle for outcome_distribution, deliberately
// ignorant of the suffix-sum shortcut.
inline OutcomeDistribution brute_force_distribution(
    std::span<const double> x, const ExplanationSet& theta,
    const std::optional<PairwisePotentials>& pairwise = std::nullopt) {
  const int m = theta.m();
  if (m > 20)
    throw Error(ErrorCode::ORACLE_SCALE_EXCEEDED,
                "brute force enumerates 2^m sequences; m = " + std::to_string(m) +
                    " exceeds 20");
  if (static_cast<int>(x.size()) != theta.d_x())
    throw Error(ErrorCode::DIM_MISMATCH, "x width does not match explanation");

  std::vector<double> dot(static_cast<std::size_t>(m) + 1, 0.0);
  for (int t = 1; t <= m; ++t) {
    auto row = theta.interval(t);
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * row[j];
    dot[static_cast<std::size_t>(t)] = s;
  }

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> outcome_score(static_cast<std::size_t>(m) + 1, neg_inf);
  std::vector<int> hits(static_cast<std::size_t>(m) + 1, 0);
  std::vector<double> all_scores;

  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    bool valid = true;
    double score = 0.0;
    int first_one = m + 1;
    for (int t = 1; t <= m; ++t) {
      const int yt = static_cast<int>((mask >> (t - 1)) & 1u);
      if (yt) {
        score += dot[static_cast<std::size_t>(t)];
        if (first_one > m) first_one = t;
      }
      if (t > 1) {
        const int prev = static_cast<int>((mask >> (t - 2)) & 1u);
        if (prev == 1 && yt == 0) {
          valid = false;
          break;
        }
        if (pairwise) {
          if (prev == 0 && yt == 0) score += pairwise->w00;
          if (prev == 0 && yt == 1) score += pairwise->w01;
          if (prev == 1 && yt == 1) score += pairwise->w11;
        }
      }
    }
    if (!valid) continue;
    const int k = (first_one > m) ? m : first_one - 1;
    outcome_score[static_cast<std::size_t>(k)] = score;
    hits[static_cast<std::size_t>(k)] += 1;
    all_scores.push_back(score);
  }

  for (int k = 0; k <= m; ++k)
    if (hits[static_cast<std::size_t>(k)] != 1)
      throw Error(ErrorCode::ORACLE_SCALE_EXCEEDED,
                  "enumeration did not produce exactly one sequence per outcome");

  const double log_z = logsumexp(all_scores);
  OutcomeDistribution dist;
  dist.log_probs.resize(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k)
    dist.log_probs[static_cast<std::size_t>(k)] =
        outcome_score[static_cast<std::size_t>(k)] - log_z;
  return dist;
}

// CSV with one row per feature and one column per interval.
inline void write_explanation_csv(const ExplanationSet& theta,
                                  const std::vector<std::string>& feature_names,
                                  std::ostream& os) {
  if (static_cast<int>(feature_names.size()) != theta.d_x())
    throw Error(ErrorCode::DIM_MISMATCH,
                "feature name count does not match explanation width");
  os << "feature";
  for (int t = 1; t <= theta.m(); ++t) os << ",interval_" << t;
  os << "\n";
  for (int j = 0; j < theta.d_x(); ++j) {
    os << feature_names[static_cast<std::size_t>(j)];
    for (int t = 1; t <= theta.m(); ++t) os << "," << format_double(theta.at(t, j));
    os << "\n";
  }
}

// CSV of the step curve sampled at the grid boundaries.
inline void write_survival_csv(std::span<const double> curve, const TimeGrid& grid,
                               std::ostream& os) {
  if (static_cast<int>(curve.size()) != grid.m() + 1)
    throw Error(ErrorCode::DIM_MISMATCH, "curve length does not match grid");
  os << "time_days,survival_prob\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    os << format_double(grid.boundaries[i]) << "," << format_double(curve[i]) << "\n";
}

}  // namespace censurv
