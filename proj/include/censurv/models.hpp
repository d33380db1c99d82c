#pragma once

// The seven model families behind one interface: fit, predict_survival,
// explain. Sequence-likelihood families (crf, mlp-crf, lstm-crf, mlp-cen,
// lstm-cen) train by minibatch SGD on the censored negative log-likelihood;
// cox and aalen wrap their closed-form estimators. Artifacts are
// deterministic functions of (spec, data): same seed, same bytes.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "censurv/aalen.hpp"
#include "censurv/common.hpp"
#include "censurv/core.hpp"
#include "censurv/cox.hpp"
#include "censurv/crf.hpp"
#include "censurv/nn.hpp"
#include "censurv/tensor.hpp"

namespace censurv {

enum class ModelFamily { cox, aalen, crf, mlp_crf, lstm_crf, mlp_cen, lstm_cen };

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::cox: return "cox";
    case ModelFamily::aalen: return "aalen";
    case ModelFamily::crf: return "crf";
    case ModelFamily::mlp_crf: return "mlp-crf";
    case ModelFamily::lstm_crf: return "lstm-crf";
    case ModelFamily::mlp_cen: return "mlp-cen";
    case ModelFamily::lstm_cen: return "lstm-cen";
  }
  return "?";
}

inline ModelFamily parse_family(const std::string& s) {
  if (s == "cox") return ModelFamily::cox;
  if (s == "aalen") return ModelFamily::aalen;
  if (s == "crf") return ModelFamily::crf;
  if (s == "mlp-crf") return ModelFamily::mlp_crf;
  if (s == "lstm-crf") return ModelFamily::lstm_crf;
  if (s == "mlp-cen") return ModelFamily::mlp_cen;
  if (s == "lstm-cen") return ModelFamily::lstm_cen;
  throw Error(ErrorCode::CONFIG_ERROR, "unknown model family: " + s);
}

inline bool family_is_cen(ModelFamily f) {
  return f == ModelFamily::mlp_cen || f == ModelFamily::lstm_cen;
}
inline bool family_uses_series(ModelFamily f) {
  return f == ModelFamily::lstm_crf || f == ModelFamily::lstm_cen;
}
inline bool family_uses_static(ModelFamily f) {
  return f == ModelFamily::mlp_crf || f == ModelFamily::mlp_cen;
}
// Families trained by the SGD loop, as opposed to the closed-form baselines.
inline bool family_is_sequential(ModelFamily f) {
  return f != ModelFamily::cox && f != ModelFamily::aalen;
}

struct ModelSpec {
  ModelFamily family = ModelFamily::crf;
  int hidden = 64;   // encoder / output-LSTM width
  int embed = 32;    // MLP embedding width
  int atoms = 16;    // dictionary size K
  std::optional<bool> pairwise;  // default: on for CEN families, off otherwise
  double l2 = 1e-4;
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 64;
  int epochs = 200;
  int patience = 10;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  bool pairwise_enabled() const {
    return pairwise.has_value() ? *pairwise : family_is_cen(family);
  }

  void validate() const {
    if (hidden < 1 || embed < 1 || atoms < 1)
      throw Error(ErrorCode::CONFIG_ERROR, "hidden, embed, and atoms must be >= 1");
    if (batch < 1 || epochs < 0 || patience < 0)
      throw Error(ErrorCode::CONFIG_ERROR, "batch >= 1, epochs/patience >= 0 required");
    if (!(lr > 0.0) || !(clip_norm > 0.0) || l2 < 0.0 || momentum < 0.0 || momentum >= 1.0)
      throw Error(ErrorCode::CONFIG_ERROR, "bad optimizer settings");
  }
};

struct TrainingInfo {
  int epochs_run = 0;
  int best_epoch = 0;
  double initial_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_valid_loss = std::numeric_limits<double>::quiet_NaN();
};

struct ModelArtifact {
  ModelSpec spec;
  TimeGrid grid{std::vector<double>{0.0, 1.0}};
  std::vector<std::string> attribute_names;
  std::vector<std::string> context_names;
  ContextKind context_kind = ContextKind::static_vector;
  ParamStore params;
  TrainingInfo training;
  std::vector<std::string> warnings;

  int m() const { return grid.m(); }
  int d_x() const { return static_cast<int>(attribute_names.size()); }
  int d_c() const { return static_cast<int>(context_names.size()); }
};

struct Explanation {
  ExplanationSet theta;
  bool global;  // true when every record receives the same coefficients
};

namespace detail {

inline std::optional<PairwisePotentials> pairwise_of(const ParamStore& p) {
  if (!p.has("pairwise")) return std::nullopt;
  const Tensor& t = p.at("pairwise").value;
  return PairwisePotentials{t[0], t[1], t[2]};
}

// outcome scores straight off a [m, d] coefficient tensor, bypassing
// ExplanationSet to avoid per-record copies in the training loop
inline std::vector<double> scores_from_tensor(
    const Tensor& theta, std::span<const double> x,
    const std::optional<PairwisePotentials>& pw) {
  const int m = theta.shape()[0];
  const int d = theta.shape()[1];
  if (static_cast<int>(x.size()) != d)
    throw Error(ErrorCode::DIM_MISMATCH, "input width does not match coefficients");
  std::vector<double> scores(static_cast<std::size_t>(m) + 1, 0.0);
  double suffix = 0.0;
  for (int k = m - 1; k >= 0; --k) {
    const double* row = theta.data() + static_cast<std::size_t>(k) * d;  // theta^{k+1}
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += row[j] * x[static_cast<std::size_t>(j)];
    suffix += dot;
    scores[static_cast<std::size_t>(k)] = suffix;
  }
  if (pw)
    for (int k = 0; k <= m; ++k)
      scores[static_cast<std::size_t>(k)] += pairwise_score(k, m, *pw);
  return scores;
}

// --- encoders -------------------------------------------------------------

struct EncoderTrace {
  DenseCache d1, d2;                 // MLP path
  std::vector<LstmCache> lstm;       // series path, one cache per step
  std::vector<double> z;             // encoder output
};

inline std::vector<double> encode(const ModelSpec& spec, const ParamStore& P,
                                  const Context& ctx, EncoderTrace* tr) {
  if (family_uses_static(spec.family)) {
    const auto* sc = std::get_if<StaticContext>(&ctx);
    if (!sc)
      throw Error(ErrorCode::INCOMPATIBLE_CONTEXT,
                  std::string(family_name(spec.family)) + " needs a static context");
    EncoderTrace local;
    EncoderTrace& t = tr ? *tr : local;
    auto h1 = dense_forward(P.at("enc.W1"), P.at("enc.b1"), sc->values,
                            Activation::relu, &t.d1);
    t.z = dense_forward(P.at("enc.W2"), P.at("enc.b2"), h1, Activation::tanh_act, &t.d2);
    return t.z;
  }
  const auto* se = std::get_if<SeriesContext>(&ctx);
  if (!se)
    throw Error(ErrorCode::INCOMPATIBLE_CONTEXT,
                std::string(family_name(spec.family)) + " needs a series context");
  const Param& wx = P.at("enc_lstm.Wx");
  const Param& wh = P.at("enc_lstm.Wh");
  const Param& b = P.at("enc_lstm.b");
  LstmState state = lstm_initial_state(spec.hidden);
  EncoderTrace local;
  EncoderTrace& t = tr ? *tr : local;
  t.lstm.resize(static_cast<std::size_t>(se->steps));
  for (int step = 0; step < se->steps; ++step) {
    std::span<const double> row{se->values.data() +
                                    static_cast<std::size_t>(step) * se->vars,
                                static_cast<std::size_t>(se->vars)};
    state = lstm_step_forward(wx, wh, b, row, state,
                              &t.lstm[static_cast<std::size_t>(step)]);
  }
  t.z = state.h;
  return t.z;
}

inline void encode_backward(const ModelSpec& spec, ParamStore& P,
                            const EncoderTrace& tr, std::span<const double> dz) {
  if (family_uses_static(spec.family)) {
    auto dh1 = dense_backward(P.at("enc.W2"), P.at("enc.b2"), tr.d2, dz,
                              Activation::tanh_act);
    dense_backward(P.at("enc.W1"), P.at("enc.b1"), tr.d1, dh1, Activation::relu);
    return;
  }
  Param& wx = P.at("enc_lstm.Wx");
  Param& wh = P.at("enc_lstm.Wh");
  Param& b = P.at("enc_lstm.b");
  std::vector<double> dh(dz.begin(), dz.end());
  std::vector<double> dc(dh.size(), 0.0);
  for (std::size_t step = tr.lstm.size(); step-- > 0;) {
    auto g = lstm_step_backward(wx, wh, b, tr.lstm[step], dh, dc);
    dh = std::move(g.dh_prev);
    dc = std::move(g.dc_prev);
  }
}

// --- CEN forward/backward --------------------------------------------------
// Encoder output feeds every step of an output LSTM unrolled over the m
// intervals; each hidden state picks a convex mixture of dictionary atoms.

struct CenTrace {
  EncoderTrace enc;
  std::vector<LstmCache> out;           // m caches
  std::vector<AttentionCache> att;      // m caches
  std::vector<std::vector<double>> theta;  // m rows of d_x
  std::vector<std::vector<double>> alpha;  // m rows of K
};

inline CenTrace cen_trace(const ModelSpec& spec, const ParamStore& P,
                          const Context& ctx, int m) {
  CenTrace tr;
  std::vector<double> e = encode(spec, P, ctx, &tr.enc);
  const Param& wx = P.at("out_lstm.Wx");
  const Param& wh = P.at("out_lstm.Wh");
  const Param& b = P.at("out_lstm.b");
  const Param& att_w = P.at("att.W");
  const Param& dict = P.at("dict");

  tr.out.resize(static_cast<std::size_t>(m));
  tr.att.resize(static_cast<std::size_t>(m));
  tr.theta.resize(static_cast<std::size_t>(m));
  tr.alpha.resize(static_cast<std::size_t>(m));
  LstmState state = lstm_initial_state(spec.hidden);
  for (int t = 0; t < m; ++t) {
    state = lstm_step_forward(wx, wh, b, e, state, &tr.out[static_cast<std::size_t>(t)]);
    tr.theta[static_cast<std::size_t>(t)] = attention_combine_forward(
        att_w, dict, state.h, &tr.att[static_cast<std::size_t>(t)]);
    tr.alpha[static_cast<std::size_t>(t)] = tr.att[static_cast<std::size_t>(t)].alpha;
  }
  return tr;
}

inline void cen_backward(const ModelSpec& spec, ParamStore& P, const CenTrace& tr,
                         const std::vector<std::vector<double>>& dtheta) {
  Param& wx = P.at("out_lstm.Wx");
  Param& wh = P.at("out_lstm.Wh");
  Param& b = P.at("out_lstm.b");
  Param& att_w = P.at("att.W");
  Param& dict = P.at("dict");

  const std::size_t m = tr.out.size();
  const std::size_t ew = tr.enc.z.size();
  std::vector<double> de(ew, 0.0);
  std::vector<double> dh_next(static_cast<std::size_t>(spec.hidden), 0.0);
  std::vector<double> dc_next(static_cast<std::size_t>(spec.hidden), 0.0);
  for (std::size_t t = m; t-- > 0;) {
    std::vector<double> dh = attention_backward(att_w, dict, tr.att[t], dtheta[t]);
    for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += dh_next[j];
    auto g = lstm_step_backward(wx, wh, b, tr.out[t], dh, dc_next);
    for (std::size_t j = 0; j < ew; ++j) de[j] += g.dx[j];
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
  }
  encode_backward(spec, P, tr.enc, de);
}

// --- per-record loss -------------------------------------------------------

inline std::vector<double> latent_input(const std::vector<double>& z) {
  std::vector<double> xt(z.size() + 1);
  xt[0] = 1.0;
  std::copy(z.begin(), z.end(), xt.begin() + 1);
  return xt;
}

// negative log-likelihood of one record, no gradients
inline double record_nll(const ModelSpec& spec, const ParamStore& P,
                         const PatientRecord& r, const TimeGrid& grid) {
  const Outcome y = to_outcome(r.label, grid);
  const auto pw = pairwise_of(P);
  std::vector<double> scores;
  switch (spec.family) {
    case ModelFamily::crf:
      scores = scores_from_tensor(P.at("theta").value, r.attributes, pw);
      break;
    case ModelFamily::mlp_crf:
    case ModelFamily::lstm_crf: {
      auto z = encode(spec, P, r.context, nullptr);
      scores = scores_from_tensor(P.at("theta_latent").value, latent_input(z), pw);
      break;
    }
    case ModelFamily::mlp_cen:
    case ModelFamily::lstm_cen: {
      CenTrace tr = cen_trace(spec, P, r.context, grid.m());
      Tensor theta({grid.m(), static_cast<int>(r.attributes.size())});
      for (int t = 0; t < grid.m(); ++t)
        std::copy(tr.theta[static_cast<std::size_t>(t)].begin(),
                  tr.theta[static_cast<std::size_t>(t)].end(),
                  theta.data() + static_cast<std::size_t>(t) * r.attributes.size());
      scores = scores_from_tensor(theta, r.attributes, pw);
      break;
    }
    default:
      throw Error(ErrorCode::CONFIG_ERROR, "record_nll on a closed-form family");
  }
  return -log_prob_outcome(outcome_distribution(scores), y);
}

// negative log-likelihood plus scaled gradient accumulation
inline double record_loss_grad(const ModelSpec& spec, ParamStore& P,
                               const PatientRecord& r, const TimeGrid& grid,
                               double scale) {
  const Outcome y = to_outcome(r.label, grid);
  const int m = grid.m();
  const auto pw = pairwise_of(P);

  auto apply_pairwise_grad = [&](const CrfGradients& g) {
    if (!P.has("pairwise")) return;
    Param& p = P.at("pairwise");
    p.grad[0] -= scale * g.d_w00;
    p.grad[1] -= scale * g.d_w01;
    p.grad[2] -= scale * g.d_w11;
    p.fresh = true;
  };

  switch (spec.family) {
    case ModelFamily::crf: {
      Param& theta = P.at("theta");
      auto scores = scores_from_tensor(theta.value, r.attributes, pw);
      auto dist = outcome_distribution(scores);
      auto g = grad_log_prob(dist, y);
      const int d = theta.value.shape()[1];
      for (int t = 0; t < m; ++t) {
        const double c = -scale * g.theta_coeff[static_cast<std::size_t>(t)];
        double* row = theta.grad.data() + static_cast<std::size_t>(t) * d;
        for (int j = 0; j < d; ++j) row[j] += c * r.attributes[static_cast<std::size_t>(j)];
      }
      theta.fresh = true;
      apply_pairwise_grad(g);
      return -g.log_prob;
    }
    case ModelFamily::mlp_crf:
    case ModelFamily::lstm_crf: {
      EncoderTrace tr;
      auto z = encode(spec, P, r.context, &tr);
      auto xt = latent_input(z);
      Param& theta = P.at("theta_latent");
      auto scores = scores_from_tensor(theta.value, xt, pw);
      auto dist = outcome_distribution(scores);
      auto g = grad_log_prob(dist, y);
      const int d = theta.value.shape()[1];
      std::vector<double> dxt(static_cast<std::size_t>(d), 0.0);
      for (int t = 0; t < m; ++t) {
        const double c = -scale * g.theta_coeff[static_cast<std::size_t>(t)];
        double* grow = theta.grad.data() + static_cast<std::size_t>(t) * d;
        const double* vrow = theta.value.data() + static_cast<std::size_t>(t) * d;
        for (int j = 0; j < d; ++j) {
          grow[j] += c * xt[static_cast<std::size_t>(j)];
          dxt[static_cast<std::size_t>(j)] += c * vrow[j];
        }
      }
      theta.fresh = true;
      apply_pairwise_grad(g);
      encode_backward(spec, P, tr, std::span<const double>{dxt}.subspan(1));
      return -g.log_prob;
    }
    case ModelFamily::mlp_cen:
    case ModelFamily::lstm_cen: {
      CenTrace tr = cen_trace(spec, P, r.context, m);
      const int d = static_cast<int>(r.attributes.size());
      Tensor theta({m, d});
      for (int t = 0; t < m; ++t)
        std::copy(tr.theta[static_cast<std::size_t>(t)].begin(),
                  tr.theta[static_cast<std::size_t>(t)].end(),
                  theta.data() + static_cast<std::size_t>(t) * d);
      auto scores = scores_from_tensor(theta, r.attributes, pw);
      auto dist = outcome_distribution(scores);
      auto g = grad_log_prob(dist, y);
      std::vector<std::vector<double>> dtheta(
          static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(d)));
      for (int t = 0; t < m; ++t) {
        const double c = -scale * g.theta_coeff[static_cast<std::size_t>(t)];
        for (int j = 0; j < d; ++j)
          dtheta[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] =
              c * r.attributes[static_cast<std::size_t>(j)];
      }
      apply_pairwise_grad(g);
      cen_backward(spec, P, tr, dtheta);
      return -g.log_prob;
    }
    default:
      throw Error(ErrorCode::CONFIG_ERROR, "record_loss_grad on a closed-form family");
  }
}

inline double mean_nll(const ModelSpec& spec, const ParamStore& P, const Dataset& d) {
  if (d.records.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& r : d.records) sum += record_nll(spec, P, r, d.grid);
  return sum / static_cast<double>(d.records.size());
}

// Parameter initialization. The RNG consumption order is part of the
// determinism contract: encoder first, then output LSTM, attention,
// dictionary. Zero-initialized tensors draw nothing.
inline ParamStore init_params(const ModelSpec& spec, int d_x, int d_c, int m, Rng& rng) {
  ParamStore P;
  const int H = spec.hidden;
  const int E = spec.embed;
  switch (spec.family) {
    case ModelFamily::crf:
      P.add("theta", Tensor({m, d_x}));
      break;
    case ModelFamily::mlp_crf: {
      Param& w1 = P.add("enc.W1", Tensor({H, d_c}));
      glorot_uniform_init(w1.value, d_c, H, rng);
      P.add("enc.b1", Tensor({H}));
      Param& w2 = P.add("enc.W2", Tensor({E, H}));
      glorot_uniform_init(w2.value, H, E, rng);
      P.add("enc.b2", Tensor({E}));
      P.add("theta_latent", Tensor({m, E + 1}));
      break;
    }
    case ModelFamily::lstm_crf: {
      Param& wx = P.add("enc_lstm.Wx", Tensor({d_c, 4 * H}));
      glorot_uniform_init(wx.value, d_c, 4 * H, rng);
      Param& wh = P.add("enc_lstm.Wh", Tensor({H, 4 * H}));
      glorot_uniform_init(wh.value, H, 4 * H, rng);
      Param& b = P.add("enc_lstm.b", Tensor({4 * H}));
      lstm_bias_init(b.value, 1.0);
      P.add("theta_latent", Tensor({m, H + 1}));
      break;
    }
    case ModelFamily::mlp_cen:
    case ModelFamily::lstm_cen: {
      int e_width = 0;
      if (spec.family == ModelFamily::mlp_cen) {
        Param& w1 = P.add("enc.W1", Tensor({H, d_c}));
        glorot_uniform_init(w1.value, d_c, H, rng);
        P.add("enc.b1", Tensor({H}));
        Param& w2 = P.add("enc.W2", Tensor({E, H}));
        glorot_uniform_init(w2.value, H, E, rng);
        P.add("enc.b2", Tensor({E}));
        e_width = E;
      } else {
        Param& wx = P.add("enc_lstm.Wx", Tensor({d_c, 4 * H}));
        glorot_uniform_init(wx.value, d_c, 4 * H, rng);
        Param& wh = P.add("enc_lstm.Wh", Tensor({H, 4 * H}));
        glorot_uniform_init(wh.value, H, 4 * H, rng);
        Param& b = P.add("enc_lstm.b", Tensor({4 * H}));
        lstm_bias_init(b.value, 1.0);
        e_width = H;
      }
      Param& owx = P.add("out_lstm.Wx", Tensor({e_width, 4 * H}));
      glorot_uniform_init(owx.value, e_width, 4 * H, rng);
      Param& owh = P.add("out_lstm.Wh", Tensor({H, 4 * H}));
      glorot_uniform_init(owh.value, H, 4 * H, rng);
      Param& ob = P.add("out_lstm.b", Tensor({4 * H}));
      lstm_bias_init(ob.value, 1.0);
      Param& aw = P.add("att.W", Tensor({H, spec.atoms}));
      normal_init(aw.value, 0.01, rng);
      Param& dict = P.add("dict", Tensor({spec.atoms, d_x}));
      normal_init(dict.value, 0.1, rng);
      break;
    }
    default:
      throw Error(ErrorCode::CONFIG_ERROR, "init_params on a closed-form family");
  }
  if (spec.pairwise_enabled()) P.add("pairwise", Tensor({3}));
  return P;
}

inline std::vector<Tensor> snapshot_values(const ParamStore& P) {
  std::vector<Tensor> vals;
  vals.reserve(P.params().size());
  for (const auto& p : P.params()) vals.push_back(p.value);
  return vals;
}

inline void restore_values(ParamStore& P, const std::vector<Tensor>& vals) {
  for (std::size_t i = 0; i < vals.size(); ++i) P.params()[i].value = vals[i];
}

}  // namespace detail

// Per-interval coefficients and attention maps of a CEN model for one
// context. theta row t is a convex combination of dictionary atoms by
// construction; alpha row t is that combination's weights.
struct CenForwardResult {
  ExplanationSet theta;
  std::vector<std::vector<double>> alpha;
};

inline CenForwardResult cen_forward(const ModelSpec& spec, const ParamStore& params,
                                    const Context& ctx, int m, int d_x) {
  if (!family_is_cen(spec.family))
    throw Error(ErrorCode::CONFIG_ERROR, "cen_forward needs a CEN family spec");
  detail::CenTrace tr = detail::cen_trace(spec, params, ctx, m);
  CenForwardResult out{ExplanationSet(m, d_x), std::move(tr.alpha)};
  for (int t = 1; t <= m; ++t) {
    const auto& row = tr.theta[static_cast<std::size_t>(t) - 1];
    if (static_cast<int>(row.size()) != d_x)
      throw Error(ErrorCode::SHAPE_MISMATCH, "dictionary width does not match d_x");
    for (int j = 0; j < d_x; ++j) out.theta.at(t, j) = row[static_cast<std::size_t>(j)];
  }
  return out;
}

struct FitHooks {
  // called after each epoch with the running train loss and the validation
  // loss (NaN when no validation split was given)
  std::function<void(int epoch, double train_loss, double valid_loss)> on_epoch;
};

inline ModelArtifact fit(const ModelSpec& spec, const Dataset& train,
                         const Dataset& valid, const FitHooks& hooks = {}) {
  spec.validate();
  if (train.records.empty())
    throw Error(ErrorCode::EMPTY_DATASET, "fit needs a non-empty training set");
  if (family_uses_series(spec.family) && train.context_kind != ContextKind::series)
    throw Error(ErrorCode::INCOMPATIBLE_CONTEXT,
                std::string(family_name(spec.family)) + " requires a series context");
  if (family_uses_static(spec.family) && train.context_kind != ContextKind::static_vector)
    throw Error(ErrorCode::INCOMPATIBLE_CONTEXT,
                std::string(family_name(spec.family)) + " requires a static context");

  ModelArtifact art;
  art.spec = spec;
  art.spec.pairwise = spec.pairwise_enabled();  // resolve the default into the artifact
  art.grid = train.grid;
  art.attribute_names = train.attribute_names;
  art.context_names = train.context_names;
  art.context_kind = train.context_kind;

  if (spec.family == ModelFamily::cox) {
    CoxModel cm = cox_fit(train);
    if (!cm.beta.empty())
      art.params.add("beta", Tensor({static_cast<int>(cm.beta.size())}, cm.beta));
    art.params.add("baseline.times",
                   Tensor({static_cast<int>(cm.baseline_times.size())}, cm.baseline_times));
    art.params.add("baseline.dh",
                   Tensor({static_cast<int>(cm.baseline_dh.size())}, cm.baseline_dh));
    if (cm.separation) art.warnings.push_back("SEPARATION_DETECTED");
    art.training.epochs_run = cm.iterations;
    art.training.initial_train_loss = art.training.final_train_loss = -cm.log_partial_lik;
    return art;
  }
  if (spec.family == ModelFamily::aalen) {
    AalenModel am = aalen_fit(train);
    const int n_ev = static_cast<int>(am.times.size());
    if (n_ev > 0) {
      art.params.add("aalen.times", Tensor({n_ev}, am.times));
      std::vector<double> flat;
      flat.reserve(static_cast<std::size_t>(n_ev) * train.d_x());
      for (const auto& row : am.increments) flat.insert(flat.end(), row.begin(), row.end());
      art.params.add("aalen.inc", Tensor({n_ev, train.d_x()}, std::move(flat)));
    }
    return art;
  }

  // SGD families
  Rng rng(spec.seed);
  art.params = detail::init_params(spec, train.d_x(), train.d_c(), train.grid.m(), rng);
  ParamStore& P = art.params;

  const bool has_valid = !valid.records.empty();
  art.training.initial_train_loss = detail::mean_nll(spec, P, train);
  if (!std::isfinite(art.training.initial_train_loss))
    throw Error(ErrorCode::DIVERGED, "initial training loss is not finite");

  double best_metric = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values = detail::snapshot_values(P);
  int best_epoch = 0;
  int since_best = 0;

  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SgdConfig opt{spec.lr, spec.momentum, spec.l2};

  int epoch = 0;
  for (epoch = 1; epoch <= spec.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(spec.batch));
      const double scale = 1.0 / static_cast<double>(stop - start);
      P.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t q = start; q < stop; ++q)
        batch_loss += detail::record_loss_grad(spec, P, train.records[order[q]],
                                               train.grid, scale);
      if (!std::isfinite(batch_loss))
        throw Error(ErrorCode::DIVERGED, "training loss became non-finite at epoch " +
                                             std::to_string(epoch));
      clip_global_norm(P, spec.clip_norm);
      sgd_step(P, opt);
      epoch_loss += batch_loss;
      seen += stop - start;
    }
    const double train_loss = epoch_loss / static_cast<double>(seen);
    double valid_loss = std::numeric_limits<double>::quiet_NaN();
    if (has_valid) {
      valid_loss = detail::mean_nll(spec, P, valid);
      if (!std::isfinite(valid_loss))
        throw Error(ErrorCode::DIVERGED, "validation loss became non-finite at epoch " +
                                             std::to_string(epoch));
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, train_loss, valid_loss);

    const double metric = has_valid ? valid_loss : train_loss;
    if (metric < best_metric) {
      best_metric = metric;
      best_values = detail::snapshot_values(P);
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= spec.patience && spec.patience > 0) {
      break;
    }
  }
  detail::restore_values(P, best_values);

  art.training.epochs_run = std::min(epoch, spec.epochs);
  art.training.best_epoch = best_epoch;
  art.training.final_train_loss = detail::mean_nll(spec, P, train);
  if (has_valid) art.training.final_valid_loss = detail::mean_nll(spec, P, valid);
  return art;
}

namespace detail {

inline void check_record_compat(const ModelArtifact& art, const PatientRecord& r) {
  if (static_cast<int>(r.attributes.size()) != art.d_x())
    throw Error(ErrorCode::DIM_MISMATCH,
                "record has " + std::to_string(r.attributes.size()) +
                    " attributes, artifact expects " + std::to_string(art.d_x()));
  if (family_uses_series(art.spec.family) || family_uses_static(art.spec.family)) {
    const bool is_series = std::holds_alternative<SeriesContext>(r.context);
    if (is_series != (art.context_kind == ContextKind::series))
      throw Error(ErrorCode::INCOMPATIBLE_CONTEXT,
                  "record context kind does not match artifact");
    int width = is_series ? std::get<SeriesContext>(r.context).vars
                          : static_cast<int>(std::get<StaticContext>(r.context).values.size());
    if (width != art.d_c())
      throw Error(ErrorCode::DIM_MISMATCH, "record context width does not match artifact");
  }
}

inline CoxModel cox_from_params(const ModelArtifact& art) {
  CoxModel cm;
  if (art.params.has("beta")) {
    const Tensor& b = art.params.at("beta").value;
    cm.beta.assign(b.data(), b.data() + b.numel());
  }
  const Tensor& ts = art.params.at("baseline.times").value;
  const Tensor& dh = art.params.at("baseline.dh").value;
  cm.baseline_times.assign(ts.data(), ts.data() + ts.numel());
  cm.baseline_dh.assign(dh.data(), dh.data() + dh.numel());
  return cm;
}

inline AalenModel aalen_from_params(const ModelArtifact& art) {
  AalenModel am;
  if (!art.params.has("aalen.times")) return am;
  const Tensor& ts = art.params.at("aalen.times").value;
  const Tensor& inc = art.params.at("aalen.inc").value;
  am.times.assign(ts.data(), ts.data() + ts.numel());
  const int d = inc.shape()[1];
  for (int e = 0; e < inc.shape()[0]; ++e) {
    am.increments.emplace_back(inc.data() + static_cast<std::size_t>(e) * d,
                               inc.data() + static_cast<std::size_t>(e + 1) * d);
    am.ridged.push_back(0);
  }
  return am;
}

}  // namespace detail

inline std::vector<double> predict_survival(const ModelArtifact& art,
                                            const PatientRecord& r) {
  detail::check_record_compat(art, r);
  switch (art.spec.family) {
    case ModelFamily::cox:
      return cox_survival(detail::cox_from_params(art), r.attributes, art.grid);
    case ModelFamily::aalen:
      return aalen_survival(detail::aalen_from_params(art), r.attributes, art.grid);
    case ModelFamily::crf: {
      auto scores = detail::scores_from_tensor(art.params.at("theta").value,
                                               r.attributes, detail::pairwise_of(art.params));
      return survival_curve(outcome_distribution(scores));
    }
    case ModelFamily::mlp_crf:
    case ModelFamily::lstm_crf: {
      auto z = detail::encode(art.spec, art.params, r.context, nullptr);
      auto scores = detail::scores_from_tensor(art.params.at("theta_latent").value,
                                               detail::latent_input(z),
                                               detail::pairwise_of(art.params));
      return survival_curve(outcome_distribution(scores));
    }
    case ModelFamily::mlp_cen:
    case ModelFamily::lstm_cen: {
      CenForwardResult cf =
          cen_forward(art.spec, art.params, r.context, art.m(), art.d_x());
      auto scores = outcome_scores(r.attributes, cf.theta, detail::pairwise_of(art.params));
      return survival_curve(outcome_distribution(scores));
    }
  }
  throw Error(ErrorCode::CONFIG_ERROR, "unknown family");
}

inline Explanation explain(const ModelArtifact& art, const PatientRecord& r) {
  detail::check_record_compat(art, r);
  const int m = art.m();
  const int d = art.d_x();
  switch (art.spec.family) {
    case ModelFamily::crf: {
      ExplanationSet theta(m, d);
      const Tensor& src = art.params.at("theta").value;
      for (int t = 1; t <= m; ++t)
        for (int j = 0; j < d; ++j) theta.at(t, j) = src.at(t - 1, j);
      return Explanation{std::move(theta), true};
    }
    case ModelFamily::cox: {
      // beta has no bias slot; replicate across intervals with bias 0
      ExplanationSet theta(m, d);
      if (art.params.has("beta")) {
        const Tensor& beta = art.params.at("beta").value;
        for (int t = 1; t <= m; ++t)
          for (std::size_t j = 0; j < beta.numel(); ++j)
            theta.at(t, static_cast<int>(j) + 1) = beta[j];
      }
      return Explanation{std::move(theta), true};
    }
    case ModelFamily::aalen: {
      AalenModel am = detail::aalen_from_params(art);
      auto rows = aalen_interval_increments(am, art.grid, d);
      ExplanationSet theta(m, d);
      for (int t = 1; t <= m; ++t)
        for (int j = 0; j < d; ++j)
          theta.at(t, j) = rows[static_cast<std::size_t>(t) - 1][static_cast<std::size_t>(j)];
      return Explanation{std::move(theta), true};
    }
    case ModelFamily::mlp_cen:
    case ModelFamily::lstm_cen: {
      CenForwardResult cf = cen_forward(art.spec, art.params, r.context, m, d);
      return Explanation{std::move(cf.theta), false};
    }
    case ModelFamily::mlp_crf:
    case ModelFamily::lstm_crf:
      throw Error(ErrorCode::EXPLANATION_UNAVAILABLE,
                  std::string(family_name(art.spec.family)) +
                      " weights act on latent features, not attributes");
  }
  throw Error(ErrorCode::CONFIG_ERROR, "unknown family");
}

// --- artifact serialization -------------------------------------------------
// Layout: magic "CENA", u64 little-endian metadata length, JSON metadata,
// then the parameter container (see tensor.hpp).

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["family"] = family_name(s.family);
  j["hidden"] = s.hidden;
  j["embed"] = s.embed;
  j["atoms"] = s.atoms;
  if (s.pairwise.has_value())
    j["pairwise"] = *s.pairwise;
  else
    j["pairwise"] = nullptr;
  j["l2"] = s.l2;
  j["lr"] = s.lr;
  j["momentum"] = s.momentum;
  j["batch"] = s.batch;
  j["epochs"] = s.epochs;
  j["patience"] = s.patience;
  j["clip_norm"] = s.clip_norm;
  j["seed"] = s.seed;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.hidden = j.value("hidden", s.hidden);
  s.embed = j.value("embed", s.embed);
  s.atoms = j.value("atoms", s.atoms);
  if (j.contains("pairwise") && !j.at("pairwise").is_null())
    s.pairwise = j.at("pairwise").get<bool>();
  s.l2 = j.value("l2", s.l2);
  s.lr = j.value("lr", s.lr);
  s.momentum = j.value("momentum", s.momentum);
  s.batch = j.value("batch", s.batch);
  s.epochs = j.value("epochs", s.epochs);
  s.patience = j.value("patience", s.patience);
  s.clip_norm = j.value("clip_norm", s.clip_norm);
  s.seed = j.value("seed", s.seed);
  return s;
}

inline void save_artifact(const ModelArtifact& art, std::ostream& os) {
  nlohmann::json meta;
  meta["format"] = 1;
  meta["spec"] = spec_to_json(art.spec);
  meta["grid"] = art.grid.boundaries;
  meta["attribute_names"] = art.attribute_names;
  meta["context_names"] = art.context_names;
  meta["context_kind"] = context_kind_name(art.context_kind);
  meta["training"] = {{"epochs_run", art.training.epochs_run},
                      {"best_epoch", art.training.best_epoch}};
  auto put_loss = [&](const char* key, double v) {
    if (std::isfinite(v))
      meta["training"][key] = v;
    else
      meta["training"][key] = nullptr;
  };
  put_loss("initial_train_loss", art.training.initial_train_loss);
  put_loss("final_train_loss", art.training.final_train_loss);
  put_loss("final_valid_loss", art.training.final_valid_loss);
  meta["warnings"] = art.warnings;
  const std::string text = meta.dump();

  os.write("CENA", 4);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  save_params(art.params, os);
  if (!os) throw Error(ErrorCode::IO_ERROR, "artifact write failed");
}

inline void save_artifact(const ModelArtifact& art, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IO_ERROR, "cannot open " + path + " for writing");
  save_artifact(art, os);
}

inline ModelArtifact load_artifact(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CENA", 4) != 0)
    throw Error(ErrorCode::PARSE_ERROR, "not a model artifact (bad magic)");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is) throw Error(ErrorCode::PARSE_ERROR, "truncated artifact");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw Error(ErrorCode::PARSE_ERROR, "truncated artifact metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("bad artifact metadata: ") + e.what());
  }

  ModelArtifact art;
  art.spec = spec_from_json(meta.at("spec"));
  art.grid = TimeGrid(meta.at("grid").get<std::vector<double>>());
  art.attribute_names = meta.at("attribute_names").get<std::vector<std::string>>();
  art.context_names = meta.at("context_names").get<std::vector<std::string>>();
  const std::string kind = meta.at("context_kind").get<std::string>();
  art.context_kind = (kind == "series") ? ContextKind::series : ContextKind::static_vector;
  const auto& tr = meta.at("training");
  art.training.epochs_run = tr.value("epochs_run", 0);
  art.training.best_epoch = tr.value("best_epoch", 0);
  auto get_loss = [&](const char* key) {
    return (tr.contains(key) && !tr.at(key).is_null())
               ? tr.at(key).get<double>()
               : std::numeric_limits<double>::quiet_NaN();
  };
  art.training.initial_train_loss = get_loss("initial_train_loss");
  art.training.final_train_loss = get_loss("final_train_loss");
  art.training.final_valid_loss = get_loss("final_valid_loss");
  art.warnings = meta.value("warnings", std::vector<std::string>{});
  art.params = load_params(is);
  return art;
}

inline ModelArtifact load_artifact(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO_ERROR, "cannot open " + path);
  return load_artifact(is);
}

}  // namespace censurv
