#pragma once

// Hand-rolled differentiable blocks. Each forward fills an explicit cache;
// the matching backward consumes it, accumulates parameter gradients in
// place, and returns the input gradients. No graph, no allocator tricks:
// the call sites own the unroll order and run backwards in reverse.

#include <cmath>
#include <span>
#include <vector>

#include "censurv/common.hpp"
#include "censurv/tensor.hpp"

namespace censurv {

enum class Activation { identity, relu, tanh_act, sigmoid };

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

inline double apply_activation(Activation a, double pre) {
  switch (a) {
    case Activation::identity: return pre;
    case Activation::relu: return pre > 0.0 ? pre : 0.0;
    case Activation::tanh_act: return std::tanh(pre);
    case Activation::sigmoid: return sigmoid(pre);
  }
  return pre;
}

inline double activation_derivative(Activation a, double pre) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::tanh_act: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = sigmoid(pre);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

// --- dense layer -----------------------------------------------------------
// y = act(W x + b), W shape [out, in], b shape [out].

struct DenseCache {
  std::vector<double> x;
  std::vector<double> pre;
};

inline std::vector<double> dense_forward(const Param& W, const Param& b,
                                         std::span<const double> x, Activation act,
                                         DenseCache* cache) {
  const int out = W.value.shape()[0];
  const int in = W.value.shape()[1];
  if (static_cast<int>(x.size()) != in)
    throw Error(ErrorCode::SHAPE_MISMATCH,
                W.name + " expects input width " + std::to_string(in));
  if (static_cast<int>(b.value.numel()) != out)
    throw Error(ErrorCode::SHAPE_MISMATCH, b.name + " width does not match " + W.name);

  std::vector<double> pre(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double s = b.value[static_cast<std::size_t>(o)];
    const double* row = W.value.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
    pre[static_cast<std::size_t>(o)] = s;
  }
  std::vector<double> y(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o)
    y[static_cast<std::size_t>(o)] = apply_activation(act, pre[static_cast<std::size_t>(o)]);
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->pre = std::move(pre);
  }
  return y;
}

inline std::vector<double> dense_backward(Param& W, Param& b, const DenseCache& cache,
                                          std::span<const double> dy, Activation act) {
  const int out = W.value.shape()[0];
  const int in = W.value.shape()[1];
  if (static_cast<int>(dy.size()) != out)
    throw Error(ErrorCode::SHAPE_MISMATCH, "dy width does not match " + W.name);

  std::vector<double> dx(static_cast<std::size_t>(in), 0.0);
  for (int o = 0; o < out; ++o) {
    const double dpre =
        dy[static_cast<std::size_t>(o)] *
        activation_derivative(act, cache.pre[static_cast<std::size_t>(o)]);
    b.grad[static_cast<std::size_t>(o)] += dpre;
    double* wrow = W.grad.data() + static_cast<std::size_t>(o) * in;
    const double* vrow = W.value.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      wrow[i] += dpre * cache.x[static_cast<std::size_t>(i)];
      dx[static_cast<std::size_t>(i)] += dpre * vrow[i];
    }
  }
  W.fresh = true;
  b.fresh = true;
  return dx;
}

// --- LSTM step ---------------------------------------------------------------
// Gate preactivations z = x Wx + h Wh + b with Wx [d_in, 4H], Wh [H, 4H],
// b [4H]; gate blocks ordered input, forget, output, candidate.

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

struct LstmCache {
  std::vector<double> x, h_prev, c_prev;
  std::vector<double> gi, gf, go, gg;  // post-nonlinearity gate values
  std::vector<double> c_new, tanh_c;
};

inline LstmState lstm_initial_state(int hidden) {
  return LstmState{std::vector<double>(static_cast<std::size_t>(hidden), 0.0),
                   std::vector<double>(static_cast<std::size_t>(hidden), 0.0)};
}

inline LstmState lstm_step_forward(const Param& Wx, const Param& Wh, const Param& b,
                                   std::span<const double> x, const LstmState& prev,
                                   LstmCache* cache) {
  const int d_in = Wx.value.shape()[0];
  const int four_h = Wx.value.shape()[1];
  const int hidden = four_h / 4;
  if (four_h != hidden * 4)
    throw Error(ErrorCode::SHAPE_MISMATCH, Wx.name + " gate width not divisible by 4");
  if (Wh.value.shape()[0] != hidden || Wh.value.shape()[1] != four_h)
    throw Error(ErrorCode::SHAPE_MISMATCH, Wh.name + " shape does not match " + Wx.name);
  if (static_cast<int>(x.size()) != d_in)
    throw Error(ErrorCode::SHAPE_MISMATCH, Wx.name + " expects input width " +
                                               std::to_string(d_in));
  if (static_cast<int>(prev.h.size()) != hidden ||
      static_cast<int>(prev.c.size()) != hidden)
    throw Error(ErrorCode::SHAPE_MISMATCH, "LSTM state width does not match " + Wh.name);

  std::vector<double> z(static_cast<std::size_t>(four_h));
  for (int g = 0; g < four_h; ++g) z[static_cast<std::size_t>(g)] = b.value[static_cast<std::size_t>(g)];
  for (int i = 0; i < d_in; ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    if (xi == 0.0) continue;
    const double* row = Wx.value.data() + static_cast<std::size_t>(i) * four_h;
    for (int g = 0; g < four_h; ++g) z[static_cast<std::size_t>(g)] += xi * row[g];
  }
  for (int j = 0; j < hidden; ++j) {
    const double hj = prev.h[static_cast<std::size_t>(j)];
    if (hj == 0.0) continue;
    const double* row = Wh.value.data() + static_cast<std::size_t>(j) * four_h;
    for (int g = 0; g < four_h; ++g) z[static_cast<std::size_t>(g)] += hj * row[g];
  }

  LstmState next;
  next.h.resize(static_cast<std::size_t>(hidden));
  next.c.resize(static_cast<std::size_t>(hidden));
  std::vector<double> gi(hidden), gf(hidden), go(hidden), gg(hidden), tanh_c(hidden);
  for (int j = 0; j < hidden; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    gi[sj] = sigmoid(z[sj]);
    gf[sj] = sigmoid(z[sj + hidden]);
    go[sj] = sigmoid(z[sj + 2 * static_cast<std::size_t>(hidden)]);
    gg[sj] = std::tanh(z[sj + 3 * static_cast<std::size_t>(hidden)]);
    next.c[sj] = gf[sj] * prev.c[sj] + gi[sj] * gg[sj];
    tanh_c[sj] = std::tanh(next.c[sj]);
    next.h[sj] = go[sj] * tanh_c[sj];
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->gi = std::move(gi);
    cache->gf = std::move(gf);
    cache->go = std::move(go);
    cache->gg = std::move(gg);
    cache->c_new = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

struct LstmStepGrads {
  std::vector<double> dx, dh_prev, dc_prev;
};

inline LstmStepGrads lstm_step_backward(Param& Wx, Param& Wh, Param& b,
                                        const LstmCache& cache,
                                        std::span<const double> dh,
                                        std::span<const double> dc) {
  const int d_in = Wx.value.shape()[0];
  const int four_h = Wx.value.shape()[1];
  const int hidden = four_h / 4;

  std::vector<double> dz(static_cast<std::size_t>(four_h));
  LstmStepGrads out;
  out.dx.assign(static_cast<std::size_t>(d_in), 0.0);
  out.dh_prev.assign(static_cast<std::size_t>(hidden), 0.0);
  out.dc_prev.assign(static_cast<std::size_t>(hidden), 0.0);

  for (int j = 0; j < hidden; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    const double go_ = cache.go[sj];
    const double tc = cache.tanh_c[sj];
    const double dgo = dh[sj] * tc;
    const double dct = dc[sj] + dh[sj] * go_ * (1.0 - tc * tc);
    const double dgi = dct * cache.gg[sj];
    const double dgg = dct * cache.gi[sj];
    const double dgf = dct * cache.c_prev[sj];
    out.dc_prev[sj] = dct * cache.gf[sj];

    dz[sj] = dgi * cache.gi[sj] * (1.0 - cache.gi[sj]);
    dz[sj + hidden] = dgf * cache.gf[sj] * (1.0 - cache.gf[sj]);
    dz[sj + 2 * static_cast<std::size_t>(hidden)] = dgo * go_ * (1.0 - go_);
    dz[sj + 3 * static_cast<std::size_t>(hidden)] =
        dgg * (1.0 - cache.gg[sj] * cache.gg[sj]);
  }

  for (int g = 0; g < four_h; ++g) b.grad[static_cast<std::size_t>(g)] += dz[static_cast<std::size_t>(g)];
  for (int i = 0; i < d_in; ++i) {
    const double xi = cache.x[static_cast<std::size_t>(i)];
    double* grow = Wx.grad.data() + static_cast<std::size_t>(i) * four_h;
    const double* vrow = Wx.value.data() + static_cast<std::size_t>(i) * four_h;
    double acc = 0.0;
    for (int g = 0; g < four_h; ++g) {
      grow[g] += xi * dz[static_cast<std::size_t>(g)];
      acc += vrow[g] * dz[static_cast<std::size_t>(g)];
    }
    out.dx[static_cast<std::size_t>(i)] = acc;
  }
  for (int j = 0; j < hidden; ++j) {
    const double hj = cache.h_prev[static_cast<std::size_t>(j)];
    double* grow = Wh.grad.data() + static_cast<std::size_t>(j) * four_h;
    const double* vrow = Wh.value.data() + static_cast<std::size_t>(j) * four_h;
    double acc = 0.0;
    for (int g = 0; g < four_h; ++g) {
      grow[g] += hj * dz[static_cast<std::size_t>(g)];
      acc += vrow[g] * dz[static_cast<std::size_t>(g)];
    }
    out.dh_prev[static_cast<std::size_t>(j)] += acc;
  }
  Wx.fresh = true;
  Wh.fresh = true;
  b.fresh = true;
  return out;
}

// --- dictionary attention ----------------------------------------------------
// alpha = softmax(h^T W) over K dictionary atoms, theta = sum_k alpha_k D_k.
// W [H, K], D [K, d_x]. theta stays on the simplex-combination of atoms, so
// an explanation is always a convex mixture of dictionary rows.

struct AttentionCache {
  std::vector<double> h;
  std::vector<double> alpha;
};

inline std::vector<double> attention_weights(const Param& W, std::span<const double> h) {
  const int hidden = W.value.shape()[0];
  const int atoms = W.value.shape()[1];
  if (static_cast<int>(h.size()) != hidden)
    throw Error(ErrorCode::SHAPE_MISMATCH, W.name + " expects state width " +
                                               std::to_string(hidden));
  std::vector<double> scores(static_cast<std::size_t>(atoms), 0.0);
  for (int i = 0; i < hidden; ++i) {
    const double hi = h[static_cast<std::size_t>(i)];
    const double* row = W.value.data() + static_cast<std::size_t>(i) * atoms;
    for (int k = 0; k < atoms; ++k) scores[static_cast<std::size_t>(k)] += hi * row[k];
  }
  const double log_z = logsumexp(scores);
  std::vector<double> alpha(static_cast<std::size_t>(atoms));
  for (int k = 0; k < atoms; ++k)
    alpha[static_cast<std::size_t>(k)] = std::exp(scores[static_cast<std::size_t>(k)] - log_z);
  return alpha;
}

inline std::vector<double> attention_combine_forward(const Param& W, const Param& D,
                                                     std::span<const double> h,
                                                     AttentionCache* cache) {
  const int atoms = W.value.shape()[1];
  if (D.value.shape()[0] != atoms)
    throw Error(ErrorCode::SHAPE_MISMATCH, D.name + " atom count does not match " + W.name);
  const int d_x = D.value.shape()[1];

  std::vector<double> alpha = attention_weights(W, h);
  std::vector<double> theta(static_cast<std::size_t>(d_x), 0.0);
  for (int k = 0; k < atoms; ++k) {
    const double ak = alpha[static_cast<std::size_t>(k)];
    const double* row = D.value.data() + static_cast<std::size_t>(k) * d_x;
    for (int j = 0; j < d_x; ++j) theta[static_cast<std::size_t>(j)] += ak * row[j];
  }
  if (cache) {
    cache->h.assign(h.begin(), h.end());
    cache->alpha = std::move(alpha);
  }
  return theta;
}

inline std::vector<double> attention_backward(Param& W, Param& D,
                                              const AttentionCache& cache,
                                              std::span<const double> dtheta) {
  const int hidden = W.value.shape()[0];
  const int atoms = W.value.shape()[1];
  const int d_x = D.value.shape()[1];
  if (static_cast<int>(dtheta.size()) != d_x)
    throw Error(ErrorCode::SHAPE_MISMATCH, "dtheta width does not match " + D.name);

  std::vector<double> dalpha(static_cast<std::size_t>(atoms), 0.0);
  for (int k = 0; k < atoms; ++k) {
    const double ak = cache.alpha[static_cast<std::size_t>(k)];
    double* grow = D.grad.data() + static_cast<std::size_t>(k) * d_x;
    const double* vrow = D.value.data() + static_cast<std::size_t>(k) * d_x;
    double acc = 0.0;
    for (int j = 0; j < d_x; ++j) {
      grow[j] += ak * dtheta[static_cast<std::size_t>(j)];
      acc += vrow[j] * dtheta[static_cast<std::size_t>(j)];
    }
    dalpha[static_cast<std::size_t>(k)] = acc;
  }

  // softmax jacobian: dscore_k = alpha_k (dalpha_k - sum_l alpha_l dalpha_l)
  double mix = 0.0;
  for (int k = 0; k < atoms; ++k)
    mix += cache.alpha[static_cast<std::size_t>(k)] * dalpha[static_cast<std::size_t>(k)];
  std::vector<double> dscore(static_cast<std::size_t>(atoms));
  for (int k = 0; k < atoms; ++k)
    dscore[static_cast<std::size_t>(k)] =
        cache.alpha[static_cast<std::size_t>(k)] * (dalpha[static_cast<std::size_t>(k)] - mix);

  std::vector<double> dh(static_cast<std::size_t>(hidden), 0.0);
  for (int i = 0; i < hidden; ++i) {
    const double hi = cache.h[static_cast<std::size_t>(i)];
    double* grow = W.grad.data() + static_cast<std::size_t>(i) * atoms;
    const double* vrow = W.value.data() + static_cast<std::size_t>(i) * atoms;
    double acc = 0.0;
    for (int k = 0; k < atoms; ++k) {
      grow[k] += hi * dscore[static_cast<std::size_t>(k)];
      acc += vrow[k] * dscore[static_cast<std::size_t>(k)];
    }
    dh[static_cast<std::size_t>(i)] = acc;
  }
  W.fresh = true;
  D.fresh = true;
  return dh;
}

// --- initializers --------------------------------------------------------

inline void glorot_uniform_init(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
}

inline void normal_init(Tensor& t, double stddev, Rng& rng) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
}

// Forget-gate biases start positive so early training does not flush state.
inline void lstm_bias_init(Tensor& b, double forget_bias) {
  const int hidden = static_cast<int>(b.numel()) / 4;
  b.zero();
  for (int j = 0; j < hidden; ++j)
    b[static_cast<std::size_t>(j) + static_cast<std::size_t>(hidden)] = forget_bias;
}

}  // namespace censurv
