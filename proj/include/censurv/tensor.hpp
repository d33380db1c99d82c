#pragma once

// Minimal dense-tensor parameter store for the hand-rolled networks.
// Gradients live next to their values; `fresh` tracks whether a backward
// pass has written the gradient since the last zero_grads/step, so an
// optimizer step over stale gradients fails loudly instead of training on
// garbage.

#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "censurv/common.hpp"

namespace censurv {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 1) throw Error(ErrorCode::SHAPE_MISMATCH, "tensor dims must be positive");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (int d : shape_) n *= static_cast<std::size_t>(d);
    if (n != data_.size())
      throw Error(ErrorCode::SHAPE_MISMATCH, "data length does not match shape");
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D access.
  double& at(int i, int j) {
    check2(i, j);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at(int i, int j) const {
    check2(i, j);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void check2(int i, int j) const {
    if (shape_.size() != 2)
      throw Error(ErrorCode::SHAPE_MISMATCH, "2-D access on non-matrix tensor");
    if (i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1])
      throw Error(ErrorCode::INDEX_OUT_OF_RANGE,
                  "(" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                      std::to_string(shape_[0]) + "x" + std::to_string(shape_[1]));
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;   // momentum buffer, allocated on first step
  bool fresh = false;  // true once backward has written grad since last reset
};

class ParamStore {
 public:
  // The returned reference stays valid for the store's lifetime.
  Param& add(const std::string& name, Tensor value) {
    if (index_.count(name))
      throw Error(ErrorCode::CONFIG_ERROR, "duplicate parameter " + name);
    Param p;
    p.name = name;
    p.grad = Tensor(value.shape());
    p.value = std::move(value);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error(ErrorCode::CONFIG_ERROR, "unknown parameter " + name);
    return params_[it->second];
  }
  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error(ErrorCode::CONFIG_ERROR, "unknown parameter " + name);
    return params_[it->second];
  }

  std::deque<Param>& params() { return params_; }
  const std::deque<Param>& params() const { return params_; }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) {
      p.grad.zero();
      p.fresh = false;
    }
  }

  void mark_all_fresh() {
    for (auto& p : params_) p.fresh = true;
  }

 private:
  std::deque<Param> params_;  // deque keeps add()'s references stable
  std::unordered_map<std::string, std::size_t> index_;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// v <- mu v + (g + wd p); p <- p - lr v; gradients are zeroed afterwards.
// Requires every gradient fresh, so a step without a backward pass throws.
inline void sgd_step(ParamStore& store, const SgdConfig& cfg) {
  for (const auto& p : store.params())
    if (!p.fresh)
      throw Error(ErrorCode::STALE_GRADIENTS,
                  "gradient for " + p.name + " not computed since last step");
  for (auto& p : store.params()) {
    if (p.velocity.numel() == 0) p.velocity = Tensor(p.value.shape());
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i] + cfg.weight_decay * p.value[i];
      p.velocity[i] = cfg.momentum * p.velocity[i] + g;
      p.value[i] -= cfg.lr * p.velocity[i];
    }
    p.grad.zero();
    p.fresh = false;
  }
}

// Scales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params())
    for (std::size_t i = 0; i < p.grad.numel(); ++i) sq += p.grad[i] * p.grad[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& p : store.params())
      for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] *= scale;
  }
  return norm;
}

// --- checkpoint container ------------------------------------------------
// Layout: magic "CSPS", u64 little-endian manifest length, JSON manifest
// {"dtype":"f64","tensors":[{"name":...,"shape":[...]},...]}, then the raw
// doubles of each tensor in manifest order. Host is assumed little-endian.

inline void save_params(const ParamStore& store, std::ostream& os) {
  nlohmann::json manifest;
  manifest["dtype"] = "f64";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& p : store.params())
    manifest["tensors"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  const std::string text = manifest.dump();

  os.write("CSPS", 4);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : store.params())
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
  if (!os) throw Error(ErrorCode::IO_ERROR, "parameter write failed");
}

inline ParamStore load_params(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CSPS", 4) != 0)
    throw Error(ErrorCode::PARSE_ERROR, "not a parameter container (bad magic)");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is) throw Error(ErrorCode::PARSE_ERROR, "truncated parameter container");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw Error(ErrorCode::PARSE_ERROR, "truncated parameter manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, std::string("bad parameter manifest: ") + e.what());
  }
  if (manifest.at("dtype").get<std::string>() != "f64")
    throw Error(ErrorCode::PARSE_ERROR, "unsupported dtype in parameter container");

  ParamStore store;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw Error(ErrorCode::PARSE_ERROR, "truncated tensor data for " + name);
    store.add(name, std::move(t));
  }
  return store;
}

// --- finite-difference gradient check ------------------------------------

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  int n_checked = 0;
};

// Central-difference check of the gradients currently held in the store
// against loss_fn, which must evaluate the same loss from the current
// parameter values without touching gradients. Checks at most
// max_coords_per_param coordinates of each parameter (all of them when the
// tensor is small enough). rel err uses max(1, |fd|, |analytic|) so tiny
// gradients are compared absolutely.
inline GradCheckReport grad_check(ParamStore& store,
                                  const std::function<double()>& loss_fn, double eps,
                                  int max_coords_per_param, Rng& rng) {
  GradCheckReport report;
  for (auto& p : store.params()) {
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::size_t take = n;
    if (static_cast<std::size_t>(max_coords_per_param) < n) {
      take = static_cast<std::size_t>(max_coords_per_param);
      for (std::size_t i = 0; i < take; ++i) {  // partial Fisher-Yates
        const std::size_t j = i + rng.integer(n - i);
        std::swap(coords[i], coords[j]);
      }
    }
    for (std::size_t c = 0; c < take; ++c) {
      const std::size_t idx = coords[c];
      const double saved = p.value[idx];
      p.value[idx] = saved + eps;
      const double up = loss_fn();
      p.value[idx] = saved - eps;
      const double down = loss_fn();
      p.value[idx] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = p.grad[idx];
      const double abs_err = std::abs(fd - an);
      const double rel_err = abs_err / std::max({1.0, std::abs(fd), std::abs(an)});
      ++report.n_checked;
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.worst_param = p.name;
        report.worst_index = idx;
      }
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
    }
  }
  return report;
}

}  // namespace censurv
