#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dgtr/autograd.hpp"
#include "dgtr/rng.hpp"

namespace dgtr {

/// Ordered collection of named parameters with stable addresses. Insertion
/// order is the canonical order used by checkpoints and the optimizer.
template <class Real>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<Real>& add(const std::string& name, Tensor<Real> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<Real>>();
    p->name = name;
    p->value = std::move(value);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Real>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return *params_[it->second];
  }
  const Parameter<Real>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

/// Glorot-uniform weights scaled by `gain`.
template <class Real>
Tensor<Real> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                    double gain = 1.0) {
  Tensor<Real> t(std::move(shape));
  const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<Real>(rng.uniform(-a, a));
  return t;
}

template <class Real>
Tensor<Real> normal(Shape shape, double stddev, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(stddev * rng.normal());
  return t;
}

}  // namespace init

/// Affine map x W + b with W stored [in x out].
template <class Real>
struct Linear {
  Parameter<Real>* weight = nullptr;
  Parameter<Real>* bias = nullptr;

  static Linear create(ParamStore<Real>& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, double gain = 1.0) {
    Linear l;
    l.weight = &store.add(name + ".weight", init::glorot<Real>({in, out}, in, out, rng, gain));
    l.bias = &store.add(name + ".bias", Tensor<Real>({out}));
    return l;
  }

  Var<Real> operator()(Tape<Real>& tape, const Var<Real>& x) const {
    return add_row(matmul(x, tape.param(*weight)), tape.param(*bias));
  }

  std::size_t in_features() const { return weight->value.shape()[0]; }
  std::size_t out_features() const { return weight->value.shape()[1]; }
};

template <class Real>
struct LayerNormParams {
  Parameter<Real>* gamma = nullptr;
  Parameter<Real>* beta = nullptr;

  static LayerNormParams create(ParamStore<Real>& store, const std::string& name, std::size_t n) {
    LayerNormParams ln;
    ln.gamma = &store.add(name + ".gamma", Tensor<Real>({n}, Real(1)));
    ln.beta = &store.add(name + ".beta", Tensor<Real>({n}));
    return ln;
  }

  Var<Real> operator()(Tape<Real>& tape, const Var<Real>& x) const {
    return layer_norm_rows(x, tape.param(*gamma), tape.param(*beta), Real(1e-5));
  }
};

}  // namespace dgtr
