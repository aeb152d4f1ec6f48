#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "dgtr/params.hpp"

namespace dgtr {

/// Linear warm-up to base_lr over `warmup` steps, then cosine annealing to 0
/// at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double base_lr) {
  if (warmup >= total) {
    throw ConfigError("warmup_steps (" + std::to_string(warmup) + ") must be < total steps (" +
                      std::to_string(total) + ")");
  }
  if (step > total) throw ContractError("lr_schedule: step beyond total");
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over every parameter of a store.
template <class Real>
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  std::size_t steps() const noexcept { return t_; }

  void step(ParamStore<Real>& store, double lr) {
    if (m_.size() != store.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : store) {
        m_.emplace_back(p->value.numel(), 0.0);
        v_.emplace_back(p->value.numel(), 0.0);
      }
    }
    for (const auto& p : store) {
      if (p->grad.empty()) continue;
      for (Real g : p->grad.values()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericError("adam: non-finite gradient in tensor '" + p->name + "'");
        }
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      Parameter<Real>& p = store[i];
      if (p.grad.empty()) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.numel(); ++k) {
        const double g = static_cast<double>(p.grad[k]);
        m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * g;
        v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * g * g;
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p.value[k] = static_cast<Real>(static_cast<double>(p.value[k]) - lr * mhat / (std::sqrt(vhat) + opt_.eps));
      }
    }
  }

 private:
  AdamOptions opt_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dgtr
