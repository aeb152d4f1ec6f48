#pragma once

// Central finite-difference check of every parameter gradient of the full
// training loss.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dgtr/trainer.hpp"

namespace dgtr {

struct GradCheckOptions {
  double eps = 1e-4;
  double tolerance = 1e-4;
  /// Denominator floor: gradients far below it are compared absolutely.
  double floor = 1e-3;
  /// Random entries per tensor, checked in addition to the largest gradient.
  std::size_t samples = 4;
  std::uint64_t seed = 0;
  /// Name of a tensor whose analytic gradient is scaled by `corrupt_factor`.
  std::string corrupt;
  double corrupt_factor = 1.01;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_rel = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel = 0.0;
  double tolerance = 0.0;

  bool pass() const { return max_rel < tolerance; }
};

inline double grad_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Checks d loss / d theta for the windows centred on `centers` of `seq`.
inline GradCheckReport grad_check(DgtrModel<double>& model, const Sequence& seq,
                                  const std::vector<std::size_t>& centers, const SyntheticBody& body,
                                  const LossWeights& weights, const GradCheckOptions& opt = {}) {
  const BodyMatrices<double> bm(body);
  auto loss_value = [&] {
    Tape<double> tape(false);
    return batch_loss(tape, model, seq, centers, bm, weights).total.value()[0];
  };

  model.params().zero_grad();
  {
    Tape<double> tape;
    tape.backward(batch_loss(tape, model, seq, centers, bm, weights).total);
  }
  if (!opt.corrupt.empty()) {
    if (!model.params().contains(opt.corrupt)) throw ConfigError("grad-check: unknown tensor '" + opt.corrupt + "'");
    for (double& g : model.params().get(opt.corrupt).grad.values()) g *= opt.corrupt_factor;
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng(derive_seed(opt.seed, 0x6c));
  for (auto& pp : model.params()) {
    Parameter<double>& p = *pp;
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> idx;
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (std::abs(p.grad[k]) > std::abs(p.grad[best])) best = k;
    }
    idx.push_back(best);
    for (std::size_t s = 0; s < opt.samples && s + 1 < n; ++s) idx.push_back(rng.next() % n);

    TensorCheck tc;
    tc.name = p.name;
    for (auto k : idx) {
      const double saved = p.value[k];
      p.value[k] = saved + opt.eps;
      const double up = loss_value();
      p.value[k] = saved - opt.eps;
      const double down = loss_value();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double rel = grad_rel_error(p.grad[k], numeric, opt.floor);
      ++tc.checked;
      if (rel >= tc.max_rel) {
        tc.max_rel = rel;
        tc.worst_index = k;
        tc.analytic = p.grad[k];
        tc.numeric = numeric;
      }
    }
    report.max_rel = std::max(report.max_rel, tc.max_rel);
    report.tensors.push_back(tc);
  }
  return report;
}

/// Small configuration used by the gradient and receptive-field probes.
inline ModelConfig probe_model_config(std::size_t width = 32, std::size_t seq_len = 8) {
  ModelConfig c;
  c.seq_len = seq_len;
  c.gma.dim = width;
  c.gma.heads = 4;
  c.gma.ffn_dim = 2 * width;
  c.ldr.hidden = width;
  c.ldr.ffn_dim = 2 * width;
  c.regressor.hidden = 2 * width;
  c.sync();
  return c;
}

}  // namespace dgtr
