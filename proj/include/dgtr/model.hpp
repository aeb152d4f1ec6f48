#pragma once

// Dual-branch temporal encoder: the attention branch sees every frame of the
// window, the local branch sees the frames adjacent to the target, and their
// target-frame features are summed and regressed to body parameters.

#include <memory>
#include <optional>
#include <vector>

#include "dgtr/body_model.hpp"
#include "dgtr/gma.hpp"
#include "dgtr/ldr.hpp"

namespace dgtr {

struct ModelConfig {
  std::size_t seq_len = 16;
  std::size_t input_dim = 2048;
  bool use_gma = true;
  bool use_ldr = true;
  GmaConfig gma;
  LdrConfig ldr;
  RegressorConfig regressor;

  /// Copies the shared extents into the branch configs.
  ModelConfig& sync() {
    gma.seq_len = seq_len;
    gma.input_dim = input_dim;
    ldr.input_dim = input_dim;
    regressor.input_dim = input_dim;
    return *this;
  }

  void validate() const {
    if (!use_gma && !use_ldr) throw ConfigError("at least one of the two branches must be enabled");
    if (seq_len < 2) throw ConfigError("sequence length must be >= 2");
    if (use_gma) gma.validate();
    if (use_ldr) ldr.validate();
    regressor.validate();
  }

  std::size_t target_index() const { return seq_len / 2; }
};

/// Zeroes one branch's contribution after it is computed.
struct FuseOptions {
  bool zero_gma = false;
  bool zero_ldr = false;
};

template <class Real>
class DgtrModel {
 public:
  DgtrModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg.sync()) {
    cfg_.validate();
    if (cfg_.use_gma) {
      Rng rng(derive_seed(seed, 1));
      gma_.emplace(cfg_.gma, store_, rng);
    }
    if (cfg_.use_ldr) {
      Rng rng(derive_seed(seed, 2));
      ldr_.emplace(cfg_.ldr, store_, rng);
    }
    Rng rng(derive_seed(seed, 3));
    regressor_.emplace(cfg_.regressor, store_, rng);
  }

  DgtrModel(const DgtrModel&) = delete;
  DgtrModel& operator=(const DgtrModel&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<Real>& params() noexcept { return store_; }
  const ParamStore<Real>& params() const noexcept { return store_; }
  GmaEncoder<Real>* gma() noexcept { return gma_ ? &*gma_ : nullptr; }
  LdrEncoder<Real>* ldr() noexcept { return ldr_ ? &*ldr_ : nullptr; }
  const Regressor<Real>& regressor() const noexcept { return *regressor_; }

  /// Window rows fed to the local branch: centred on the target, clamped to
  /// the window for very short windows.
  std::vector<std::size_t> local_indices() const {
    std::vector<std::size_t> idx;
    const std::ptrdiff_t mid = static_cast<std::ptrdiff_t>(cfg_.target_index());
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(cfg_.ldr.window / 2);
    for (std::ptrdiff_t o = -half; o <= half; ++o) {
      idx.push_back(static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(mid + o, 0, static_cast<std::ptrdiff_t>(cfg_.seq_len) - 1)));
    }
    return idx;
  }

  Var<Real> local_frames(const Var<Real>& window) const {
    const auto idx = local_indices();
    bool contiguous = true;
    for (std::size_t i = 1; i < idx.size(); ++i) contiguous &= idx[i] == idx[i - 1] + 1;
    if (contiguous) return slice_rows(window, idx.front(), idx.size());
    std::vector<Var<Real>> rows;
    for (auto i : idx) rows.push_back(slice_rows(window, i, 1));
    return concat_rows(rows);
  }

  /// Sum of the enabled branches' target-frame features, [1 x input_dim].
  Var<Real> fused_feature(Tape<Real>& tape, const Var<Real>& window, FuseOptions opt = {}) const {
    if (window.rows() != cfg_.seq_len || window.cols() != cfg_.input_dim) {
      throw ShapeError("model: expected " + std::to_string(cfg_.seq_len) + "x" +
                       std::to_string(cfg_.input_dim) + " window, got " + shape_str(window.shape()));
    }
    std::optional<Var<Real>> g, l;
    if (gma_) {
      g = gma_->forward(tape, window);
      if (opt.zero_gma) g = scale(*g, Real(0));
    }
    if (ldr_) {
      l = ldr_->forward(tape, local_frames(window));
      if (opt.zero_ldr) l = scale(*l, Real(0));
    }
    if (g && l) return add(*g, *l);
    return g ? *g : *l;
  }

  /// window [T x input_dim] -> regressed parameters [1 x 157].
  Var<Real> forward(Tape<Real>& tape, const Var<Real>& window, FuseOptions opt = {}) const {
    return regressor_->forward(tape, fused_feature(tape, window, opt));
  }

 private:
  ModelConfig cfg_;
  ParamStore<Real> store_;
  std::optional<GmaEncoder<Real>> gma_;
  std::optional<LdrEncoder<Real>> ldr_;
  std::optional<Regressor<Real>> regressor_;
};

}  // namespace dgtr
