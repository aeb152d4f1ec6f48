#pragma once

// Global motion attention branch: a pre-norm transformer encoder over every
// frame of the window. The encoder runs at `dim` with learned projections in
// from and back out to the static-feature width.

#include <cmath>
#include <string>
#include <vector>

#include "dgtr/autograd.hpp"
#include "dgtr/params.hpp"

namespace dgtr {

struct GmaConfig {
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t dim = 512;
  std::size_t input_dim = 2048;
  std::size_t ffn_dim = 1024;
  std::size_t seq_len = 16;

  void validate() const {
    if (layers < 1) throw ConfigError("gma.layers must be >= 1");
    if (heads < 1 || dim % heads != 0) {
      throw ConfigError("gma.dim (" + std::to_string(dim) + ") must be divisible by gma.heads (" +
                        std::to_string(heads) + ")");
    }
    if (seq_len < 2) throw ConfigError("sequence length must be >= 2 for the attention branch");
    if (input_dim < 2 || ffn_dim < 1) throw ConfigError("gma widths must be positive");
  }

  std::size_t head_dim() const { return dim / heads; }
  std::size_t target_index() const { return seq_len / 2; }
};

/// Row-stochastic attention matrix softmax(Q K^T / sqrt(d_h)).
template <class Real>
Var<Real> attention_weights(const Var<Real>& q, const Var<Real>& k) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " and key " +
                     shape_str(k.shape()) + " widths differ");
  }
  const Real inv_scale = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
  return softmax_rows(scale(matmul(q, transpose(k)), inv_scale));
}

/// softmax(Q K^T / sqrt(d_h)) V for a single head.
template <class Real>
Var<Real> scaled_dot_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v) {
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: key " + shape_str(k.shape()) + " and value " +
                     shape_str(v.shape()) + " row counts differ");
  }
  return matmul(attention_weights(q, k), v);
}

template <class Real>
class GmaEncoder {
 public:
  GmaEncoder(const GmaConfig& cfg, ParamStore<Real>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    input_ = Linear<Real>::create(store, "gma.input", cfg_.input_dim, cfg_.dim, rng);
    pos_ = &store.add("gma.pos_enc", init::normal<Real>({cfg_.seq_len, cfg_.dim}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "gma.layer" + std::to_string(l);
      Layer layer;
      layer.norm_attn = LayerNormParams<Real>::create(store, p + ".norm_attn", cfg_.dim);
      layer.query = Linear<Real>::create(store, p + ".query", cfg_.dim, cfg_.dim, rng);
      layer.key = Linear<Real>::create(store, p + ".key", cfg_.dim, cfg_.dim, rng);
      layer.value = Linear<Real>::create(store, p + ".value", cfg_.dim, cfg_.dim, rng);
      layer.attn_out = Linear<Real>::create(store, p + ".attn_out", cfg_.dim, cfg_.dim, rng);
      layer.norm_ffn = LayerNormParams<Real>::create(store, p + ".norm_ffn", cfg_.dim);
      layer.ffn_in = Linear<Real>::create(store, p + ".ffn_in", cfg_.dim, cfg_.ffn_dim, rng);
      layer.ffn_out = Linear<Real>::create(store, p + ".ffn_out", cfg_.ffn_dim, cfg_.dim, rng);
      layers_.push_back(layer);
    }
    output_ = Linear<Real>::create(store, "gma.output", cfg_.dim, cfg_.input_dim, rng);
  }

  const GmaConfig& config() const noexcept { return cfg_; }
  Parameter<Real>& positional_encoding() noexcept { return *pos_; }

  /// frames [T x input_dim] -> target-frame feature [1 x input_dim].
  Var<Real> forward(Tape<Real>& tape, const Var<Real>& frames) const {
    if (frames.rows() != cfg_.seq_len || frames.cols() != cfg_.input_dim) {
      throw ShapeError("gma: expected " + std::to_string(cfg_.seq_len) + "x" +
                       std::to_string(cfg_.input_dim) + " frames, got " + shape_str(frames.shape()));
    }
    Var<Real> x = add(input_(tape, frames), tape.param(*pos_));
    for (const Layer& layer : layers_) {
      x = add(x, attention_block(tape, layer, layer.norm_attn(tape, x)));
      Var<Real> h = layer.norm_ffn(tape, x);
      x = add(x, layer.ffn_out(tape, gelu(layer.ffn_in(tape, h))));
    }
    return output_(tape, slice_rows(x, cfg_.target_index(), 1));
  }

 private:
  struct Layer {
    LayerNormParams<Real> norm_attn;
    Linear<Real> query, key, value, attn_out;
    LayerNormParams<Real> norm_ffn;
    Linear<Real> ffn_in, ffn_out;
  };

  Var<Real> attention_block(Tape<Real>& tape, const Layer& layer, const Var<Real>& h) const {
    Var<Real> q = layer.query(tape, h);
    Var<Real> k = layer.key(tape, h);
    Var<Real> v = layer.value(tape, h);
    const std::size_t dh = cfg_.head_dim();
    std::vector<Var<Real>> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t i = 0; i < cfg_.heads; ++i) {
      heads.push_back(scaled_dot_attention(slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh),
                                           slice_cols(v, i * dh, dh)));
    }
    return layer.attn_out(tape, cfg_.heads == 1 ? heads.front() : concat_cols(heads));
  }

  GmaConfig cfg_;
  Linear<Real> input_;
  Parameter<Real>* pos_ = nullptr;
  std::vector<Layer> layers_;
  Linear<Real> output_;
};

}  // namespace dgtr
