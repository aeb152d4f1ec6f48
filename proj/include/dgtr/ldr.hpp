#pragma once

// Local details refine branch. The frames adjacent to the target are mixed by
// a same-length temporal convolution, then pass through transformer-style
// blocks whose token mixer is a modulated graph convolution over frames.

#include <string>
#include <vector>

#include "dgtr/autograd.hpp"
#include "dgtr/params.hpp"

namespace dgtr {

struct LdrConfig {
  std::size_t window = 3;
  std::size_t layers = 1;
  std::size_t input_dim = 2048;
  std::size_t hidden = 512;
  std::size_t kernel = 3;
  std::size_t ffn_dim = 1024;
  /// Adds x back after the graph convolution: m = Norm(MGCN(x) + x).
  bool mgcn_residual = false;

  void validate() const {
    if (window < 1 || window % 2 == 0) throw ConfigError("ldr.window must be odd and >= 1");
    if (layers < 1) throw ConfigError("ldr.layers must be >= 1");
    if (kernel % 2 == 0) throw ConfigError("ldr.kernel must be odd");
    if (hidden < 2 || ffn_dim < 1 || input_dim < 1) throw ConfigError("ldr widths must be positive");
  }
};

/// D^-1/2 (A0 + delta) D^-1/2 with A0 all ones and
/// D = diag(sum_k |A0 + delta|_jk + 1e-6).
template <class Real>
Var<Real> normalized_adjacency(const Var<Real>& delta) {
  Var<Real> adj = add_scalar(delta, Real(1));
  Var<Real> r = rsqrt(add_scalar(row_sums(abs(adj)), Real(1e-6)));
  return mul(adj, matmul(r, transpose(r)));
}

/// Y = sigmoid(A_hat T), t_j = (x_j W) (.) modulation_j.
template <class Real>
Var<Real> modulated_gcn(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& modulation,
                        const Var<Real>& adjacency_delta) {
  const std::size_t nodes = x.rows();
  if (adjacency_delta.rows() != nodes || adjacency_delta.cols() != nodes) {
    throw ShapeError("mgcn: adjacency " + shape_str(adjacency_delta.shape()) + " does not match " +
                     std::to_string(nodes) + " nodes");
  }
  Var<Real> transformed = mul(matmul(x, weight), modulation);
  return sigmoid(matmul(normalized_adjacency(adjacency_delta), transformed));
}

template <class Real>
struct MgcnParams {
  Parameter<Real>* weight = nullptr;
  Parameter<Real>* modulation = nullptr;
  Parameter<Real>* adjacency_delta = nullptr;

  static MgcnParams create(ParamStore<Real>& store, const std::string& name, std::size_t nodes,
                           std::size_t width, Rng& rng) {
    MgcnParams p;
    p.weight = &store.add(name + ".weight", init::glorot<Real>({width, width}, width, width, rng));
    p.modulation = &store.add(name + ".modulation", Tensor<Real>({nodes, width}, Real(1)));
    p.adjacency_delta = &store.add(name + ".adjacency_delta", Tensor<Real>({nodes, nodes}));
    return p;
  }

  Var<Real> operator()(Tape<Real>& tape, const Var<Real>& x) const {
    return modulated_gcn(x, tape.param(*weight), tape.param(*modulation),
                         tape.param(*adjacency_delta));
  }
};

template <class Real>
class LdrEncoder {
 public:
  LdrEncoder(const LdrConfig& cfg, ParamStore<Real>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t k = cfg_.kernel, h = cfg_.hidden;
    conv_kernel_ = &store.add("ldr.conv.weight",
                              init::glorot<Real>({k, cfg_.input_dim, h}, k * cfg_.input_dim, h, rng));
    conv_bias_ = &store.add("ldr.conv.bias", Tensor<Real>({h}));
    pos_ = &store.add("ldr.pos_enc", init::normal<Real>({cfg_.window, h}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "ldr.layer" + std::to_string(l);
      Block b;
      b.mgcn = MgcnParams<Real>::create(store, p + ".mgcn", cfg_.window, h, rng);
      b.norm_mgcn = LayerNormParams<Real>::create(store, p + ".norm_mgcn", h);
      b.ffn_in = Linear<Real>::create(store, p + ".ffn_in", h, cfg_.ffn_dim, rng);
      b.ffn_out = Linear<Real>::create(store, p + ".ffn_out", cfg_.ffn_dim, h, rng);
      b.norm_ffn = LayerNormParams<Real>::create(store, p + ".norm_ffn", h);
      blocks_.push_back(b);
    }
    output_ = Linear<Real>::create(store, "ldr.output", h, cfg_.input_dim, rng);
  }

  const LdrConfig& config() const noexcept { return cfg_; }
  Parameter<Real>& conv_kernel() noexcept { return *conv_kernel_; }
  Parameter<Real>& conv_bias() noexcept { return *conv_bias_; }
  Parameter<Real>& positional_encoding() noexcept { return *pos_; }
  MgcnParams<Real>& mgcn(std::size_t layer) { return blocks_.at(layer).mgcn; }

  /// [window x input_dim] -> [window x hidden]
  Var<Real> local_aggregate(Tape<Real>& tape, const Var<Real>& frames) const {
    check_frames(frames);
    return conv1d(frames, tape.param(*conv_kernel_), tape.param(*conv_bias_));
  }

  /// [window x input_dim] -> middle-frame feature [1 x input_dim].
  Var<Real> forward(Tape<Real>& tape, const Var<Real>& frames) const {
    Var<Real> x = add(local_aggregate(tape, frames), tape.param(*pos_));
    for (const Block& b : blocks_) {
      Var<Real> g = b.mgcn(tape, x);
      if (cfg_.mgcn_residual) g = add(g, x);
      Var<Real> m = b.norm_mgcn(tape, g);
      x = b.norm_ffn(tape, add(b.ffn_out(tape, gelu(b.ffn_in(tape, m))), m));
    }
    return output_(tape, slice_rows(x, cfg_.window / 2, 1));
  }

 private:
  struct Block {
    MgcnParams<Real> mgcn;
    LayerNormParams<Real> norm_mgcn;
    Linear<Real> ffn_in, ffn_out;
    LayerNormParams<Real> norm_ffn;
  };

  void check_frames(const Var<Real>& frames) const {
    if (frames.rows() != cfg_.window || frames.cols() != cfg_.input_dim) {
      throw ShapeError("ldr: expected " + std::to_string(cfg_.window) + "x" +
                       std::to_string(cfg_.input_dim) + " frames, got " + shape_str(frames.shape()));
    }
  }

  LdrConfig cfg_;
  Parameter<Real>* conv_kernel_ = nullptr;
  Parameter<Real>* conv_bias_ = nullptr;
  Parameter<Real>* pos_ = nullptr;
  std::vector<Block> blocks_;
  Linear<Real> output_;
};

}  // namespace dgtr
