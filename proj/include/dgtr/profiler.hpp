#pragma once

// Parameter and floating-point operation counts per component.
//
// Counting conventions (forward pass, one window):
//   multiply-accumulate = 2; bias, residual, positional add = 1 per element;
//   activations, softmax, scaling, layer norm = 1 per element;
//   conv1d = 2 * W * k * C_in * C_out with zero padding counted;
//   attention = 2 T^2 d for Q K^T plus 2 T^2 d for A V.

#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/model.hpp"

namespace dgtr {

struct CostRow {
  std::string component;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct CostTable {
  std::vector<CostRow> rows;

  CostRow& row(const std::string& component) {
    for (auto& r : rows) {
      if (r.component == component) return r;
    }
    rows.push_back({component, 0, 0});
    return rows.back();
  }

  const CostRow* find(const std::string& component) const {
    for (const auto& r : rows) {
      if (r.component == component) return &r;
    }
    return nullptr;
  }

  /// Sum over rows whose name equals `prefix` or starts with `prefix.`.
  CostRow subtotal(const std::string& prefix) const {
    CostRow s{prefix, 0, 0};
    for (const auto& r : rows) {
      if (r.component == prefix || r.component.rfind(prefix + ".", 0) == 0) {
        s.params += r.params;
        s.flops += r.flops;
      }
    }
    return s;
  }

  CostRow total() const {
    CostRow s{"total", 0, 0};
    for (const auto& r : rows) {
      s.params += r.params;
      s.flops += r.flops;
    }
    return s;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "component,params,flops\n";
    for (const auto& r : rows) os << r.component << ',' << r.params << ',' << r.flops << '\n';
    for (const char* p : {"gma", "ldr", "regressor"}) {
      const CostRow s = subtotal(p);
      if (s.params || s.flops) os << "subtotal:" << p << ',' << s.params << ',' << s.flops << '\n';
    }
    const CostRow t = total();
    os << "total," << t.params << ',' << t.flops << '\n';
    return os.str();
  }

  std::string to_text() const {
    std::size_t w = 9;
    for (const auto& r : rows) w = std::max(w, r.component.size());
    w += 11;
    std::ostringstream os;
    auto line = [&](const std::string& name, std::uint64_t p, std::uint64_t f) {
      os << std::left << std::setw(static_cast<int>(w)) << name << std::right << std::setw(14) << p
         << std::setw(16) << f << '\n';
    };
    os << std::left << std::setw(static_cast<int>(w)) << "component" << std::right << std::setw(14) << "params"
       << std::setw(16) << "flops" << '\n';
    for (const auto& r : rows) line(r.component, r.params, r.flops);
    for (const char* p : {"gma", "ldr", "regressor"}) {
      const CostRow s = subtotal(p);
      if (s.params || s.flops) line(std::string("subtotal:") + p, s.params, s.flops);
    }
    const CostRow t = total();
    line("total", t.params, t.flops);
    std::ostringstream m;
    m << std::fixed << std::setprecision(2) << "(" << static_cast<double>(t.params) / 1e6 << "M params, "
      << static_cast<double>(t.flops) / 1e6 << "M flops)\n";
    os << m.str();
    return os.str();
  }
};

/// Row a parameter belongs to: its first two name components, with the whole
/// regressor collapsed into one row.
inline std::string cost_component(const std::string& param_name) {
  if (param_name.rfind("regressor.", 0) == 0) return "regressor";
  const auto first = param_name.find('.');
  if (first == std::string::npos) return param_name;
  const auto second = param_name.find('.', first + 1);
  return second == std::string::npos ? param_name : param_name.substr(0, second);
}

/// Counts the scalars actually registered by `model`.
template <class Real>
CostTable count_params(const DgtrModel<Real>& model) {
  CostTable t;
  for (const auto& p : model.params()) t.row(cost_component(p->name)).params += p->value.numel();
  return t;
}

/// Operation counts derived from the configuration alone.
inline CostTable count_flops(const ModelConfig& cfg_in) {
  ModelConfig cfg = cfg_in;
  cfg.sync();
  cfg.validate();
  using U = std::uint64_t;
  const U T = cfg.seq_len, I = cfg.input_dim;
  auto linear = [](U n, U in, U out) { return 2 * n * in * out + n * out; };

  CostTable t;
  if (cfg.use_gma) {
    const U d = cfg.gma.dim, F = cfg.gma.ffn_dim, H = cfg.gma.heads;
    t.row("gma.input").flops = linear(T, I, d);
    t.row("gma.pos_enc").flops = T * d;
    for (std::size_t l = 0; l < cfg.gma.layers; ++l) {
      const std::string p = "gma.layer" + std::to_string(l);
      U f = 0;
      f += T * d;                  // norm
      f += 3 * linear(T, d, d);    // query, key, value
      f += linear(T, d, d);        // output projection
      f += T * d;                  // residual
      f += T * d;                  // norm
      f += linear(T, d, F) + T * F + linear(T, F, d);
      f += T * d;                  // residual
      t.row(p).flops = f;
      t.row(p + ".attention").flops = 2 * T * T * d + 2 * H * T * T + 2 * T * T * d;
    }
    t.row("gma.output").flops = linear(1, d, I);
  }
  if (cfg.use_ldr) {
    const U W = cfg.ldr.window, h = cfg.ldr.hidden, F = cfg.ldr.ffn_dim, k = cfg.ldr.kernel;
    t.row("ldr.conv").flops = 2 * W * k * I * h + W * h;
    t.row("ldr.pos_enc").flops = W * h;
    for (std::size_t l = 0; l < cfg.ldr.layers; ++l) {
      U f = 0;
      f += 2 * W * h * h + W * h;  // X W, modulation
      f += 4 * W * W + 2 * W;      // adjacency normalisation
      f += 2 * W * W * h + W * h;  // propagation, sigmoid
      if (cfg.ldr.mgcn_residual) f += W * h;
      f += W * h;                  // norm
      f += linear(W, h, F) + W * F + linear(W, F, h);
      f += W * h;                  // residual
      f += W * h;                  // norm
      t.row("ldr.layer" + std::to_string(l)).flops = f;
    }
    t.row("ldr.output").flops = linear(1, h, I);
  }
  if (cfg.use_gma && cfg.use_ldr) t.row("fusion").flops = I;
  const U Hr = cfg.regressor.hidden, P = kParamDim;
  t.row("regressor").flops = cfg.regressor.iterations * (linear(1, I + P, Hr) + Hr + linear(1, Hr, P) + P);
  return t;
}

/// Parameter counts from the model merged with configuration-derived flops.
template <class Real>
CostTable profile(const DgtrModel<Real>& model) {
  CostTable t = count_flops(model.config());
  const CostTable p = count_params(model);
  for (const auto& r : p.rows) t.row(r.component).params = r.params;
  return t;
}

}  // namespace dgtr
