#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Every primitive appends one node to a Tape. Nodes are evaluated eagerly and
// keep their values; Tape::backward walks the nodes in reverse insertion
// order, so the gradient of a fixed record is deterministic. All reductions
// run index-ascending.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "dgtr/error.hpp"
#include "dgtr/tensor.hpp"

namespace dgtr {

/// Named learnable tensor. Gradients accumulate into `grad` across backward
/// passes until zero_grad() is called.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  void zero_grad() {
    if (grad.empty()) {
      grad = Tensor<Real>(value.shape());
    } else {
      grad.fill(Real(0));
    }
  }
};

template <class Real>
class Tape;

/// Handle to one node of a Tape.
template <class Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Real>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<Real>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// With grad_enabled == false no backward closures are recorded.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that owns a copy of `value` and does not participate in gradients.
  Var<Real> constant(Tensor<Real> value) {
    Node n;
    n.own = std::move(value);
    return append(std::move(n));
  }

  /// Leaf referencing caller-owned storage, which must outlive the tape.
  Var<Real> constant_ref(const Tensor<Real>& value) {
    Node n;
    n.ext = &value;
    return append(std::move(n));
  }

  /// Leaf that owns its value and receives a gradient readable via grad().
  Var<Real> variable(Tensor<Real> value) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = grad_enabled_;
    return append(std::move(n));
  }

  /// Leaf bound to a Parameter; backward accumulates into p.grad.
  Var<Real> param(Parameter<Real>& p) {
    Node n;
    n.ext = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    return append(std::move(n));
  }

  const Tensor<Real>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of node `id` after backward(); empty if nothing reached it.
  const Tensor<Real>& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->grad : n.grad;
  }

  /// Gradient slot for accumulation, zero-initialised on first use.
  Tensor<Real>& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    Tensor<Real>& g = n.param ? n.param->grad : n.grad;
    if (g.empty()) g = Tensor<Real>(value(id).shape());
    return g;
  }

  /// Appends a computed node. `fn` is dropped when no parent needs a gradient.
  Var<Real> push(Tensor<Real> value, std::initializer_list<std::size_t> parents,
                 BackwardFn fn) {
    return push(std::move(value), std::vector<std::size_t>(parents), std::move(fn));
  }

  Var<Real> push(Tensor<Real> value, const std::vector<std::size_t>& parents,
                 BackwardFn fn) {
    Node n;
    n.own = std::move(value);
    if (grad_enabled_) {
      for (auto p : parents) {
        if (nodes_[p].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return append(std::move(n));
  }

  /// Propagates d(loss)/d(node) to every node that requires a gradient.
  /// Intermediate gradients are reset first; parameter gradients accumulate.
  void backward(const Var<Real>& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (value(loss.id()).numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(value(loss.id()).shape()));
    }
    for (auto& n : nodes_) {
      if (!n.param) n.grad = Tensor<Real>();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_slot(loss.id())[0] += Real(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      if (grad(i).empty()) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<Real> own;
    const Tensor<Real>* ext = nullptr;
    Parameter<Real>* param = nullptr;
    Tensor<Real> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Real> append(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Real>(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable references across push
};

namespace kernels {

/// c[m x n] += a[m x k] * b[k x n]
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m x k] += a[m x n] * b[k x n]^T
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* brow = b + p * n;
      Real s = 0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

/// c[k x n] += a[m x k]^T * d[m x n]
template <class Real>
void gemm_tn(const Real* a, const Real* d, Real* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* drow = d + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      Real* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * drow[j];
    }
  }
}

}  // namespace kernels

namespace detail {

template <class Real>
Tape<Real>& same_tape(const Var<Real>& a, const Var<Real>& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
  return *a.tape();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

/// Elementwise unary op given f(x) and f'(x) expressed through (x, y).
template <class Real, class F, class DF>
Var<Real> unary(const Var<Real>& x, F f, DF df) {
  Tape<Real>& tape = *x.tape();
  const Tensor<Real>& xv = x.value();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid, df](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& xv = t.value(xid);
    const Tensor<Real>& yv = t.value(self);
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

template <class Real>
void accumulate(Tensor<Real>& into, const Tensor<Real>& g, Real sign = Real(1)) {
  for (std::size_t i = 0; i < g.numel(); ++i) into[i] += sign * g[i];
}

}  // namespace detail

/// Matrix product. Rank-1 operands are treated as single rows.
template <class Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& tape = detail::same_tape(a, b);
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (av.rank() > 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor<Real> out({m, n});
  kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t aid = a.id(), bid = b.id();
  return tape.push(std::move(out), {aid, bid}, [aid, bid, m, k, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(aid)) {
      kernels::gemm_nt(g.data(), t.value(bid).data(), t.grad_slot(aid).data(), m, n, k);
    }
    if (t.requires_grad(bid)) {
      kernels::gemm_tn(t.value(aid).data(), g.data(), t.grad_slot(bid).data(), m, k, n);
    }
  });
}

template <class Real>
Var<Real> transpose(const Var<Real>& a) {
  Tape<Real>& tape = *a.tape();
  const Tensor<Real>& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t aid = a.id();
  return tape.push(std::move(out), {aid}, [aid, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    Tensor<Real>& ga = t.grad_slot(aid);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Real> out = a.value();
  detail::accumulate(out, b.value());
  const std::size_t aid = a.id(), bid = b.id();
  return tape.push(std::move(out), {aid, bid}, [aid, bid](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(aid)) detail::accumulate(t.grad_slot(aid), g);
    if (t.requires_grad(bid)) detail::accumulate(t.grad_slot(bid), g);
  });
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Real> out = a.value();
  detail::accumulate(out, b.value(), Real(-1));
  const std::size_t aid = a.id(), bid = b.id();
  return tape.push(std::move(out), {aid, bid}, [aid, bid](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(aid)) detail::accumulate(t.grad_slot(aid), g);
    if (t.requires_grad(bid)) detail::accumulate(t.grad_slot(bid), g, Real(-1));
  });
}

/// Elementwise product.
template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape.push(std::move(out), {aid, bid}, [aid, bid](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(aid)) {
      Tensor<Real>& ga = t.grad_slot(aid);
      const Tensor<Real>& bv = t.value(bid);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bid)) {
      Tensor<Real>& gb = t.grad_slot(bid);
      const Tensor<Real>& av = t.value(aid);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// x[m x n] + bias[n], bias broadcast over rows.
template <class Real>
Var<Real> add_row(const Var<Real>& x, const Var<Real>& bias) {
  Tape<Real>& tape = detail::same_tape(x, bias);
  const Tensor<Real>& xv = x.value();
  const Tensor<Real>& bv = bias.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bv.numel() != n || bv.rows() != 1) {
    throw ShapeError("add_row: bias " + shape_str(bv.shape()) + " does not broadcast over " +
                     shape_str(xv.shape()));
  }
  Tensor<Real> out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t xid = x.id(), bid = bias.id();
  return tape.push(std::move(out), {xid, bid}, [xid, bid, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(xid)) detail::accumulate(t.grad_slot(xid), g);
    if (t.requires_grad(bid)) {
      Tensor<Real>& gb = t.grad_slot(bid);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

/// x[m x n] scaled row-wise by s[m x 1].
template <class Real>
Var<Real> mul_col(const Var<Real>& x, const Var<Real>& s) {
  Tape<Real>& tape = detail::same_tape(x, s);
  const Tensor<Real>& xv = x.value();
  const Tensor<Real>& sv = s.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (sv.numel() != m) {
    throw ShapeError("mul_col: scale " + shape_str(sv.shape()) + " does not broadcast over " +
                     shape_str(xv.shape()));
  }
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  const std::size_t xid = x.id(), sid = s.id();
  return tape.push(std::move(out), {xid, sid}, [xid, sid, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& xv = t.value(xid);
    const Tensor<Real>& sv = t.value(sid);
    if (t.requires_grad(xid)) {
      Tensor<Real>& gx = t.grad_slot(xid);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * sv[i];
    }
    if (t.requires_grad(sid)) {
      Tensor<Real>& gs = t.grad_slot(sid);
      for (std::size_t i = 0; i < m; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
        gs[i] += acc;
      }
    }
  });
}

/// x scaled by a one-element tensor s.
template <class Real>
Var<Real> scale_by(const Var<Real>& x, const Var<Real>& s) {
  Tape<Real>& tape = detail::same_tape(x, s);
  if (s.numel() != 1) throw ShapeError("scale_by: scale must have one element, got " + shape_str(s.shape()));
  const Tensor<Real>& xv = x.value();
  const Real sv = s.value()[0];
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * sv;
  const std::size_t xid = x.id(), sid = s.id();
  return tape.push(std::move(out), {xid, sid}, [xid, sid](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    if (t.requires_grad(xid)) {
      const Real sv = t.value(sid)[0];
      Tensor<Real>& gx = t.grad_slot(xid);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * sv;
    }
    if (t.requires_grad(sid)) {
      const Tensor<Real>& xv = t.value(xid);
      Real acc = 0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
      t.grad_slot(sid)[0] += acc;
    }
  });
}

template <class Real>
Var<Real> scale(const Var<Real>& x, Real c) {
  return detail::unary(x, [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}

template <class Real>
Var<Real> add_scalar(const Var<Real>& x, Real c) {
  return detail::unary(x, [c](Real v) { return v + c; }, [](Real, Real) { return Real(1); });
}

template <class Real>
Var<Real> square(const Var<Real>& x) {
  return detail::unary(x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

template <class Real>
Var<Real> abs(const Var<Real>& x) {
  return detail::unary(
      x, [](Real v) { return std::abs(v); },
      [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

/// Elementwise x^(-1/2); requires x > 0.
template <class Real>
Var<Real> rsqrt(const Var<Real>& x) {
  for (Real v : x.value().values()) {
    if (!(v > Real(0))) throw NumericError("rsqrt: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      x, [](Real v) { return Real(1) / std::sqrt(v); },
      [](Real, Real y) { return Real(-0.5) * y * y * y; });
}

template <class Real>
Var<Real> sigmoid(const Var<Real>& x) {
  return detail::unary(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

/// max(x, 0) + slope * min(x, 0)
template <class Real>
Var<Real> leaky_relu(const Var<Real>& x, Real slope) {
  return detail::unary(
      x, [slope](Real v) { return v > 0 ? v : slope * v; },
      [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

/// Exact (erf-based) GELU.
template <class Real>
Var<Real> gelu(const Var<Real>& x) {
  return detail::unary(
      x,
      [](Real v) { return Real(0.5) * v * (Real(1) + std::erf(v / std::numbers::sqrt2_v<Real>)); },
      [](Real v, Real) {
        const Real cdf = Real(0.5) * (Real(1) + std::erf(v / std::numbers::sqrt2_v<Real>));
        const Real pdf = std::exp(Real(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<Real> /
                         std::numbers::sqrt2_v<Real>;
        return cdf + v * pdf;
      });
}

/// Sum over every element, as a one-element tensor.
template <class Real>
Var<Real> sum(const Var<Real>& x) {
  Tape<Real>& tape = *x.tape();
  Real acc = 0;
  for (Real v : x.value().values()) acc += v;
  const std::size_t xid = x.id();
  return tape.push(Tensor<Real>::scalar(acc), {xid}, [xid](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

template <class Real>
Var<Real> mean(const Var<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Per-row sums, shape [m x 1].
template <class Real>
Var<Real> row_sums(const Var<Real>& x) {
  Tape<Real>& tape = *x.tape();
  const Tensor<Real>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<Real> out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += xv[i * n + j];
    out[i] = acc;
  }
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i];
  });
}

/// Row-wise softmax with per-row max subtraction.
template <class Real>
Var<Real> softmax_rows(const Var<Real>& x) {
  Tape<Real>& tape = *x.tape();
  const Tensor<Real>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = xv.data() + i * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& y = t.value(self);
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

/// Layer normalisation applied to every row, 1/n variance.
template <class Real>
Var<Real> layer_norm_rows(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta,
                          Real eps = Real(1e-5)) {
  Tape<Real>& tape = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const Tensor<Real>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (n < 2) throw ShapeError("layer_norm: need at least 2 features, got " + shape_str(xv.shape()));
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + ", " +
                     shape_str(beta.shape()) + " do not match " + shape_str(xv.shape()));
  }
  const Tensor<Real>& gv = gamma.value();
  const Tensor<Real>& bv = beta.value();
  Tensor<Real> out(xv.shape());
  Tensor<Real> xhat(xv.shape());
  std::vector<Real> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = xv.data() + i * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(n);
    rstd[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  const std::size_t xid = x.id(), gid = gamma.id(), bid = beta.id();
  return tape.push(
      std::move(out), {xid, gid, bid},
      [xid, gid, bid, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Real>& t,
                                                                          std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        if (t.requires_grad(gid)) {
          Tensor<Real>& gg = t.grad_slot(gid);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (t.requires_grad(bid)) {
          Tensor<Real>& gb = t.grad_slot(bid);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (t.requires_grad(xid)) {
          const Tensor<Real>& gv = t.value(gid);
          Tensor<Real>& gx = t.grad_slot(xid);
          const Real inv_n = Real(1) / static_cast<Real>(n);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const Real d = g[i * n + j] * gv[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const Real d = g[i * n + j] * gv[j];
              gx[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

/// Same-length temporal convolution. seq [T x Cin], kernel [k x Cin x Cout],
/// bias [Cout]; frames outside [0, T) read as zero.
template <class Real>
Var<Real> conv1d(const Var<Real>& seq, const Var<Real>& kernel, const Var<Real>& bias) {
  Tape<Real>& tape = detail::same_tape(seq, kernel);
  detail::same_tape(seq, bias);
  const Tensor<Real>& sv = seq.value();
  const Tensor<Real>& kv = kernel.value();
  const Tensor<Real>& bv = bias.value();
  if (kv.rank() != 3) throw ShapeError("conv1d: kernel must be [k x Cin x Cout], got " + shape_str(kv.shape()));
  const std::size_t k = kv.shape()[0], cin = kv.shape()[1], cout = kv.shape()[2];
  if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t T = sv.rows();
  if (sv.cols() != cin || bv.numel() != cout) {
    throw ShapeError("conv1d: input " + shape_str(sv.shape()) + " / bias " + shape_str(bv.shape()) +
                     " incompatible with kernel " + shape_str(kv.shape()));
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<Real> out({T, cout});
  for (std::size_t t = 0; t < T; ++t) {
    Real* orow = out.data() + t * cout;
    for (std::size_t o = 0; o < cout; ++o) orow[o] = bv[o];
    for (std::size_t tau = 0; tau < k; ++tau) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tau) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      kernels::gemm_nn(sv.data() + src * cin, kv.data() + tau * cin * cout, orow, 1, cin, cout);
    }
  }
  const std::size_t sid = seq.id(), kid = kernel.id(), bid = bias.id();
  return tape.push(std::move(out), {sid, kid, bid},
                   [sid, kid, bid, T, k, cin, cout, pad](Tape<Real>& t, std::size_t self) {
                     const Tensor<Real>& g = t.grad(self);
                     if (t.requires_grad(bid)) {
                       Tensor<Real>& gb = t.grad_slot(bid);
                       for (std::size_t r = 0; r < T; ++r)
                         for (std::size_t o = 0; o < cout; ++o) gb[o] += g[r * cout + o];
                     }
                     const bool need_s = t.requires_grad(sid), need_k = t.requires_grad(kid);
                     if (!need_s && !need_k) return;
                     const Tensor<Real>& sv = t.value(sid);
                     const Tensor<Real>& kv = t.value(kid);
                     for (std::size_t r = 0; r < T; ++r) {
                       for (std::size_t tau = 0; tau < k; ++tau) {
                         const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(r + tau) - pad;
                         if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                         if (need_s) {
                           kernels::gemm_nt(g.data() + r * cout, kv.data() + tau * cin * cout,
                                            t.grad_slot(sid).data() + src * cin, 1, cout, cin);
                         }
                         if (need_k) {
                           kernels::gemm_tn(sv.data() + src * cin, g.data() + r * cout,
                                            t.grad_slot(kid).data() + tau * cin * cout, 1, cin, cout);
                         }
                       }
                     }
                   });
}

template <class Real>
Var<Real> slice_rows(const Var<Real>& x, std::size_t start, std::size_t count) {
  Tape<Real>& tape = *x.tape();
  const Tensor<Real>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || start + count > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_str(xv.shape()));
  }
  Tensor<Real> out({count, n});
  std::copy_n(xv.data() + start * n, count * n, out.data());
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid, start, count, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < count * n; ++i) gx[start * n + i] += g[i];
  });
}

template <class Real>
Var<Real> slice_cols(const Var<Real>& x, std::size_t start, std::size_t count) {
  Tape<Real>& tape = *x.tape();
  const Tensor<Real>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || start + count > n) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_str(xv.shape()));
  }
  Tensor<Real> out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.data() + i * n + start, count, out.data() + i * count);
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid, start, count, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    Tensor<Real>& gx = t.grad_slot(xid);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
  });
}

template <class Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape<Real>& tape = *parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    ids.push_back(p.id());
    widths.push_back(p.cols());
    n += p.cols();
  }
  Tensor<Real> out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<Real>& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.data() + i * w, w, out.data() + i * n + off);
    off += w;
  }
  return tape.push(std::move(out), ids, [ids, widths, m, n](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (t.requires_grad(ids[p])) {
        Tensor<Real>& gp = t.grad_slot(ids[p]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off + j];
      }
      off += w;
    }
  });
}

template <class Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Tape<Real>& tape = *parts.front().tape();
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids, sizes;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    ids.push_back(p.id());
    sizes.push_back(p.numel());
    m += p.rows();
  }
  Tensor<Real> out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.numel(), out.data() + off);
    off += p.numel();
  }
  return tape.push(std::move(out), ids, [ids, sizes](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (t.requires_grad(ids[p])) {
        Tensor<Real>& gp = t.grad_slot(ids[p]);
        for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += g[off + i];
      }
      off += sizes[p];
    }
  });
}

template <class Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  Tape<Real>& tape = *x.tape();
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {xid}, [xid](Tape<Real>& t, std::size_t self) {
    detail::accumulate(t.grad_slot(xid), t.grad(self));
  });
}

/// Row-wise cross product of two [m x 3] matrices.
template <class Real>
Var<Real> cross_rows(const Var<Real>& a, const Var<Real>& b) {
  Tape<Real>& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "cross_rows");
  if (a.cols() != 3) throw ShapeError("cross_rows: need 3 columns, got " + shape_str(a.shape()));
  const std::size_t m = a.rows();
  auto cross = [](const Real* u, const Real* v, Real* w, Real sign) {
    w[0] += sign * (u[1] * v[2] - u[2] * v[1]);
    w[1] += sign * (u[2] * v[0] - u[0] * v[2]);
    w[2] += sign * (u[0] * v[1] - u[1] * v[0]);
  };
  Tensor<Real> out({m, 3});
  for (std::size_t i = 0; i < m; ++i)
    cross(a.value().data() + 3 * i, b.value().data() + 3 * i, out.data() + 3 * i, Real(1));
  const std::size_t aid = a.id(), bid = b.id();
  return tape.push(std::move(out), {aid, bid}, [aid, bid, m, cross](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad(self);
    // d/da <g, a x b> = b x g,  d/db <g, a x b> = g x a
    if (t.requires_grad(aid)) {
      Tensor<Real>& ga = t.grad_slot(aid);
      for (std::size_t i = 0; i < m; ++i)
        cross(t.value(bid).data() + 3 * i, g.data() + 3 * i, ga.data() + 3 * i, Real(1));
    }
    if (t.requires_grad(bid)) {
      Tensor<Real>& gb = t.grad_slot(bid);
      for (std::size_t i = 0; i < m; ++i)
        cross(g.data() + 3 * i, t.value(aid).data() + 3 * i, gb.data() + 3 * i, Real(1));
    }
  });
}

}  // namespace dgtr
