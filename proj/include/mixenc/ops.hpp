#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "mixenc/flops.hpp"
#include "mixenc/gemm.hpp"
#include "mixenc/math_fast.hpp"
#include "mixenc/tensor.hpp"

namespace mixenc {

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy alignment rules, trailing dims match first)
// ---------------------------------------------------------------------------

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw EngineError("shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

inline std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `operand` viewed inside `out` space (0 on broadcast dims).
inline std::vector<int64_t> broadcast_strides(const Shape& operand,
                                              const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  const auto own = contiguous_strides(operand);
  const size_t pad = out.size() - operand.size();
  for (size_t i = 0; i < operand.size(); ++i) {
    if (operand[i] == out[pad + i])
      st[pad + i] = own[i];
    else if (operand[i] != 1)
      throw EngineError("cannot broadcast " + shape_str(operand) + " to " +
                        shape_str(out));
  }
  return st;
}

// True when `operand` (ignoring leading 1-dims) is a trailing suffix of
// `out`: the element index is then just io % operand_numel.
inline bool is_suffix_broadcast(const Shape& operand, const Shape& out) {
  size_t start = 0;
  while (start < operand.size() && operand[start] == 1) ++start;
  const size_t rem = operand.size() - start;
  if (rem > out.size()) return false;
  const size_t pad = out.size() - rem;
  for (size_t i = 0; i < rem; ++i)
    if (operand[start + i] != out[pad + i]) return false;
  return true;
}

// Odometer walk over `out`, yielding (io, ia, ib) element indices.
template <class F>
inline void bcast_for_each2(const Shape& out, const std::vector<int64_t>& sa,
                            const std::vector<int64_t>& sb, F&& f) {
  const int nd = static_cast<int>(out.size());
  const int64_t total = shape_numel(out);
  if (nd == 0) {
    f(int64_t(0), int64_t(0), int64_t(0));
    return;
  }
  std::vector<int64_t> idx(nd, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < total; ++io) {
    f(io, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

enum class BinKind { Add, Sub, Mul, Div };

template <class T>
inline T bin_eval(BinKind k, T x, T y) {
  switch (k) {
    case BinKind::Add: return x + y;
    case BinKind::Sub: return x - y;
    case BinKind::Mul: return x * y;
    default: return x / y;
  }
}

template <class T>
Tensor<T> binary_op(BinKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::alloc(out_shape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data_mut();
  const int64_t n = out.numel();

  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) po[i] = bin_eval(kind, pa[i], pb[i]);
  } else if (a.shape() == out_shape && is_suffix_broadcast(b.shape(), out_shape)) {
    const int64_t nb = b.numel();
    for (int64_t blk = 0; blk < n; blk += nb)
      for (int64_t i = 0; i < nb; ++i)
        po[blk + i] = bin_eval(kind, pa[blk + i], pb[i]);
  } else if (b.shape() == out_shape && is_suffix_broadcast(a.shape(), out_shape)) {
    const int64_t na = a.numel();
    for (int64_t blk = 0; blk < n; blk += na)
      for (int64_t i = 0; i < na; ++i)
        po[blk + i] = bin_eval(kind, pa[i], pb[blk + i]);
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    bcast_for_each2(out_shape, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
      po[io] = bin_eval(kind, pa[ia], pb[ib]);
    });
  }

  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    const Shape osh = out_shape;
    node->backprop = [kind, osh](TensorNode<T>& self) {
      auto& pa_n = *self.parents[0];
      auto& pb_n = *self.parents[1];
      const T* va = pa_n.values->data();
      const T* vb = pb_n.values->data();
      const T* g = self.grad.data();
      const bool need_a = pa_n.requires_grad;
      const bool need_b = pb_n.requires_grad;
      if (need_a) pa_n.ensure_grad();
      if (need_b) pb_n.ensure_grad();
      T* ga = need_a ? pa_n.grad.data() : nullptr;
      T* gb = need_b ? pb_n.grad.data() : nullptr;
      const auto sa = broadcast_strides(pa_n.shape, osh);
      const auto sb = broadcast_strides(pb_n.shape, osh);
      bcast_for_each2(osh, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
        const T gi = g[io];
        switch (kind) {
          case BinKind::Add:
            if (need_a) ga[ia] += gi;
            if (need_b) gb[ib] += gi;
            break;
          case BinKind::Sub:
            if (need_a) ga[ia] += gi;
            if (need_b) gb[ib] -= gi;
            break;
          case BinKind::Mul:
            if (need_a) ga[ia] += gi * vb[ib];
            if (need_b) gb[ib] += gi * va[ia];
            break;
          case BinKind::Div: {
            const T inv = T(1) / vb[ib];
            if (need_a) ga[ia] += gi * inv;
            if (need_b) gb[ib] -= gi * va[ia] * inv * inv;
            break;
          }
        }
      });
    };
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::Add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::Sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::Mul, a, b);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinKind::Div, a, b);
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd make_backprop) {
  Tensor<T> out = Tensor<T>::alloc(x.shape());
  const T* px = x.data();
  T* po = out.data_mut();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = make_backprop();
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v * c; },
      [c]() {
        return [c](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          for (int64_t i = 0; i < self.numel(); ++i) p.grad[i] += c * g[i];
        };
      });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <class T>
Tensor<T> exp_(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return fm::exp_fn(v); },
      []() {
        return [](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* y = self.values->data();
          for (int64_t i = 0; i < self.numel(); ++i) p.grad[i] += g[i] * y[i];
        };
      });
}

template <class T>
Tensor<T> log_(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::log(v); },
      []() {
        return [](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* vx = p.values->data();
          for (int64_t i = 0; i < self.numel(); ++i) p.grad[i] += g[i] / vx[i];
        };
      });
}

template <class T>
Tensor<T> abs_(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      []() {
        return [](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* vx = p.values->data();
          for (int64_t i = 0; i < self.numel(); ++i)
            p.grad[i] += vx[i] >= T(0) ? g[i] : -g[i];
        };
      });
}

template <class T>
Tensor<T> sqrt_(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::sqrt(v); },
      []() {
        return [](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* y = self.values->data();
          for (int64_t i = 0; i < self.numel(); ++i)
            p.grad[i] += g[i] * T(0.5) / y[i];
        };
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return T(1) / (T(1) + fm::exp_fn(-v)); },
      []() {
        return [](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* y = self.values->data();
          for (int64_t i = 0; i < self.numel(); ++i)
            p.grad[i] += g[i] * y[i] * (T(1) - y[i]);
        };
      });
}

// gelu, tanh form (the BERT variant): 0.5x(1 + tanh(c0(x + c1 x^3)))
inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c0 = static_cast<T>(kGeluC0);
  const T c1 = static_cast<T>(kGeluC1);
  return detail::unary_op(
      x,
      [c0, c1](T v) {
        const T t = fm::tanh_fn(c0 * (v + c1 * v * v * v));
        return T(0.5) * v * (T(1) + t);
      },
      [c0, c1]() {
        return [c0, c1](TensorNode<T>& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const T* g = self.grad.data();
          const T* vx = p.values->data();
          for (int64_t i = 0; i < self.numel(); ++i) {
            const T v = vx[i];
            const T t = fm::tanh_fn(c0 * (v + c1 * v * v * v));
            const T du = c0 * (T(1) + T(3) * c1 * v * v);
            const T dy = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
            p.grad[i] += g[i] * dy;
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Movement ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  // One free dim may be -1.
  int64_t known = 1, free_at = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (free_at >= 0) throw EngineError("reshape: more than one -1 dim");
      free_at = static_cast<int64_t>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (free_at >= 0) new_shape[free_at] = x.numel() / known;
  if (shape_numel(new_shape) != x.numel())
    throw EngineError("reshape " + shape_str(x.shape()) + " -> " +
                      shape_str(new_shape) + " changes element count");
  // Shares the value buffer; no copy.
  Tensor<T> out = Tensor<T>::from_shared(new_shape, x.node()->values);
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = [](TensorNode<T>& self) {
      accumulate_grad(*self.parents[0], self.grad.data(), self.numel());
    };
  }
  return out;
}

namespace detail {

template <class T>
std::vector<T> permute_raw(const T* src, const Shape& in_shape,
                           const std::vector<int>& axes, Shape& out_shape) {
  const int nd = static_cast<int>(in_shape.size());
  out_shape.assign(nd, 0);
  const auto in_strides = contiguous_strides(in_shape);
  std::vector<int64_t> strides(nd);
  for (int i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const int64_t total = shape_numel(in_shape);
  std::vector<T> out(total);
  // When the last axis stays put the innermost run is contiguous and can
  // move as one block per outer index.
  if (axes[nd - 1] == nd - 1 && nd >= 2) {
    const int64_t run = in_shape[nd - 1];
    const int64_t rows = total / run;
    std::vector<int64_t> idx(nd - 1, 0);
    int64_t is = 0;
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(out.data() + r * run, src + is, sizeof(T) * run);
      for (int d = nd - 2; d >= 0; --d) {
        ++idx[d];
        is += strides[d];
        if (idx[d] < out_shape[d]) break;
        is -= strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
    return out;
  }
  std::vector<int64_t> idx(nd, 0);
  int64_t is = 0;
  for (int64_t io = 0; io < total; ++io) {
    out[io] = src[is];
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      is += strides[d];
      if (idx[d] < out_shape[d]) break;
      is -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int nd = static_cast<int>(x.dim());
  if (static_cast<int>(axes.size()) != nd)
    throw EngineError("permute: axes rank mismatch");
  std::vector<bool> seen(nd, false);
  for (int a : axes) {
    if (a < 0 || a >= nd || seen[a]) throw EngineError("permute: bad axes");
    seen[a] = true;
  }
  Shape out_shape;
  std::vector<T> vals = detail::permute_raw(x.data(), x.shape(), axes, out_shape);
  Tensor<T> out = Tensor<T>::from_data(out_shape, std::move(vals));
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    std::vector<int> inv(axes.size());
    for (int i = 0; i < nd; ++i) inv[axes[i]] = i;
    const Shape out_sh = out_shape;
    node->backprop = [inv, out_sh](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      Shape back_shape;
      std::vector<T> g =
          detail::permute_raw(self.grad.data(), out_sh, inv, back_shape);
      accumulate_grad(p, g.data(), static_cast<int64_t>(g.size()));
    };
  }
  return out;
}

// Swap the last two axes.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<int> axes(x.dim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  axis = x.normalize_axis(axis);
  const Shape& in = x.shape();
  if (start < 0 || len < 0 || start + len > in[axis])
    throw EngineError("slice out of range on axis " + std::to_string(axis));
  Shape out_shape = in;
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= in[i];
  for (size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Tensor<T> out = Tensor<T>::alloc(out_shape);
  const T* px = x.data();
  T* po = out.data_mut();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner, px + (o * in[axis] + start) * inner,
                sizeof(T) * len * inner);
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    const int64_t ax_len = in[axis];
    node->backprop = [outer, inner, ax_len, start, len](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* g = self.grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        T* dst = p.grad.data() + (o * ax_len + start) * inner;
        const T* src = g + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw EngineError("concat of zero tensors");
  axis = xs[0].normalize_axis(axis);
  const Shape& ref = xs[0].shape();
  int64_t total_axis = 0;
  for (const auto& t : xs) {
    if (t.dim() != xs[0].dim())
      throw EngineError("concat: rank mismatch");
    for (int i = 0; i < t.dim(); ++i)
      if (i != axis && t.shape()[i] != ref[i])
        throw EngineError("concat: shape mismatch off-axis");
    total_axis += t.shape()[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total_axis;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= ref[i];
  for (size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Tensor<T> out = Tensor<T>::alloc(out_shape);
  T* po = out.data_mut();
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t alen = t.shape()[axis];
    const T* src = t.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + (o * total_axis + off) * inner,
                  src + o * alen * inner, sizeof(T) * alen * inner);
    off += alen;
  }
  bool any_grad = false;
  for (const auto& t : xs) any_grad |= t.requires_grad();
  if (grad_enabled() && any_grad) {
    auto node = out.node();
    node->requires_grad = true;
    std::vector<int64_t> axis_lens;
    for (const auto& t : xs) {
      node->parents.push_back(t.node());
      axis_lens.push_back(t.shape()[axis]);
    }
    node->backprop = [outer, inner, total_axis, axis_lens](TensorNode<T>& self) {
      const T* g = self.grad.data();
      int64_t off2 = 0;
      for (size_t pi = 0; pi < self.parents.size(); ++pi) {
        auto& p = *self.parents[pi];
        const int64_t alen = axis_lens[pi];
        if (p.requires_grad) {
          p.ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            T* dst = p.grad.data() + o * alen * inner;
            const T* src = g + (o * total_axis + off2) * inner;
            for (int64_t i = 0; i < alen * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += alen;
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(std::initializer_list<Tensor<T>> xs, int axis) {
  return concat(std::vector<Tensor<T>>(xs), axis);
}

template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  Tensor<T> out = Tensor<T>::alloc(target);
  const T* px = x.data();
  T* po = out.data_mut();
  const int64_t n = out.numel();
  if (is_suffix_broadcast(x.shape(), target)) {
    const int64_t nx = x.numel();
    for (int64_t blk = 0; blk < n; blk += nx)
      std::memcpy(po + blk, px, sizeof(T) * nx);
  } else {
    const auto sx = broadcast_strides(x.shape(), target);
    const auto zero = std::vector<int64_t>(target.size(), 0);
    bcast_for_each2(target, sx, zero,
                    [&](int64_t io, int64_t ix, int64_t) { po[io] = px[ix]; });
  }
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    const Shape tgt = target;
    node->backprop = [tgt](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* g = self.grad.data();
      if (is_suffix_broadcast(p.shape, tgt)) {
        const int64_t nx = p.numel();
        for (int64_t blk = 0; blk < self.numel(); blk += nx)
          for (int64_t i = 0; i < nx; ++i) p.grad[i] += g[blk + i];
      } else {
        const auto sx = broadcast_strides(p.shape, tgt);
        const auto zero = std::vector<int64_t>(tgt.size(), 0);
        bcast_for_each2(tgt, sx, zero, [&](int64_t io, int64_t ix, int64_t) {
          p.grad[ix] += g[io];
        });
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& x, int axis, bool keepdim = false) {
  axis = x.normalize_axis(axis);
  const Shape& in = x.shape();
  int64_t outer = 1, inner = 1;
  const int64_t alen = in[axis];
  for (int i = 0; i < axis; ++i) outer *= in[i];
  for (size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(in.size()); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(in[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out = Tensor<T>::alloc(out_shape);
  const T* px = x.data();
  T* po = out.data_mut();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < alen; ++a) {
      const T* src = px + (o * alen + a) * inner;
      T* dst = po + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = [outer, inner, alen](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* g = self.grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < alen; ++a) {
          T* dst = p.grad.data() + (o * alen + a) * inner;
          const T* src = g + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    };
  }
  return out;
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x, int axis, bool keepdim = false) {
  const int64_t alen = x.shape()[x.normalize_axis(axis)];
  return scale(reduce_sum(x, axis, keepdim), T(1) / static_cast<T>(alen));
}

template <class T>
Tensor<T> reduce_max(const Tensor<T>& x, int axis, bool keepdim = false) {
  axis = x.normalize_axis(axis);
  const Shape& in = x.shape();
  int64_t outer = 1, inner = 1;
  const int64_t alen = in[axis];
  for (int i = 0; i < axis; ++i) outer *= in[i];
  for (size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(in.size()); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(in[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out = Tensor<T>::alloc(out_shape);
  const T* px = x.data();
  T* po = out.data_mut();
  auto argmax = std::make_shared<std::vector<int64_t>>(outer * inner, 0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T best = px[(o * alen) * inner + i];
      int64_t best_a = 0;
      for (int64_t a = 1; a < alen; ++a) {
        const T v = px[(o * alen + a) * inner + i];
        if (v > best) {
          best = v;
          best_a = a;
        }
      }
      po[o * inner + i] = best;
      (*argmax)[o * inner + i] = best_a;
    }
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = [outer, inner, alen, argmax](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* g = self.grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t a = (*argmax)[o * inner + i];
          p.grad[(o * alen + a) * inner + i] += g[o * inner + i];
        }
    };
  }
  return out;
}

template <class T>
Tensor<T> reduce_sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::alloc({1});
  const T* px = x.data();
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.data_mut()[0] = acc;
  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T g = self.grad[0];
      for (auto& v : p.grad) v += g;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul (batched, leading dims broadcast; b may be transposed on last two)
// ---------------------------------------------------------------------------

namespace detail {

struct MatmulPlan {
  Shape out_shape;
  int64_t m = 0, p = 0, n = 0, batch = 1;
  std::vector<int64_t> a_off, b_off;  // element offsets per batch slice
};

inline MatmulPlan plan_matmul(const Shape& a, const Shape& b, bool b_t) {
  if (a.size() < 2 || b.size() < 2)
    throw EngineError("matmul requires rank >= 2 operands");
  MatmulPlan pl;
  pl.m = a[a.size() - 2];
  pl.p = a[a.size() - 1];
  const int64_t b_rows = b[b.size() - 2];
  const int64_t b_cols = b[b.size() - 1];
  if (!b_t) {
    if (b_rows != pl.p)
      throw EngineError("matmul inner dims mismatch: " + shape_str(a) + " x " +
                        shape_str(b));
    pl.n = b_cols;
  } else {
    if (b_cols != pl.p)
      throw EngineError("matmul inner dims mismatch: " + shape_str(a) +
                        " x T" + shape_str(b));
    pl.n = b_rows;
  }
  const Shape a_lead(a.begin(), a.end() - 2);
  const Shape b_lead(b.begin(), b.end() - 2);
  const Shape lead = broadcast_shapes(a_lead, b_lead);
  pl.batch = shape_numel(lead);
  pl.out_shape = lead;
  pl.out_shape.push_back(pl.m);
  pl.out_shape.push_back(pl.n);
  pl.a_off.resize(pl.batch);
  pl.b_off.resize(pl.batch);
  const auto sa = broadcast_strides(a_lead, lead);
  const auto sb = broadcast_strides(b_lead, lead);
  const int64_t a_slice = pl.m * pl.p;
  const int64_t b_slice = b_rows * b_cols;
  int64_t bi = 0;
  bcast_for_each2(lead, sa, sb, [&](int64_t, int64_t ia, int64_t ib) {
    pl.a_off[bi] = ia * a_slice;
    pl.b_off[bi] = ib * b_slice;
    ++bi;
  });
  // A batch of contiguous A-slices against one shared B is a single taller
  // gemm; per-row results are bit-identical either way.
  if (pl.batch > 1) {
    bool collapsible = true;
    for (int64_t s = 0; s < pl.batch && collapsible; ++s)
      collapsible = pl.a_off[s] == s * a_slice && pl.b_off[s] == pl.b_off[0];
    if (collapsible) {
      pl.m *= pl.batch;
      pl.batch = 1;
      pl.a_off = {0};
      pl.b_off = {pl.b_off[0]};
    }
  }
  return pl;
}

}  // namespace detail

template <class T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool b_t) {
  const detail::MatmulPlan pl = detail::plan_matmul(a.shape(), b.shape(), b_t);
  Tensor<T> out = Tensor<T>::alloc(pl.out_shape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data_mut();
  const int64_t m = pl.m, p = pl.p, n = pl.n;
  const int64_t c_slice = m * n;
  flops_add_matmul(static_cast<uint64_t>(2) * m * n * p * pl.batch);
  // Runs of consecutive slices that share B over contiguous A rows fold
  // into one taller gemm; per-row results are identical either way.
  {
    int64_t s = 0;
    while (s < pl.batch) {
      int64_t e = s + 1;
      while (e < pl.batch && pl.b_off[e] == pl.b_off[s] &&
             pl.a_off[e] == pl.a_off[s] + (e - s) * m * p)
        ++e;
      const int64_t rows = (e - s) * m;
      if (!b_t)
        gemm_nn(pa + pl.a_off[s], pb + pl.b_off[s], po + s * c_slice, rows, p,
                n, false, true);
      else
        gemm_nt(pa + pl.a_off[s], pb + pl.b_off[s], po + s * c_slice, rows, p,
                n, false, true);
      s = e;
    }
  }
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    node->backprop = [pl, b_t](TensorNode<T>& self) {
      auto& pa_n = *self.parents[0];
      auto& pb_n = *self.parents[1];
      const T* va = pa_n.values->data();
      const T* vb = pb_n.values->data();
      const T* g = self.grad.data();
      const int64_t m = pl.m, p = pl.p, n = pl.n;
      const int64_t c_slice = m * n;
      if (pa_n.requires_grad) pa_n.ensure_grad();
      if (pb_n.requires_grad) pb_n.ensure_grad();
      flops_add_matmul(static_cast<uint64_t>(4) * m * n * p * pl.batch);
      int64_t s = 0;
      while (s < pl.batch) {
        int64_t e = s + 1;
        while (e < pl.batch && pl.b_off[e] == pl.b_off[s] &&
               pl.a_off[e] == pl.a_off[s] + (e - s) * m * p)
          ++e;
        const int64_t rows = (e - s) * m;
        const T* gs = g + s * c_slice;
        if (pa_n.requires_grad) {
          T* ga = pa_n.grad.data() + pl.a_off[s];
          if (!b_t)  // dA += G * B^T
            gemm_nt(gs, vb + pl.b_off[s], ga, rows, n, p, true, false);
          else  // dA += G * B
            gemm_nn(gs, vb + pl.b_off[s], ga, rows, n, p, true, false);
        }
        if (pb_n.requires_grad) {
          T* gb = pb_n.grad.data() + pl.b_off[s];
          if (!b_t)  // dB += A^T * G
            gemm_tn(va + pl.a_off[s], gs, gb, p, rows, n, true, false);
          else  // dB += G^T * A
            gemm_tn(gs, va + pl.a_off[s], gb, n, rows, p, true, false);
        }
        s = e;
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, false);
}

// a @ b^T over the last two dims.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, true);
}

// ---------------------------------------------------------------------------
// Softmax over the last axis, optional {0,1} mask broadcastable to x
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Tensor<T>* mask = nullptr) {
  const Shape& in = x.shape();
  if (in.empty()) throw EngineError("softmax on rank-0 tensor");
  const int64_t n = in.back();
  const int64_t rows = x.numel() / n;
  Tensor<T> out = Tensor<T>::alloc(in);
  const T* px = x.data();
  T* po = out.data_mut();

  // Per-row mask offsets (0-stride broadcast over leading dims).
  std::vector<int64_t> mask_row_off;
  int64_t mask_last_stride = 0;
  const T* pm = nullptr;
  if (mask) {
    pm = mask->data();
    const auto sm = broadcast_strides(mask->shape(), in);
    mask_last_stride = sm.back();
    const Shape lead(in.begin(), in.end() - 1);
    std::vector<int64_t> sm_lead(sm.begin(), sm.end() - 1);
    mask_row_off.resize(rows);
    int64_t r = 0;
    const std::vector<int64_t> zero(lead.size(), 0);
    if (lead.empty()) {
      mask_row_off[0] = 0;
    } else {
      bcast_for_each2(lead, sm_lead, zero,
                      [&](int64_t, int64_t im, int64_t) { mask_row_off[r++] = im; });
    }
  }

  const T neg_big = -std::numeric_limits<T>::infinity();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    T* yr = po + r * n;
    if (!pm) {
      T mx = xr[0];
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
      for (int64_t j = 0; j < n; ++j) yr[j] = fm::exp_fn(xr[j] - mx);
      T sum = T(0);
      for (int64_t j = 0; j < n; ++j) sum += yr[j];
      const T inv = T(1) / sum;
      for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
      continue;
    }
    const T* mr = pm + mask_row_off[r];
    T mx = neg_big;
    T alive = T(0);
    if (mask_last_stride == 1) {
      for (int64_t j = 0; j < n; ++j) {
        mx = std::max(mx, mr[j] != T(0) ? xr[j] : neg_big);
        alive += mr[j];
      }
    } else {
      for (int64_t j = 0; j < n; ++j) {
        const T mv = mr[j * mask_last_stride];
        mx = std::max(mx, mv != T(0) ? xr[j] : neg_big);
        alive += mv;
      }
    }
    if (alive == T(0)) throw EngineError("softmax row is fully masked");
    // Masked entries multiply to an exact zero; exp saturates safely.
    if (mask_last_stride == 1) {
      for (int64_t j = 0; j < n; ++j)
        yr[j] = fm::exp_fn(xr[j] - mx) * mr[j];
    } else {
      for (int64_t j = 0; j < n; ++j)
        yr[j] = fm::exp_fn(xr[j] - mx) * mr[j * mask_last_stride];
    }
    T sum = T(0);
    for (int64_t j = 0; j < n; ++j) sum += yr[j];
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
  }

  if (grad_enabled() && x.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node()};
    node->backprop = [rows, n](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* y = self.values->data();
      const T* g = self.grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * n;
        const T* gr = g + r * n;
        T dot = T(0);
        for (int64_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        T* dst = p.grad.data() + r * n;
        for (int64_t j = 0; j < n; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis (eps inside the sqrt)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  const Shape& in = x.shape();
  const int64_t n = in.back();
  if (gamma.numel() != n || beta.numel() != n)
    throw EngineError("layer_norm: gamma/beta must have last-dim length");
  const int64_t rows = x.numel() / n;
  Tensor<T> out = Tensor<T>::alloc(in);
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data_mut();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    T mu = T(0);
    for (int64_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (int64_t j = 0; j < n; ++j) {
      const T d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    T* hr = xhat->data() + r * n;
    T* yr = po + r * n;
    for (int64_t j = 0; j < n; ++j) {
      hr[j] = (xr[j] - mu) * istd;
      yr[j] = hr[j] * pg[j] + pb[j];
    }
  }
  if (grad_enabled() &&
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {x.node(), gamma.node(), beta.node()};
    node->backprop = [rows, n, xhat, inv_std](TensorNode<T>& self) {
      auto& px_n = *self.parents[0];
      auto& pg_n = *self.parents[1];
      auto& pb_n = *self.parents[2];
      const T* g = self.grad.data();
      const T* vg = pg_n.values->data();
      if (px_n.requires_grad) px_n.ensure_grad();
      if (pg_n.requires_grad) pg_n.ensure_grad();
      if (pb_n.requires_grad) pb_n.ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * n;
        const T* hr = xhat->data() + r * n;
        if (pg_n.requires_grad)
          for (int64_t j = 0; j < n; ++j) pg_n.grad[j] += gr[j] * hr[j];
        if (pb_n.requires_grad)
          for (int64_t j = 0; j < n; ++j) pb_n.grad[j] += gr[j];
        if (px_n.requires_grad) {
          T s1 = T(0), s2 = T(0);
          for (int64_t j = 0; j < n; ++j) {
            const T dxh = gr[j] * vg[j];
            s1 += dxh;
            s2 += dxh * hr[j];
          }
          const T istd = (*inv_std)[r];
          T* dst = px_n.grad.data() + r * n;
          const T invn = T(1) / static_cast<T>(n);
          for (int64_t j = 0; j < n; ++j) {
            const T dxh = gr[j] * vg[j];
            dst[j] += istd * (dxh - s1 * invn - hr[j] * s2 * invn);
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding row gather
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding_rows(const Tensor<T>& table,
                         const std::vector<int64_t>& ids) {
  if (table.dim() != 2) throw EngineError("embedding table must be 2-D");
  const int64_t v = table.shape()[0];
  const int64_t d = table.shape()[1];
  for (int64_t id : ids)
    if (id < 0 || id >= v)
      throw EngineError("token id " + std::to_string(id) +
                        " out of vocabulary range " + std::to_string(v));
  Tensor<T> out = Tensor<T>::alloc({static_cast<int64_t>(ids.size()), d});
  const T* pt = table.data();
  T* po = out.data_mut();
  for (size_t r = 0; r < ids.size(); ++r)
    std::memcpy(po + r * d, pt + ids[r] * d, sizeof(T) * d);
  if (grad_enabled() && table.requires_grad()) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {table.node()};
    const std::vector<int64_t> ids_copy = ids;
    node->backprop = [ids_copy, d](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T* g = self.grad.data();
      for (size_t r = 0; r < ids_copy.size(); ++r) {
        T* dst = p.grad.data() + ids_copy[r] * d;
        const T* src = g + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

// x[* x p] @ W[p x n] + b[n]; empty bias tensor skips the add.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  if (b.defined() && b.numel() > 0) y = add(y, b);
  return y;
}

// [* x tokens x d] -> [* x heads x tokens x d/heads]
template <class T>
Tensor<T> split_heads(const Tensor<T>& t, int heads) {
  const int64_t d = t.shape().back();
  if (heads < 1 || d % heads != 0)
    throw EngineError("attention: embedding dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  Shape s = t.shape();
  s.back() = heads;
  s.push_back(d / heads);
  Tensor<T> r = reshape(t, s);
  std::vector<int> axes(r.dim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  std::swap(axes[axes.size() - 3], axes[axes.size() - 2]);
  return permute(r, axes);
}

// [* x heads x tokens x dh] -> [* x tokens x heads*dh]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& t) {
  std::vector<int> axes(t.dim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  std::swap(axes[axes.size() - 3], axes[axes.size() - 2]);
  Tensor<T> merged = permute(t, axes);
  Shape out_shape = merged.shape();
  const int64_t dh = out_shape.back();
  out_shape.pop_back();
  out_shape.back() *= dh;
  return reshape(merged, out_shape);
}

// Multi-head attention: softmax(QK^T / sqrt(dh)) V per head, heads merged,
// then projected by wo (+ optional bo). Q [* x a x d], K/V [* x b x d],
// key_mask broadcastable over [* x b].
template <class T>
Tensor<T> multihead_attention(const Tensor<T>& q, const Tensor<T>& k,
                              const Tensor<T>& v, int heads,
                              const Tensor<T>& wo, const Tensor<T>& bo,
                              const Tensor<T>* key_mask = nullptr) {
  const int64_t d = q.shape().back();
  if (k.shape().back() != d || v.shape().back() != d)
    throw EngineError("attention: Q/K/V embedding dims differ");
  const int64_t dh = d / (heads < 1 ? 1 : heads);

  Tensor<T> qh = split_heads(q, heads);
  Tensor<T> kh = split_heads(k, heads);
  Tensor<T> vh = split_heads(v, heads);

  Tensor<T> scores = scale(matmul_nt(qh, kh),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor<T> weights;
  if (key_mask) {
    // [* x b] -> [* x 1 x 1 x b] so it broadcasts over heads and queries
    Shape ms = key_mask->shape();
    ms.insert(ms.end() - 1, 1);
    ms.insert(ms.end() - 1, 1);
    Tensor<T> m = reshape(*key_mask, ms);
    weights = softmax_lastdim(scores, &m);
  } else {
    weights = softmax_lastdim(scores);
  }
  Tensor<T> ctx = matmul(weights, vh);  // [* x heads x a x dh]
  return linear(merge_heads(ctx), wo, bo);
}

// linear -> gelu -> linear
template <class T>
Tensor<T> ffn(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
              const Tensor<T>& w2, const Tensor<T>& b2) {
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

}  // namespace mixenc
