#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "afa/graph.hpp"
#include "afa/tensor.hpp"

namespace afa {

namespace detail {

inline const char* axis_name(int a) {
  static const char* names[4] = {"N", "C", "H", "W"};
  return names[a];
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out;
  for (int i = 0; i < 4; ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = std::max(a[i], b[i]);
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast axis " + axis_name(i) + ": " +
                       to_string(a) + " vs " + to_string(b));
    }
  }
  return out;
}

// Strides with zeros on broadcast (size-1) axes.
inline std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  std::array<std::size_t, 4> st;
  std::size_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (s[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(s[i]);
  }
  return st;
}

/// Sums `g` over the axes that are broadcast relative to `target`.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape == target) return g;
  Tensor<T> out(target[0], target[1], target[2], target[3], T(0));
  const auto st = broadcast_strides(target, g.shape);
  std::size_t i = 0;
  for (int n = 0; n < g.shape[0]; ++n)
    for (int c = 0; c < g.shape[1]; ++c)
      for (int h = 0; h < g.shape[2]; ++h)
        for (int w = 0; w < g.shape[3]; ++w, ++i) {
          out.data[n * st[0] + c * st[1] + h * st[2] + w * st[3]] += g.data[i];
        }
  return out;
}

template <typename T, typename Fwd>
Tensor<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd) {
  const Shape os = broadcast_shape(a.shape, b.shape, op);
  Tensor<T> out(os[0], os[1], os[2], os[3]);
  if (a.shape == b.shape) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(a.data[i], b.data[i]);
  } else {
    const auto sa = broadcast_strides(a.shape, os);
    const auto sb = broadcast_strides(b.shape, os);
    std::size_t i = 0;
    for (int n = 0; n < os[0]; ++n)
      for (int c = 0; c < os[1]; ++c)
        for (int h = 0; h < os[2]; ++h)
          for (int w = 0; w < os[3]; ++w, ++i) {
            out.data[i] = fwd(a.data[n * sa[0] + c * sa[1] + h * sa[2] + w * sa[3]],
                              b.data[n * sb[0] + c * sb[1] + h * sb[2] + w * sb[3]]);
          }
  }
  out.requires_grad = a.requires_grad || b.requires_grad;
  return out;
}

}  // namespace detail

/// Elementwise sum with unit-dimension broadcasting.
template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_forward(a, b, "add", [](T x, T y) { return x + y; });
  const auto aid = a.id, bid = b.id;
  const Shape as = a.shape, bs = b.shape;
  const bool ga = a.requires_grad, gb = b.requires_grad;
  g.record("add", {&a, &b}, out, [=](const Tensor<T>& go, GradMap<T>& grads) {
    if (ga) grads.add(aid, detail::reduce_to_shape(go, as));
    if (gb) grads.add(bid, detail::reduce_to_shape(go, bs));
  });
  return out;
}

/// Elementwise difference with broadcasting.
template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_forward(a, b, "sub", [](T x, T y) { return x - y; });
  const auto aid = a.id, bid = b.id;
  const Shape as = a.shape, bs = b.shape;
  const bool ga = a.requires_grad, gb = b.requires_grad;
  g.record("sub", {&a, &b}, out, [=](const Tensor<T>& go, GradMap<T>& grads) {
    if (ga) grads.add(aid, detail::reduce_to_shape(go, as));
    if (gb) {
      Tensor<T> neg = go;
      for (auto& v : neg.data) v = -v;
      grads.add(bid, detail::reduce_to_shape(neg, bs));
    }
  });
  return out;
}

/// Elementwise product with broadcasting.
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_forward(a, b, "mul", [](T x, T y) { return x * y; });
  const bool ga = a.requires_grad, gb = b.requires_grad;
  if (g.recording() && (ga || gb)) {
    const auto aid = a.id, bid = b.id;
    Tensor<T> av = a, bv = b;
    const Shape os = out.shape;
    g.record("mul", {&a, &b}, out,
             [aid, bid, ga, gb, av = std::move(av), bv = std::move(bv),
              os](const Tensor<T>& go, GradMap<T>& grads) {
               const auto sa = detail::broadcast_strides(av.shape, os);
               const auto sb = detail::broadcast_strides(bv.shape, os);
               Tensor<T> da(av.shape[0], av.shape[1], av.shape[2], av.shape[3], T(0));
               Tensor<T> db(bv.shape[0], bv.shape[1], bv.shape[2], bv.shape[3], T(0));
               std::size_t i = 0;
               for (int n = 0; n < os[0]; ++n)
                 for (int c = 0; c < os[1]; ++c)
                   for (int h = 0; h < os[2]; ++h)
                     for (int w = 0; w < os[3]; ++w, ++i) {
                       const std::size_t ia = n * sa[0] + c * sa[1] + h * sa[2] + w * sa[3];
                       const std::size_t ib = n * sb[0] + c * sb[1] + h * sb[2] + w * sb[3];
                       const T gv = go.data[i];
                       if (ga) da.data[ia] += gv * bv.data[ib];
                       if (gb) db.data[ib] += gv * av.data[ia];
                     }
               if (ga) grads.add(aid, std::move(da));
               if (gb) grads.add(bid, std::move(db));
             });
  }
  return out;
}

/// y = scale * x + shift.
template <typename T>
Tensor<T> affine(Graph<T>& g, const Tensor<T>& x, double scale, double shift) {
  Tensor<T> out = x;
  out.id = detail::next_tensor_id();
  for (auto& v : out.data) v = static_cast<T>(scale) * v + static_cast<T>(shift);
  out.requires_grad = x.requires_grad;
  const auto xid = x.id;
  g.record("affine", {&x}, out, [xid, scale](const Tensor<T>& go, GradMap<T>& grads) {
    Tensor<T> dx = go;
    for (auto& v : dx.data) v *= static_cast<T>(scale);
    grads.add(xid, std::move(dx));
  });
  return out;
}

template <typename T>
Tensor<T> scalar_mul(Graph<T>& g, const Tensor<T>& x, double scale) {
  return affine(g, x, scale, 0.0);
}

/// 1 - x, the complement gate used throughout the fusion formulas.
template <typename T>
Tensor<T> one_minus(Graph<T>& g, const Tensor<T>& x) {
  return affine(g, x, -1.0, 1.0);
}

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_from_output(Graph<T>& g, const Tensor<T>& x, const char* op, Fwd fwd, Bwd dydx) {
  Tensor<T> out = x;
  out.id = next_tensor_id();
  for (auto& v : out.data) v = fwd(v);
  out.requires_grad = x.requires_grad;
  if (g.recording() && x.requires_grad) {
    const auto xid = x.id;
    Tensor<T> saved = out;  // derivative expressed in terms of the output
    g.record(op, {&x}, out, [xid, saved = std::move(saved), dydx](const Tensor<T>& go, GradMap<T>& grads) {
      Tensor<T> dx = go;
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= dydx(saved.data[i]);
      grads.add(xid, std::move(dx));
    });
  }
  return out;
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_from_input(Graph<T>& g, const Tensor<T>& x, const char* op, Fwd fwd, Bwd dydx) {
  Tensor<T> out = x;
  out.id = next_tensor_id();
  for (auto& v : out.data) v = fwd(v);
  out.requires_grad = x.requires_grad;
  if (g.recording() && x.requires_grad) {
    const auto xid = x.id;
    Tensor<T> saved = x;
    g.record(op, {&x}, out, [xid, saved = std::move(saved), dydx](const Tensor<T>& go, GradMap<T>& grads) {
      Tensor<T> dx = go;
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= dydx(saved.data[i]);
      grads.add(xid, std::move(dx));
    });
  }
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
  // max(x,0) + log1p(e^{-|x|}), safe against overflow
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  return detail::unary_from_output(
      g, x, "sigmoid", [](T v) { return detail::sigmoid_scalar(v); },
      [](T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  return detail::unary_from_input(
      g, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(Graph<T>& g, const Tensor<T>& x) {
  return detail::unary_from_input(
      g, x, "softplus", [](T v) { return detail::softplus_scalar(v); },
      [](T v) { return detail::sigmoid_scalar(v); });
}

/// |x|; the derivative at 0 is fixed to 0 (subgradient midpoint).
template <typename T>
Tensor<T> abs(Graph<T>& g, const Tensor<T>& x) {
  return detail::unary_from_input(
      g, x, "abs", [](T v) { return std::abs(v); },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// e^{-x}, the transmittance kernel.
template <typename T>
Tensor<T> exp_neg(Graph<T>& g, const Tensor<T>& x) {
  return detail::unary_from_output(
      g, x, "exp_neg", [](T v) { return std::exp(-v); }, [](T y) { return -y; });
}

/// Full reduction to a (1,1,1,1) scalar.
template <typename T>
Tensor<T> reduce_sum(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out(1, 1, 1, 1);
  T acc = T(0);
  for (const T v : x.data) acc += v;
  out.data[0] = acc;
  out.requires_grad = x.requires_grad;
  const auto xid = x.id;
  const Shape xs = x.shape;
  g.record("reduce_sum", {&x}, out, [xid, xs](const Tensor<T>& go, GradMap<T>& grads) {
    grads.add(xid, Tensor<T>(xs[0], xs[1], xs[2], xs[3], go.data[0]));
  });
  return out;
}

/// Mean over H*W per (n, c); output (N, C, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(Graph<T>& g, const Tensor<T>& x) {
  if (x.h() < 1 || x.w() < 1) {
    throw ShapeError("global_avg_pool: empty spatial extent " + to_string(x.shape));
  }
  const int hw = x.h() * x.w();
  Tensor<T> out(x.n(), x.c(), 1, 1);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      T acc = T(0);
      for (int h = 0; h < x.h(); ++h)
        for (int w = 0; w < x.w(); ++w) acc += x.at(n, c, h, w);
      out.at(n, c, 0, 0) = acc / static_cast<T>(hw);
    }
  out.requires_grad = x.requires_grad;
  const auto xid = x.id;
  const Shape xs = x.shape;
  g.record("global_avg_pool", {&x}, out, [xid, xs, hw](const Tensor<T>& go, GradMap<T>& grads) {
    Tensor<T> dx(xs[0], xs[1], xs[2], xs[3]);
    for (int n = 0; n < xs[0]; ++n)
      for (int c = 0; c < xs[1]; ++c) {
        const T v = go.at(n, c, 0, 0) / static_cast<T>(hw);
        for (int h = 0; h < xs[2]; ++h)
          for (int w = 0; w < xs[3]; ++w) dx.at(n, c, h, w) = v;
      }
    grads.add(xid, std::move(dx));
  });
  return out;
}

/// Max over H*W per (n, c); backward routes the gradient to the first argmax
/// in row-major scan order.
template <typename T>
Tensor<T> global_max_pool(Graph<T>& g, const Tensor<T>& x) {
  if (x.h() < 1 || x.w() < 1) {
    throw ShapeError("global_max_pool: empty spatial extent " + to_string(x.shape));
  }
  Tensor<T> out(x.n(), x.c(), 1, 1);
  std::vector<int> argmax(static_cast<std::size_t>(x.n()) * x.c());
  const int hw = x.h() * x.w();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* base = x.data.data() + (static_cast<std::size_t>(n) * x.c() + c) * hw;
      int best = 0;
      for (int i = 1; i < hw; ++i)
        if (base[i] > base[best]) best = i;
      out.at(n, c, 0, 0) = base[best];
      argmax[static_cast<std::size_t>(n) * x.c() + c] = best;
    }
  out.requires_grad = x.requires_grad;
  const auto xid = x.id;
  const Shape xs = x.shape;
  g.record("global_max_pool", {&x}, out,
           [xid, xs, hw, argmax = std::move(argmax)](const Tensor<T>& go, GradMap<T>& grads) {
             Tensor<T> dx(xs[0], xs[1], xs[2], xs[3], T(0));
             for (int n = 0; n < xs[0]; ++n)
               for (int c = 0; c < xs[1]; ++c) {
                 const std::size_t flat = static_cast<std::size_t>(n) * xs[1] + c;
                 dx.data[flat * hw + argmax[flat]] = go.at(n, c, 0, 0);
               }
             grads.add(xid, std::move(dx));
           });
  return out;
}

/// Differentiable bilinear interpolation; half-pixel centers unless
/// align_corners is set.
template <typename T>
Tensor<T> bilinear_resize(Graph<T>& g, const Tensor<T>& x, int out_h, int out_w,
                          bool align_corners = false) {
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: output dims must be >= 1, got (" + std::to_string(out_h) +
                     "," + std::to_string(out_w) + ")");
  }
  if (x.h() < 1 || x.w() < 1) {
    throw ShapeError("bilinear_resize: empty input " + to_string(x.shape));
  }
  const int ih = x.h(), iw = x.w();
  // Precompute per-axis source indices and weights.
  struct Tap {
    int lo, hi;
    T w_hi;
  };
  auto make_taps = [&](int in, int out) {
    std::vector<Tap> taps(out);
    for (int o = 0; o < out; ++o) {
      double src;
      if (align_corners) {
        src = out > 1 ? static_cast<double>(o) * (in - 1) / (out - 1) : 0.0;
      } else {
        src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
        if (src < 0.0) src = 0.0;
      }
      int lo = static_cast<int>(src);
      if (lo > in - 1) lo = in - 1;
      const int hi = std::min(lo + 1, in - 1);
      taps[o] = {lo, hi, static_cast<T>(src - lo)};
    }
    return taps;
  };
  const auto th = make_taps(ih, out_h);
  const auto tw = make_taps(iw, out_w);

  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oh = 0; oh < out_h; ++oh) {
        const Tap& a = th[oh];
        for (int ow = 0; ow < out_w; ++ow) {
          const Tap& b = tw[ow];
          const T v00 = x.at(n, c, a.lo, b.lo), v01 = x.at(n, c, a.lo, b.hi);
          const T v10 = x.at(n, c, a.hi, b.lo), v11 = x.at(n, c, a.hi, b.hi);
          const T top = v00 + (v01 - v00) * b.w_hi;
          const T bot = v10 + (v11 - v10) * b.w_hi;
          out.at(n, c, oh, ow) = top + (bot - top) * a.w_hi;
        }
      }
  out.requires_grad = x.requires_grad;
  if (g.recording() && x.requires_grad) {
    const auto xid = x.id;
    const Shape xs = x.shape;
    g.record("bilinear_resize", {&x}, out,
             [xid, xs, th, tw](const Tensor<T>& go, GradMap<T>& grads) {
               Tensor<T> dx(xs[0], xs[1], xs[2], xs[3], T(0));
               const int oh_n = static_cast<int>(th.size()), ow_n = static_cast<int>(tw.size());
               for (int n = 0; n < xs[0]; ++n)
                 for (int c = 0; c < xs[1]; ++c)
                   for (int oh = 0; oh < oh_n; ++oh) {
                     const Tap& a = th[oh];
                     for (int ow = 0; ow < ow_n; ++ow) {
                       const Tap& b = tw[ow];
                       const T gv = go.at(n, c, oh, ow);
                       const T wh = a.w_hi, ww = b.w_hi;
                       dx.at(n, c, a.lo, b.lo) += gv * (T(1) - wh) * (T(1) - ww);
                       dx.at(n, c, a.lo, b.hi) += gv * (T(1) - wh) * ww;
                       dx.at(n, c, a.hi, b.lo) += gv * wh * (T(1) - ww);
                       dx.at(n, c, a.hi, b.hi) += gv * wh * ww;
                     }
                   }
               grads.add(xid, std::move(dx));
             });
  }
  return out;
}

/// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat_channels(Graph<T>& g, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  int ctot = 0;
  for (const auto& x : xs) {
    if (x.n() != xs[0].n() || x.h() != xs[0].h() || x.w() != xs[0].w()) {
      throw ShapeError("concat_channels: mismatched shapes " + to_string(xs[0].shape) + " vs " +
                       to_string(x.shape));
    }
    ctot += x.c();
  }
  Tensor<T> out(xs[0].n(), ctot, xs[0].h(), xs[0].w());
  const int hw = xs[0].h() * xs[0].w();
  bool any_grad = false;
  std::vector<std::int64_t> ids;
  std::vector<int> chans;
  std::vector<bool> wants;
  for (const auto& x : xs) {
    any_grad = any_grad || x.requires_grad;
    ids.push_back(x.id);
    chans.push_back(x.c());
    wants.push_back(x.requires_grad);
  }
  for (int n = 0; n < out.n(); ++n) {
    int coff = 0;
    for (const auto& x : xs) {
      std::copy_n(x.data.data() + static_cast<std::size_t>(n) * x.c() * hw,
                  static_cast<std::size_t>(x.c()) * hw,
                  out.data.data() + (static_cast<std::size_t>(n) * ctot + coff) * hw);
      coff += x.c();
    }
  }
  out.requires_grad = any_grad;
  if (g.recording() && any_grad) {
    std::vector<const Tensor<T>*> inputs;
    for (const auto& x : xs) inputs.push_back(&x);
    const Shape os = out.shape;
    Graph<T>* gp = &g;
    (void)gp;
    // record() takes an initializer_list; register inputs manually via a loop
    // by recording with the first input and handling leaves below.
    typename Graph<T>::BackwardFn fn = [ids, chans, wants, os, hw](const Tensor<T>& go,
                                                                   GradMap<T>& grads) {
      int coff = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (wants[k]) {
          Tensor<T> dx(os[0], chans[k], os[2], os[3]);
          for (int n = 0; n < os[0]; ++n) {
            std::copy_n(go.data.data() + (static_cast<std::size_t>(n) * os[1] + coff) * hw,
                        static_cast<std::size_t>(chans[k]) * hw,
                        dx.data.data() + static_cast<std::size_t>(n) * chans[k] * hw);
          }
          grads.add(ids[k], std::move(dx));
        }
        coff += chans[k];
      }
    };
    g.record_many("concat_channels", inputs, out, std::move(fn));
  }
  return out;
}

}  // namespace afa
