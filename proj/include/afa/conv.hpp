#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "afa/graph.hpp"
#include "afa/parallel.hpp"
#include "afa/tensor.hpp"

namespace afa {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

/// Unfolds one sample into a (Cin*kh*kw) x (oh*ow) row-major patch matrix.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
            T* col) {
  const int khw = kh * kw;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < cin; ++c) {
    for (int k = 0; k < khw; ++k) {
      const int ky = k / kw, kx = k % kw;
      T* dst = col + (static_cast<std::size_t>(c) * khw + k) * ohw;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) {
          for (int ox = 0; ox < ow; ++ox) *dst++ = T(0);
          continue;
        }
        const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * stride + kx - pad;
          *dst++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
        }
      }
    }
  }
}

/// Scatter-adds a patch matrix back into one sample (inverse of im2col).
template <typename T>
void col2im(const T* col, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, T* x) {
  const int khw = kh * kw;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < cin; ++c) {
    for (int k = 0; k < khw; ++k) {
      const int ky = k / kw, kx = k % kw;
      const T* src = col + (static_cast<std::size_t>(c) * khw + k) * ohw;
      for (int oy = 0; oy < oh; ++oy, src += ow) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * stride + kx - pad;
          if (ix >= 0 && ix < w) dst[ix] += src[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// 2D convolution (cross-correlation), weight layout (Cout, Cin, kh, kw),
/// bias shape (1, Cout, 1, 1). Output spatial dims follow
/// floor((H + 2p - kh) / s) + 1.
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int padding = 0) {
  const int cout = w.n(), cin = w.c(), kh = w.h(), kw = w.w();
  if (x.c() != cin) {
    throw ShapeError("conv2d: input channels C=" + std::to_string(x.c()) +
                     " do not match weight Cin=" + std::to_string(cin) + " (input " +
                     to_string(x.shape) + ", weight " + to_string(w.shape) + ")");
  }
  if (b.shape != Shape{1, cout, 1, 1}) {
    throw ShapeError("conv2d: bias must have shape (1," + std::to_string(cout) +
                     ",1,1), got " + to_string(b.shape));
  }
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  if (x.h() + 2 * padding < kh || x.w() + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel (" + std::to_string(kh) + "," + std::to_string(kw) +
                     ") larger than padded input H/W of " + to_string(x.shape) + " with padding " +
                     std::to_string(padding));
  }
  const int n = x.n(), h = x.h(), iw = x.w();
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (iw + 2 * padding - kw) / stride + 1;
  const int K = cin * kh * kw;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;

  Tensor<T> out(n, cout, oh, ow);
  detail::CMapRM<T> wm(w.data.data(), cout, K);
  parallel_for(0, n, [&](int i) {
    std::unique_ptr<T[]> col(new T[static_cast<std::size_t>(K) * ohw]);
    detail::im2col(x.data.data() + static_cast<std::size_t>(i) * cin * h * iw, cin, h, iw, kh, kw,
                   stride, padding, oh, ow, col.get());
    detail::CMapRM<T> cm(col.get(), K, static_cast<Eigen::Index>(ohw));
    detail::MapRM<T> ym(out.data.data() + static_cast<std::size_t>(i) * cout * ohw, cout,
                        static_cast<Eigen::Index>(ohw));
    ym.noalias() = wm * cm;
    for (int c = 0; c < cout; ++c) ym.row(c).array() += b.data[c];
  });

  out.requires_grad = x.requires_grad || w.requires_grad || b.requires_grad;
  if (g.recording() && out.requires_grad) {
    const auto xid = x.id, wid = w.id, bid = b.id;
    const bool gx = x.requires_grad, gw = w.requires_grad, gb = b.requires_grad;
    Tensor<T> xv = x, wv = w;
    g.record("conv2d", {&x, &w, &b}, out,
             [=, xv = std::move(xv), wv = std::move(wv)](const Tensor<T>& go, GradMap<T>& grads) {
               const int N = xv.n();
               if (gb) {
                 Tensor<T> db(1, cout, 1, 1, T(0));
                 for (int i = 0; i < N; ++i)
                   for (int c = 0; c < cout; ++c) {
                     const T* base = go.data.data() + (static_cast<std::size_t>(i) * cout + c) * ohw;
                     T acc = T(0);
                     for (std::size_t p = 0; p < ohw; ++p) acc += base[p];
                     db.data[c] += acc;
                   }
                 grads.add(bid, std::move(db));
               }
               // Per-sample partials, reduced in index order afterwards so the
               // result does not depend on the thread partition.
               std::vector<detail::MatRM<T>> dw_parts;
               Tensor<T> dx;
               if (gw) dw_parts.assign(N, detail::MatRM<T>::Zero(cout, K));
               if (gx) dx = Tensor<T>(xv.n(), xv.c(), xv.h(), xv.w(), T(0));
               detail::CMapRM<T> wmat(wv.data.data(), cout, K);
               parallel_for(0, N, [&](int i) {
                 detail::CMapRM<T> gy(go.data.data() + static_cast<std::size_t>(i) * cout * ohw,
                                      cout, static_cast<Eigen::Index>(ohw));
                 if (gw) {
                   std::unique_ptr<T[]> col(new T[static_cast<std::size_t>(K) * ohw]);
                   detail::im2col(xv.data.data() + static_cast<std::size_t>(i) * cin * h * iw, cin,
                                  h, iw, kh, kw, stride, padding, oh, ow, col.get());
                   detail::CMapRM<T> cm(col.get(), K, static_cast<Eigen::Index>(ohw));
                   dw_parts[i].noalias() = gy * cm.transpose();
                 }
                 if (gx) {
                   std::unique_ptr<T[]> dcol(new T[static_cast<std::size_t>(K) * ohw]);
                   detail::MapRM<T> dcm(dcol.get(), K, static_cast<Eigen::Index>(ohw));
                   dcm.noalias() = wmat.transpose() * gy;
                   detail::col2im(dcol.get(), cin, h, iw, kh, kw, stride, padding, oh, ow,
                                  dx.data.data() + static_cast<std::size_t>(i) * cin * h * iw);
                 }
               });
               if (gw) {
                 Tensor<T> dw(cout, cin, kh, kw, T(0));
                 detail::MapRM<T> dwm(dw.data.data(), cout, K);
                 for (int i = 0; i < N; ++i) dwm += dw_parts[i];
                 grads.add(wid, std::move(dw));
               }
               if (gx) grads.add(xid, std::move(dx));
             });
  }
  return out;
}

}  // namespace afa
