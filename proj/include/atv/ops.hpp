#pragma once

#include <algorithm>
#include <cmath>

#include "atv/tensor.hpp"

namespace atv {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  ensure_finite(out, "add");
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  ensure_finite(out, "mul");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  ensure_finite(out, "scale");
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  ensure_finite(out, "relu");
  return out;
}

// Subgradient at 0 is 0, so the pass-through mask is strictly x > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  detail::require(x.shape() == dy.shape(), "relu_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  const T* px = x.data();
  const T* pd = dy.data();
  T* po = dx.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? pd[i] : T(0);
  ensure_finite(dx, "relu_backward");
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-px[i]));
  ensure_finite(out, "sigmoid");
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  detail::require(x.shape() == dy.shape(), "sigmoid_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  const T* px = x.data();
  const T* pd = dy.data();
  T* po = dx.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-px[i]));
    po[i] = pd[i] * s * (T(1) - s);
  }
  ensure_finite(dx, "sigmoid_backward");
  return dx;
}

// Softmax over the channel axis of an (N,C,H,W) tensor, independently at
// each spatial site. Max-subtraction guards overflow.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  detail::require(x.rank() == 4, "softmax_channels: expected rank-4 tensor");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(x.shape());
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ih = 0; ih < h; ++ih) {
      for (int64_t iw = 0; iw < w; ++iw) {
        T mx = x.at(in, 0, ih, iw);
        for (int64_t ic = 1; ic < c; ++ic) mx = std::max(mx, x.at(in, ic, ih, iw));
        T sum = T(0);
        for (int64_t ic = 0; ic < c; ++ic) {
          const T e = std::exp(x.at(in, ic, ih, iw) - mx);
          y.at(in, ic, ih, iw) = e;
          sum += e;
        }
        for (int64_t ic = 0; ic < c; ++ic) y.at(in, ic, ih, iw) /= sum;
      }
    }
  }
  ensure_finite(y, "softmax_channels");
  return y;
}

// dx_c = y_c * (dy_c - sum_k dy_k y_k), evaluated at each spatial site.
template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  detail::require(y.shape() == dy.shape(), "softmax_channels_backward: shape mismatch");
  const int64_t n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
  Tensor<T> dx(y.shape());
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ih = 0; ih < h; ++ih) {
      for (int64_t iw = 0; iw < w; ++iw) {
        T dot = T(0);
        for (int64_t ic = 0; ic < c; ++ic) dot += dy.at(in, ic, ih, iw) * y.at(in, ic, ih, iw);
        for (int64_t ic = 0; ic < c; ++ic) {
          dx.at(in, ic, ih, iw) = y.at(in, ic, ih, iw) * (dy.at(in, ic, ih, iw) - dot);
        }
      }
    }
  }
  ensure_finite(dx, "softmax_channels_backward");
  return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expected rank-4 tensor");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, 1, 1});
  const T inv = T(1) / static_cast<T>(h * w);
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      T sum = T(0);
      const T* p = x.data() + x.offset(in, ic, 0, 0);
      for (int64_t i = 0; i < h * w; ++i) sum += p[i];
      y.at(in, ic, 0, 0) = sum * inv;
    }
  }
  ensure_finite(y, "global_avg_pool");
  return y;
}

// Spreads dy/(H*W) uniformly over each (n,c) plane.
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int64_t h, int64_t w) {
  detail::require(dy.rank() == 4 && dy.dim(2) == 1 && dy.dim(3) == 1,
                  "global_avg_pool_backward: dy must be (N,C,1,1)");
  const int64_t n = dy.dim(0), c = dy.dim(1);
  Tensor<T> dx(Shape{n, c, h, w});
  const T inv = T(1) / static_cast<T>(h * w);
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T g = dy.at(in, ic, 0, 0) * inv;
      T* p = dx.data() + dx.offset(in, ic, 0, 0);
      for (int64_t i = 0; i < h * w; ++i) p[i] = g;
    }
  }
  ensure_finite(dx, "global_avg_pool_backward");
  return dx;
}

namespace detail {

// Half-pixel-center source coordinate and interpolation weights for one
// output index under align-corners=false. Taps are clamped to the border.
template <typename T>
inline void bilinear_taps(int64_t out_i, int64_t in_extent, T scale, int64_t& i0, int64_t& i1, T& w0, T& w1) {
  T src = (static_cast<T>(out_i) + T(0.5)) * scale - T(0.5);
  src = std::max(src, T(0));
  src = std::min(src, static_cast<T>(in_extent - 1));
  i0 = static_cast<int64_t>(std::floor(src));
  i1 = std::min(i0 + 1, in_extent - 1);
  w1 = src - static_cast<T>(i0);
  w0 = T(1) - w1;
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  detail::require(x.rank() == 4, "bilinear_upsample: expected rank-4 tensor");
  detail::require(factor >= 1, "bilinear_upsample: factor must be >= 1");
  if (factor == 1) return x;
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  const T sc = T(1) / static_cast<T>(factor);
  Tensor<T> y(Shape{n, c, oh, ow});
  std::vector<int64_t> y0(oh), y1(oh), x0(ow), x1(ow);
  std::vector<T> wy0(oh), wy1(oh), wx0(ow), wx1(ow);
  for (int64_t i = 0; i < oh; ++i) detail::bilinear_taps(i, h, sc, y0[i], y1[i], wy0[i], wy1[i]);
  for (int64_t i = 0; i < ow; ++i) detail::bilinear_taps(i, w, sc, x0[i], x1[i], wx0[i], wx1[i]);
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T* src = x.data() + x.offset(in, ic, 0, 0);
      T* dst = y.data() + y.offset(in, ic, 0, 0);
      for (int64_t iy = 0; iy < oh; ++iy) {
        const T* r0 = src + y0[iy] * w;
        const T* r1 = src + y1[iy] * w;
        for (int64_t ix = 0; ix < ow; ++ix) {
          dst[iy * ow + ix] = wy0[iy] * (wx0[ix] * r0[x0[ix]] + wx1[ix] * r0[x1[ix]]) +
                              wy1[iy] * (wx0[ix] * r1[x0[ix]] + wx1[ix] * r1[x1[ix]]);
        }
      }
    }
  }
  ensure_finite(y, "bilinear_upsample");
  return y;
}

// Transpose of the forward interpolation: scatter each dy element onto its
// four source taps with the same weights.
template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, int factor) {
  detail::require(dy.rank() == 4, "bilinear_upsample_backward: expected rank-4 tensor");
  detail::require(factor >= 1, "bilinear_upsample_backward: factor must be >= 1");
  if (factor == 1) return dy;
  const int64_t n = dy.dim(0), c = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
  detail::require(oh % factor == 0 && ow % factor == 0,
                  "bilinear_upsample_backward: dy extent not divisible by factor");
  const int64_t h = oh / factor, w = ow / factor;
  const T sc = T(1) / static_cast<T>(factor);
  Tensor<T> dx(Shape{n, c, h, w});
  std::vector<int64_t> y0(oh), y1(oh), x0(ow), x1(ow);
  std::vector<T> wy0(oh), wy1(oh), wx0(ow), wx1(ow);
  for (int64_t i = 0; i < oh; ++i) detail::bilinear_taps(i, h, sc, y0[i], y1[i], wy0[i], wy1[i]);
  for (int64_t i = 0; i < ow; ++i) detail::bilinear_taps(i, w, sc, x0[i], x1[i], wx0[i], wx1[i]);
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T* g = dy.data() + dy.offset(in, ic, 0, 0);
      T* dst = dx.data() + dx.offset(in, ic, 0, 0);
      for (int64_t iy = 0; iy < oh; ++iy) {
        for (int64_t ix = 0; ix < ow; ++ix) {
          const T v = g[iy * ow + ix];
          dst[y0[iy] * w + x0[ix]] += wy0[iy] * wx0[ix] * v;
          dst[y0[iy] * w + x1[ix]] += wy0[iy] * wx1[ix] * v;
          dst[y1[iy] * w + x0[ix]] += wy1[iy] * wx0[ix] * v;
          dst[y1[iy] * w + x1[ix]] += wy1[iy] * wx1[ix] * v;
        }
      }
    }
  }
  ensure_finite(dx, "bilinear_upsample_backward");
  return dx;
}

}  // namespace atv
