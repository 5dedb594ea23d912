#pragma once

#include <vector>

#include "atv/tensor.hpp"

namespace atv {

// Square-kernel 2D convolution parameters (cross-correlation semantics,
// symmetric zero padding). Bias may be empty.
template <typename T>
struct Conv2DParams {
  Tensor<T> weight;  // (O, I, K, K)
  Tensor<T> bias;    // (O) or empty
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t pad, int64_t stride, int64_t dilation) {
  return (in + 2 * pad - ((k - 1) * dilation + 1)) / stride + 1;
}

namespace detail {

template <typename T>
void validate_conv(const Tensor<T>& x, const Conv2DParams<T>& p) {
  require(x.rank() == 4, "conv2d: input must be rank-4 (N,C,H,W)");
  require(p.weight.rank() == 4, "conv2d: weight must be rank-4 (O,I,Kh,Kw)");
  const int64_t k = p.weight.dim(2);
  require(p.weight.dim(3) == k, "conv2d: kernel must be square");
  require(k == 1 || k == 3 || k == 5, "conv2d: kernel extent must be 1, 3, or 5");
  require(p.stride >= 1 && p.dilation >= 1 && p.padding >= 0, "conv2d: bad geometry");
  require(x.dim(1) == p.weight.dim(1),
          "conv2d: input channels " + std::to_string(x.dim(1)) + " do not match weight " +
              std::to_string(p.weight.dim(1)));
  const int64_t eff = (k - 1) * p.dilation + 1;
  require(eff <= x.dim(2) + 2 * p.padding && eff <= x.dim(3) + 2 * p.padding,
          "conv2d: effective kernel extent exceeds padded input");
  if (!p.bias.empty()) {
    require(p.bias.rank() == 1 && p.bias.dim(0) == p.weight.dim(0),
            "conv2d: bias extent must equal output channels");
  }
}

// C(M,N) += A(M,K) * B(K,N), all row-major. Deterministic: each output
// element is accumulated by a single thread in ascending-k order.
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// Unfold one image (C,H,W) into (C*K*K, Ho*Wo) patch columns.
template <typename T>
void im2col(const T* img, int64_t c, int64_t h, int64_t w, int64_t k, int64_t pad, int64_t stride,
            int64_t dilation, int64_t oh, int64_t ow, T* cols) {
#pragma omp parallel for schedule(static) if (c * k * k * oh * ow > 16384)
  for (int64_t row = 0; row < c * k * k; ++row) {
    const int64_t ic = row / (k * k);
    const int64_t kh = (row / k) % k;
    const int64_t kw = row % k;
    const T* src = img + ic * h * w;
    T* dst = cols + row * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const int64_t iy = oy * stride + kh * dilation - pad;
      if (iy < 0 || iy >= h) {
        for (int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
        continue;
      }
      for (int64_t ox = 0; ox < ow; ++ox) {
        const int64_t ix = ox * stride + kw * dilation - pad;
        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
      }
    }
  }
}

// Fold (C*K*K, Ho*Wo) columns back into an image, accumulating overlaps.
template <typename T>
void col2im(const T* cols, int64_t c, int64_t h, int64_t w, int64_t k, int64_t pad, int64_t stride,
            int64_t dilation, int64_t oh, int64_t ow, T* img) {
  for (int64_t row = 0; row < c * k * k; ++row) {
    const int64_t ic = row / (k * k);
    const int64_t kh = (row / k) % k;
    const int64_t kw = row % k;
    T* dst = img + ic * h * w;
    const T* src = cols + row * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const int64_t iy = oy * stride + kh * dilation - pad;
      if (iy < 0 || iy >= h) continue;
      for (int64_t ox = 0; ox < ow; ++ox) {
        const int64_t ix = ox * stride + kw * dilation - pad;
        if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
      }
    }
  }
}

}  // namespace detail

// Production path: im2col + GEMM. The 1x1/stride-1/no-pad case skips the
// unfold and multiplies over channels directly.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2DParams<T>& p) {
  detail::validate_conv(x, p);
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t o = p.weight.dim(0), k = p.weight.dim(2);
  const int64_t oh = conv_out_extent(h, k, p.padding, p.stride, p.dilation);
  const int64_t ow = conv_out_extent(w, k, p.padding, p.stride, p.dilation);
  Tensor<T> y(Shape{n, o, oh, ow});
  const bool pointwise = (k == 1 && p.stride == 1 && p.padding == 0 && p.dilation == 1);
  std::vector<T> cols;
  if (!pointwise) cols.resize(static_cast<size_t>(ci * k * k * oh * ow));
  for (int64_t in = 0; in < n; ++in) {
    const T* img = x.data() + x.offset(in, 0, 0, 0);
    const T* b = img;
    if (!pointwise) {
      detail::im2col(img, ci, h, w, k, p.padding, p.stride, p.dilation, oh, ow, cols.data());
      b = cols.data();
    }
    detail::gemm_nn(o, oh * ow, ci * k * k, p.weight.data(), b, y.data() + y.offset(in, 0, 0, 0));
  }
  if (!p.bias.empty()) {
    for (int64_t in = 0; in < n; ++in) {
      for (int64_t io = 0; io < o; ++io) {
        T* dst = y.data() + y.offset(in, io, 0, 0);
        const T bv = p.bias[io];
        for (int64_t i = 0; i < oh * ow; ++i) dst[i] += bv;
      }
    }
  }
  ensure_finite(y, "conv2d_forward");
  return y;
}

// Slow six-loop direct summation. This is the oracle the fast path is
// checked against; keep it obvious.
template <typename T>
Tensor<T> conv2d_forward_direct(const Tensor<T>& x, const Conv2DParams<T>& p) {
  detail::validate_conv(x, p);
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t o = p.weight.dim(0), k = p.weight.dim(2);
  const int64_t oh = conv_out_extent(h, k, p.padding, p.stride, p.dilation);
  const int64_t ow = conv_out_extent(w, k, p.padding, p.stride, p.dilation);
  Tensor<T> y(Shape{n, o, oh, ow});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t io = 0; io < o; ++io) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          T acc = p.bias.empty() ? T(0) : p.bias[io];
          for (int64_t ic = 0; ic < ci; ++ic) {
            for (int64_t kh = 0; kh < k; ++kh) {
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t iy = oy * p.stride + kh * p.dilation - p.padding;
                const int64_t ix = ox * p.stride + kw * p.dilation - p.padding;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x.at(in, ic, iy, ix) * p.weight.at(io, ic, kh, kw);
              }
            }
          }
          y.at(in, io, oy, ox) = acc;
        }
      }
    }
  }
  ensure_finite(y, "conv2d_forward_direct");
  return y;
}

template <typename T>
struct Conv2DGrads {
  Tensor<T> dx;
  Tensor<T> dweight;
  Tensor<T> dbias;  // empty when the layer has no bias
};

template <typename T>
Conv2DGrads<T> conv2d_backward(const Tensor<T>& x, const Conv2DParams<T>& p, const Tensor<T>& dy) {
  detail::validate_conv(x, p);
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t o = p.weight.dim(0), k = p.weight.dim(2);
  const int64_t oh = conv_out_extent(h, k, p.padding, p.stride, p.dilation);
  const int64_t ow = conv_out_extent(w, k, p.padding, p.stride, p.dilation);
  detail::require(dy.shape() == Shape({n, o, oh, ow}),
                  "conv2d_backward: dy shape " + dy.shape().str() + " does not match output");

  Conv2DGrads<T> g;
  g.dx = Tensor<T>(x.shape());
  g.dweight = Tensor<T>(p.weight.shape());
  if (!p.bias.empty()) {
    g.dbias = Tensor<T>(p.bias.shape());
    for (int64_t in = 0; in < n; ++in) {
      for (int64_t io = 0; io < o; ++io) {
        const T* src = dy.data() + dy.offset(in, io, 0, 0);
        T acc = T(0);
        for (int64_t i = 0; i < oh * ow; ++i) acc += src[i];
        g.dbias[io] += acc;
      }
    }
  }

  const bool pointwise = (k == 1 && p.stride == 1 && p.padding == 0 && p.dilation == 1);
  const int64_t ckk = ci * k * k;

  // weight matrix transpose (ckk x o) for the dx GEMM
  std::vector<T> wt(static_cast<size_t>(ckk * o));
  for (int64_t io = 0; io < o; ++io) {
    for (int64_t r = 0; r < ckk; ++r) wt[r * o + io] = p.weight[io * ckk + r];
  }

  std::vector<T> cols;
  std::vector<T> dcols;
  if (!pointwise) {
    cols.resize(static_cast<size_t>(ckk * oh * ow));
    dcols.resize(static_cast<size_t>(ckk * oh * ow));
  }

  for (int64_t in = 0; in < n; ++in) {
    const T* img = x.data() + x.offset(in, 0, 0, 0);
    const T* dyp = dy.data() + dy.offset(in, 0, 0, 0);
    const T* b = img;
    if (!pointwise) {
      detail::im2col(img, ci, h, w, k, p.padding, p.stride, p.dilation, oh, ow, cols.data());
      b = cols.data();
    }
    // dW += dy_n (o x ohw) * cols_n^T (ohw x ckk)
    detail::gemm_nt(o, ckk, oh * ow, dyp, b, g.dweight.data());
    // dcols = W^T (ckk x o) * dy_n (o x ohw)
    T* dc = pointwise ? g.dx.data() + g.dx.offset(in, 0, 0, 0) : dcols.data();
    if (!pointwise) std::fill(dcols.begin(), dcols.end(), T(0));
    detail::gemm_nn(ckk, oh * ow, o, wt.data(), dyp, dc);
    if (!pointwise) {
      detail::col2im(dcols.data(), ci, h, w, k, p.padding, p.stride, p.dilation, oh, ow,
                     g.dx.data() + g.dx.offset(in, 0, 0, 0));
    }
  }
  ensure_finite(g.dx, "conv2d_backward dx");
  ensure_finite(g.dweight, "conv2d_backward dweight");
  if (!g.dbias.empty()) ensure_finite(g.dbias, "conv2d_backward dbias");
  return g;
}

}  // namespace atv
