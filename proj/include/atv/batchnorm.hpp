#pragma once

#include <cstdio>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

enum class Mode { train, eval };

template <typename T>
struct BatchNorm2DParams {
  Tensor<T> gamma, beta;                // (C)
  Tensor<T> running_mean, running_var;  // (C)
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Everything backward needs from a train-mode forward.
template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel, 1/sqrt(var + eps)
  Mode mode = Mode::train;
};

template <typename T>
BatchNorm2DParams<T> make_batchnorm(int64_t channels) {
  BatchNorm2DParams<T> p;
  p.gamma = constant<T>(Shape{channels}, T(1));
  p.beta = Tensor<T>(Shape{channels});
  p.running_mean = Tensor<T>(Shape{channels});
  p.running_var = Tensor<T>(Shape{channels});
  return p;
}

// Train mode normalizes by biased per-channel batch statistics and, when
// update_running is set, folds them into the running averages. Eval mode
// reads the running statistics and never mutates them. update_running
// exists so gradient checking can replay train-mode forwards without side
// effects.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm2DParams<T>& p, Mode mode,
                            bool update_running = true, BatchNormCache<T>* cache = nullptr) {
  detail::require(x.rank() == 4, "batchnorm: input must be rank-4");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(p.gamma.size() == c, "batchnorm: channel mismatch");
  detail::require(p.momentum > T(0) && p.momentum <= T(1), "batchnorm: momentum must be in (0,1]");
  const int64_t m = n * h * w;

  std::vector<T> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
  if (mode == Mode::train) {
    detail::require(m >= 2, "batchnorm: train mode needs N*H*W >= 2 per channel");
    for (int64_t ic = 0; ic < c; ++ic) {
      T s = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* px = x.data() + x.offset(in, ic, 0, 0);
        for (int64_t i = 0; i < h * w; ++i) s += px[i];
      }
      const T mu = s / static_cast<T>(m);
      T sq = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* px = x.data() + x.offset(in, ic, 0, 0);
        for (int64_t i = 0; i < h * w; ++i) {
          const T d = px[i] - mu;
          sq += d * d;
        }
      }
      mean[ic] = mu;
      var[ic] = sq / static_cast<T>(m);
    }
    if (update_running) {
      for (int64_t ic = 0; ic < c; ++ic) {
        p.running_mean[ic] = (T(1) - p.momentum) * p.running_mean[ic] + p.momentum * mean[ic];
        p.running_var[ic] = (T(1) - p.momentum) * p.running_var[ic] + p.momentum * var[ic];
      }
    }
  } else {
    bool stats_seen = false;
    for (int64_t ic = 0; ic < c; ++ic) {
      mean[ic] = p.running_mean[ic];
      var[ic] = p.running_var[ic];
      if (var[ic] != T(0)) stats_seen = true;
    }
    if (!stats_seen) {
      std::fprintf(stderr, "warning: batchnorm eval mode before any running statistics exist\n");
    }
  }

  Tensor<T> y(x.shape());
  std::vector<T> inv_std(static_cast<size_t>(c));
  for (int64_t ic = 0; ic < c; ++ic) inv_std[ic] = T(1) / std::sqrt(var[ic] + p.eps);
  Tensor<T> xhat_store;
  const bool keep_xhat = (cache != nullptr);
  if (keep_xhat) xhat_store = Tensor<T>(x.shape());
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const T* px = x.data() + x.offset(in, ic, 0, 0);
      T* py = y.data() + y.offset(in, ic, 0, 0);
      T* ph = keep_xhat ? xhat_store.data() + xhat_store.offset(in, ic, 0, 0) : nullptr;
      const T mu = mean[ic], is = inv_std[ic], g = p.gamma[ic], b = p.beta[ic];
      for (int64_t i = 0; i < h * w; ++i) {
        const T xh = (px[i] - mu) * is;
        if (keep_xhat) ph[i] = xh;
        py[i] = g * xh + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat_store);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  ensure_finite(y, "batchnorm_forward");
  return y;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

// Full batch-statistics chain rule:
//   dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                     const Tensor<T>& dy) {
  detail::require(cache.mode == Mode::train, "batchnorm_backward: cache must come from train mode");
  detail::require(cache.xhat.shape() == dy.shape(), "batchnorm_backward: shape mismatch");
  const int64_t n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const T inv_m = T(1) / static_cast<T>(n * h * w);

  BatchNormGrads<T> g;
  g.dx = Tensor<T>(dy.shape());
  g.dgamma = Tensor<T>(Shape{c});
  g.dbeta = Tensor<T>(Shape{c});

  for (int64_t ic = 0; ic < c; ++ic) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (int64_t in = 0; in < n; ++in) {
      const T* pd = dy.data() + dy.offset(in, ic, 0, 0);
      const T* ph = cache.xhat.data() + cache.xhat.offset(in, ic, 0, 0);
      for (int64_t i = 0; i < h * w; ++i) {
        sum_dy += pd[i];
        sum_dy_xhat += pd[i] * ph[i];
      }
    }
    g.dgamma[ic] = sum_dy_xhat;
    g.dbeta[ic] = sum_dy;
    const T k = gamma[ic] * cache.inv_std[static_cast<size_t>(ic)];
    const T mean_dy = sum_dy * inv_m;
    const T mean_dy_xhat = sum_dy_xhat * inv_m;
    for (int64_t in = 0; in < n; ++in) {
      const T* pd = dy.data() + dy.offset(in, ic, 0, 0);
      const T* ph = cache.xhat.data() + cache.xhat.offset(in, ic, 0, 0);
      T* px = g.dx.data() + g.dx.offset(in, ic, 0, 0);
      for (int64_t i = 0; i < h * w; ++i) px[i] = k * (pd[i] - mean_dy - ph[i] * mean_dy_xhat);
    }
  }
  ensure_finite(g.dx, "batchnorm_backward dx");
  ensure_finite(g.dgamma, "batchnorm_backward dgamma");
  ensure_finite(g.dbeta, "batchnorm_backward dbeta");
  return g;
}

}  // namespace atv
