#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

struct OHEMConfig {
  double theta = 0.7;        // keep pixels with true-class probability below this
  int64_t min_kept = 0;      // backfill to at least this many pixels (clamped to valid count)
  int32_t ignore_index = 255;
};

template <typename T>
struct PixelLossMap {
  int64_t n = 0, h = 0, w = 0;
  std::vector<T> loss;        // -log p_true per pixel, 0 on invalid pixels
  std::vector<T> prob;        // p_true per pixel, 1 on invalid pixels
  std::vector<uint8_t> valid; // label != ignore_index
  int64_t pixels() const { return n * h * w; }
  int64_t valid_count() const {
    int64_t c = 0;
    for (uint8_t v : valid) c += v;
    return c;
  }
};

// Numerically stable per-pixel cross entropy from raw logits.
template <typename T>
PixelLossMap<T> per_pixel_ce(const Tensor<T>& logits, const Tensor<int32_t>& labels,
                             int32_t ignore_index) {
  detail::require(logits.rank() == 4, "per_pixel_ce: logits must be (N,K,H,W)");
  detail::require(labels.rank() == 3, "per_pixel_ce: labels must be (N,H,W)");
  const int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  detail::require(labels.dim(0) == n && labels.dim(1) == h && labels.dim(2) == w,
                  "per_pixel_ce: label shape does not match logits");
  PixelLossMap<T> m;
  m.n = n;
  m.h = h;
  m.w = w;
  m.loss.assign(static_cast<size_t>(n * h * w), T(0));
  m.prob.assign(static_cast<size_t>(n * h * w), T(1));
  m.valid.assign(static_cast<size_t>(n * h * w), 0);
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ih = 0; ih < h; ++ih) {
      for (int64_t iw = 0; iw < w; ++iw) {
        const int64_t pix = (in * h + ih) * w + iw;
        const int32_t lab = labels[pix];
        if (lab == ignore_index) continue;
        detail::require(lab >= 0 && lab < k,
                        "per_pixel_ce: label " + std::to_string(lab) + " out of range for K=" +
                            std::to_string(k));
        T mx = logits.at(in, 0, ih, iw);
        for (int64_t ic = 1; ic < k; ++ic) mx = std::max(mx, logits.at(in, ic, ih, iw));
        T sum = T(0);
        for (int64_t ic = 0; ic < k; ++ic) sum += std::exp(logits.at(in, ic, ih, iw) - mx);
        const T lse = mx + std::log(sum);
        const T ll = lse - logits.at(in, lab, ih, iw);  // -log p
        m.loss[pix] = ll;
        m.prob[pix] = std::exp(-ll);
        m.valid[pix] = 1;
      }
    }
  }
  return m;
}

// Hard-pixel selection: all valid pixels with p < theta; if that set is
// smaller than min_kept, the min_kept largest-loss valid pixels instead
// (ties broken toward the smaller linear pixel index). Returns ascending
// linear pixel indices.
template <typename T>
std::vector<int64_t> ohem_select(const PixelLossMap<T>& m, const OHEMConfig& cfg) {
  detail::require(cfg.theta > 0.0 && cfg.theta <= 1.0, "ohem_select: theta must be in (0,1]");
  detail::require(cfg.min_kept >= 0, "ohem_select: min_kept must be non-negative");
  std::vector<int64_t> valid_idx;
  valid_idx.reserve(m.loss.size());
  for (int64_t i = 0; i < m.pixels(); ++i) {
    if (m.valid[static_cast<size_t>(i)]) valid_idx.push_back(i);
  }
  std::vector<int64_t> selected;
  for (int64_t i : valid_idx) {
    if (static_cast<double>(m.prob[static_cast<size_t>(i)]) < cfg.theta) selected.push_back(i);
  }
  const int64_t keep = std::min<int64_t>(cfg.min_kept, static_cast<int64_t>(valid_idx.size()));
  if (static_cast<int64_t>(selected.size()) < keep) {
    std::vector<int64_t> by_loss = valid_idx;
    std::sort(by_loss.begin(), by_loss.end(), [&](int64_t a, int64_t b) {
      const T la = m.loss[static_cast<size_t>(a)], lb = m.loss[static_cast<size_t>(b)];
      if (la != lb) return la > lb;
      return a < b;
    });
    by_loss.resize(static_cast<size_t>(keep));
    std::sort(by_loss.begin(), by_loss.end());
    selected = std::move(by_loss);
  }
  return selected;
}

// Mean cross entropy over an explicit pixel set; the set is treated as a
// constant (selection is not differentiated through).
template <typename T>
T masked_ce_loss(const Tensor<T>& logits, const Tensor<int32_t>& labels,
                 const std::vector<int64_t>& selected, int32_t ignore_index) {
  if (selected.empty()) return T(0);
  const PixelLossMap<T> m = per_pixel_ce(logits, labels, ignore_index);
  T sum = T(0);
  for (int64_t i : selected) sum += m.loss[static_cast<size_t>(i)];
  return sum / static_cast<T>(selected.size());
}

template <typename T>
struct OhemLossResult {
  T loss = T(0);
  Tensor<T> dlogits;
  std::vector<int64_t> selected;
};

template <typename T>
OhemLossResult<T> ohem_loss(const Tensor<T>& logits, const Tensor<int32_t>& labels,
                            const OHEMConfig& cfg) {
  const int64_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const PixelLossMap<T> m = per_pixel_ce(logits, labels, cfg.ignore_index);
  OhemLossResult<T> r;
  r.selected = ohem_select(m, cfg);
  r.dlogits = Tensor<T>(logits.shape());
  if (r.selected.empty()) return r;

  T sum = T(0);
  for (int64_t i : r.selected) sum += m.loss[static_cast<size_t>(i)];
  r.loss = sum / static_cast<T>(r.selected.size());

  // dlogits = (softmax - onehot) / |selection| on selected pixels
  const T inv = T(1) / static_cast<T>(r.selected.size());
  std::vector<T> p(static_cast<size_t>(k));
  for (int64_t i : r.selected) {
    const int64_t in = i / (h * w);
    const int64_t ih = (i / w) % h;
    const int64_t iw = i % w;
    T mx = logits.at(in, 0, ih, iw);
    for (int64_t ic = 1; ic < k; ++ic) mx = std::max(mx, logits.at(in, ic, ih, iw));
    T z = T(0);
    for (int64_t ic = 0; ic < k; ++ic) {
      p[static_cast<size_t>(ic)] = std::exp(logits.at(in, ic, ih, iw) - mx);
      z += p[static_cast<size_t>(ic)];
    }
    const int32_t lab = labels[i];
    for (int64_t ic = 0; ic < k; ++ic) {
      const T soft = p[static_cast<size_t>(ic)] / z;
      r.dlogits.at(in, ic, ih, iw) = (soft - (ic == lab ? T(1) : T(0))) * inv;
    }
  }
  ensure_finite(r.dlogits, "ohem_loss dlogits");
  return r;
}

}  // namespace atv
