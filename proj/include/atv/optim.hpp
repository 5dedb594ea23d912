#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_set>

#include "atv/params.hpp"

namespace atv {

struct PolySchedule {
  double lr0 = 1e-4;
  double power = 0.9;
  int64_t total_steps = 1;
};

// lr(t) = lr0 * (1 - t/T)^power, defined on t in [0, T].
inline double poly_lr(const PolySchedule& s, int64_t t) {
  detail::require(s.lr0 > 0.0 && s.power > 0.0 && s.total_steps >= 1, "poly_lr: bad schedule");
  detail::require(t >= 0 && t <= s.total_steps,
                  "poly_lr: step " + std::to_string(t) + " outside [0," +
                      std::to_string(s.total_steps) + "]");
  return s.lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(s.total_steps), s.power);
}

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  ParamStore<T> m;
  ParamStore<T> v;
  int64_t t = 0;
};

// One AdamW update with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
// Parameters named in no_decay skip the decay term.
template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamWState<T>& state, double lr,
                const AdamWHyper& hp, const std::unordered_set<std::string>& no_decay) {
  state.t += 1;
  const T bc1 = static_cast<T>(1.0 / (1.0 - std::pow(hp.beta1, static_cast<double>(state.t))));
  const T bc2 = static_cast<T>(1.0 / (1.0 - std::pow(hp.beta2, static_cast<double>(state.t))));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T eps = static_cast<T>(hp.eps), step = static_cast<T>(lr);

  for (const std::string& name : params.names()) {
    detail::require(grads.has(name), "adamw_step: missing gradient for " + name);
    Tensor<T>& p = params.at(name);
    const Tensor<T>& g = grads.at(name);
    detail::require(p.shape() == g.shape(), "adamw_step: gradient shape mismatch for " + name);
    for (int64_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw std::runtime_error("adamw_step: non-finite gradient in " + name);
      }
    }
    if (!state.m.has(name)) {
      state.m.add(name, Tensor<T>(p.shape()));
      state.v.add(name, Tensor<T>(p.shape()));
    }
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    const T wd = no_decay.count(name) ? T(0) : static_cast<T>(hp.weight_decay);
    const int64_t n = p.size();
    T* pp = p.data();
    T* pm = m.data();
    T* pv = v.data();
    const T* pg = g.data();
    for (int64_t i = 0; i < n; ++i) {
      pm[i] = b1 * pm[i] + (T(1) - b1) * pg[i];
      pv[i] = b2 * pv[i] + (T(1) - b2) * pg[i] * pg[i];
      const T mhat = pm[i] * bc1;
      const T vhat = pv[i] * bc2;
      pp[i] -= step * (mhat / (std::sqrt(vhat) + eps) + wd * pp[i]);
    }
    ensure_finite(p, "adamw_step");
  }
}

}  // namespace atv
