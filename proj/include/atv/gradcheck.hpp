#pragma once

#include <functional>
#include <string>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

struct GradCheckReport {
  std::string layer;
  double tolerance = 1e-4;
  double step = 1e-4;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::vector<int64_t> failing;  // flat coordinates whose error exceeds tolerance
  bool pass = false;
};

// Central-difference check of an analytic gradient against the scalar map
// f over a flattened point. Relative error per coordinate:
//   |analytic - numeric| / max(1, |analytic|, |numeric|)
inline GradCheckReport check_gradient(const std::string& name, const std::vector<double>& point,
                                      const std::vector<double>& analytic,
                                      const std::function<double(const std::vector<double>&)>& f,
                                      double tolerance = 1e-4, double step = 1e-4) {
  detail::require(point.size() == analytic.size(), "check_gradient: gradient length mismatch");
  GradCheckReport r;
  r.layer = name;
  r.tolerance = tolerance;
  r.step = step;
  r.checked = static_cast<int64_t>(point.size());
  std::vector<double> x = point;
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > r.max_rel_err) r.max_rel_err = rel;
    if (rel > tolerance) r.failing.push_back(static_cast<int64_t>(i));
  }
  r.pass = r.failing.empty();
  return r;
}

// The full 64-bit verification suite: every primitive layer plus the whole
// tiny model. Runs single-threaded; see cmd `gradcheck`.
std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed);

bool gradcheck_all_pass(const std::vector<GradCheckReport>& reports);
std::string gradcheck_format(const GradCheckReport& r);

}  // namespace atv
