#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "safl/errors.hpp"

namespace safl {

// A view over one flat parameter (or input) block and its analytic gradient.
struct GradSpan {
  double* values = nullptr;
  const double* grads = nullptr;
  size_t count = 0;
};

struct GradcheckResult {
  double max_rel_err = 0.0;
  size_t worst_span = 0;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of d loss / d value for every entry of every span.
// forward() must recompute the scalar loss from the current span contents;
// the grads pointers hold the analytic gradient at the unperturbed point.
// Relative error: |a - n| / max(|a|, |n|, 1e-8).
inline GradcheckResult finite_diff_gradcheck(const std::function<double()>& forward,
                                             const std::vector<GradSpan>& spans,
                                             double epsilon = 1e-6) {
  GradcheckResult res;
  for (size_t s = 0; s < spans.size(); ++s) {
    const GradSpan& span = spans[s];
    for (size_t i = 0; i < span.count; ++i) {
      const double saved = span.values[i];
      span.values[i] = saved + epsilon;
      const double lp = forward();
      span.values[i] = saved - epsilon;
      const double lm = forward();
      span.values[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericError("finite_diff_gradcheck: non-finite loss during perturbation");
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double analytic = span.grads[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_span = s;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace safl
