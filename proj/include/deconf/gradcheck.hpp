#pragma once

#include <cmath>
#include <functional>

#include "deconf/common.hpp"
#include "deconf/matrix.hpp"

namespace deconf::numkit {

// Central-difference gradient oracle, (f(x+h e_i) - f(x-h e_i)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               const Vector& x, double h = 1e-5) {
  Vector grad(x.size());
  Vector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("finite_diff_grad: objective not finite near x");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Max relative error between an analytic gradient and the finite-difference
// oracle, normalized per coordinate by max(|a|, |b|, floor).
inline double max_rel_error(const Vector& analytic, const Vector& numeric,
                            double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace deconf::numkit
