#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/losses/losses.hpp"

namespace brainmclip {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-8;

/// |a - n| / max(|a|, |n|, 1e-8), maximised over coordinates.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeMismatch("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

/// Central-difference gradient of a scalar function of a matrix.
template <class ValueFn>
Matrix numeric_gradient(ValueFn&& value, const Matrix& point, double h = kGradCheckStep) {
  Matrix x = point;
  Matrix grad(point.rows(), point.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x.values()[k];
    x.values()[k] = orig + h;
    const double fp = value(static_cast<const Matrix&>(x));
    x.values()[k] = orig - h;
    const double fm = value(static_cast<const Matrix&>(x));
    x.values()[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalFailure("numeric_gradient: non-finite evaluation at coordinate " + std::to_string(k));
    }
    grad.values()[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/**
 * Compares the analytic gradient of f at point against central differences.
 * f maps a matrix to LossValueGrad; returns the max relative error.
 */
template <class LossFn>
double grad_check(LossFn&& f, const Matrix& point, double h = kGradCheckStep) {
  const LossValueGrad at = f(point);
  if (!at.grad.same_shape(point)) throw ShapeMismatch("grad_check: gradient shape differs from point");
  if (!std::isfinite(at.value) || !all_finite(at.grad)) throw NumericalFailure("grad_check: non-finite analytic result");
  const Matrix numeric = numeric_gradient([&](const Matrix& x) { return f(x).value; }, point, h);
  return max_relative_error(at.grad.values(), numeric.values());
}

}  // namespace brainmclip
