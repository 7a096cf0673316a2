#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

/// Lower-triangular L with S = L L^T. Throws NumericalFailure if S is not positive definite;
/// a pivot that cancels to rounding level of its diagonal entry counts as singular.
inline Matrix cholesky(const Matrix& s) {
  if (s.rows() != s.cols()) throw ShapeMismatch("cholesky: matrix not square");
  const std::size_t n = s.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    const double floor = 8.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * std::abs(s(j, j));
    if (!(d > floor) || !std::isfinite(d)) {
      throw NumericalFailure("cholesky: matrix not positive definite at pivot " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

/// Solves (L L^T) X = B for every column of B.
inline Matrix cholesky_solve(const Matrix& l, Matrix b) {
  const std::size_t n = l.rows();
  if (b.rows() != n) throw ShapeMismatch("cholesky_solve: rhs row count");
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = b(i, c);
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * b(k, c);
      b(i, c) = v / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double v = b(i, c);
      for (std::size_t k = i + 1; k < n; ++k) v -= l(k, i) * b(k, c);
      b(i, c) = v / l(i, i);
    }
  }
  return b;
}

/// argmin_W ||X W - Y||^2 + lambda ||W||^2 via Cholesky of X^T X + lambda I.
inline Matrix ridge_solve(const Matrix& x, const Matrix& y, double lambda) {
  if (x.rows() != y.rows()) throw ShapeMismatch("ridge_solve: X and Y row counts differ");
  if (!(lambda >= 0.0)) throw RangeError("ridge_solve: lambda must be >= 0");
  Matrix gram = matmul_tn(x, x);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += lambda;
  const Matrix l = cholesky(gram);
  Matrix w = cholesky_solve(l, matmul_tn(x, y));
  if (!all_finite(w)) throw NumericalFailure("ridge_solve: non-finite solution");
  return w;
}

}  // namespace brainmclip
