#pragma once

#include <algorithm>
#include <cmath>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

namespace detail {

inline void require_paired_rows(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows()) {
    throw ShapeMismatch(std::string(what) + ": row counts differ (" + Matrix::shape_string(a) + " vs " +
                        Matrix::shape_string(b) + ")");
  }
  if (a.rows() < 2) throw DegenerateInput(std::string(what) + ": need at least 2 rows");
}

}  // namespace detail

/// HSIC with linear kernels: tr(K H L H) / (m-1)^2.
inline double hsic(const Matrix& a, const Matrix& b) {
  detail::require_paired_rows(a, b, "hsic");
  const Matrix kc = apply_centering(gram_linear(a));
  const Matrix l = gram_linear(b);
  // tr(K H L H) = <HKH, L> because H is symmetric and idempotent.
  const double m1 = static_cast<double>(a.rows() - 1);
  return frobenius_dot(kc, l) / (m1 * m1);
}

/// Centered Gram matrix of a representation; throws if its rows are all identical.
inline Matrix centered_gram(const Matrix& a, const char* what) {
  const Matrix k = gram_linear(a);
  Matrix kc = apply_centering(k);
  // Identical rows centre to rounding residue only.
  const double scale = max_abs(k) * static_cast<double>(k.rows());
  if (frobenius_norm(kc) <= 1e-12 * scale) {
    throw DegenerateInput(std::string(what) + ": representation is constant across rows");
  }
  return kc;
}

/// Linear CKA without clamping; may sit a few ulps outside [0, 1].
inline double cka_unclamped(const Matrix& a, const Matrix& b) {
  detail::require_paired_rows(a, b, "cka");
  const Matrix kc = centered_gram(a, "cka (first argument)");
  const Matrix lc = centered_gram(b, "cka (second argument)");
  return frobenius_dot(kc, lc) / (frobenius_norm(kc) * frobenius_norm(lc));
}

inline double cka(const Matrix& a, const Matrix& b) { return std::clamp(cka_unclamped(a, b), 0.0, 1.0); }

}  // namespace brainmclip
