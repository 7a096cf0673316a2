#pragma once

// Deliberately naive reference implementations. They share no code with the
// library beyond the Matrix container, and favour the textbook formula over speed.

#include <algorithm>
#include <cmath>
#include <vector>

#include "brainmclip/core/matrix.hpp"

namespace oracle {

using brainmclip::Matrix;
using Vec = std::vector<double>;

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double trace(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return s;
}

/// tr(K H L H) / (m-1)^2 with H = I - 11^T/m materialized.
inline double hsic_explicit(const Matrix& a, const Matrix& b) {
  const std::size_t m = a.rows();
  Matrix h(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) h(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(m);
  const Matrix k = multiply(a, transpose(a));
  const Matrix l = multiply(b, transpose(b));
  const Matrix khlh = multiply(multiply(multiply(k, h), l), h);
  return trace(khlh) / static_cast<double>((m - 1) * (m - 1));
}

inline double cka_explicit(const Matrix& a, const Matrix& b) {
  return hsic_explicit(a, b) / std::sqrt(hsic_explicit(a, a) * hsic_explicit(b, b));
}

inline double pearson(const Vec& x, const Vec& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Rank = (#smaller) + (#equal + 1) / 2, counted directly.
inline Vec ranks(const Vec& x) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) less += v < x[i], equal += v == x[i];
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double spearman(const Vec& x, const Vec& y) { return pearson(ranks(x), ranks(y)); }

inline Vec row(const Matrix& m, std::size_t i) { return Vec(m.row(i).begin(), m.row(i).end()); }

inline Matrix rdm(const Matrix& f) {
  const std::size_t n = f.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d(i, j) = i == j ? 0.0 : 1.0 - pearson(row(f, i), row(f, j));
  return d;
}

inline double cosine(const Vec& u, const Vec& v) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) uv += u[i] * v[i], uu += u[i] * u[i], vv += v[i] * v[i];
  return uv / std::sqrt(uu * vv);
}

/// Least squares via Householder QR of the augmented system [X; sqrt(lambda) I] w = [y; 0].
inline Matrix least_squares_qr(const Matrix& x, const Matrix& y, double lambda = 0.0) {
  const std::size_t n = x.rows(), p = x.cols(), q = y.cols();
  const std::size_t rows = n + (lambda > 0 ? p : 0);
  Matrix a(rows, p), b(rows, q);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) a(i, j) = x(i, j);
    for (std::size_t j = 0; j < q; ++j) b(i, j) = y(i, j);
  }
  if (lambda > 0)
    for (std::size_t j = 0; j < p; ++j) a(n + j, j) = std::sqrt(lambda);
  for (std::size_t k = 0; k < p; ++k) {
    double norm = 0;
    for (std::size_t i = k; i < rows; ++i) norm += a(i, k) * a(i, k);
    norm = std::sqrt(norm);
    const double alpha = a(k, k) > 0 ? -norm : norm;
    Vec v(rows, 0.0);
    for (std::size_t i = k; i < rows; ++i) v[i] = a(i, k);
    v[k] -= alpha;
    double vv = 0;
    for (std::size_t i = k; i < rows; ++i) vv += v[i] * v[i];
    if (vv == 0) continue;
    auto reflect = [&](Matrix& m) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0;
        for (std::size_t i = k; i < rows; ++i) s += v[i] * m(i, j);
        s = 2 * s / vv;
        for (std::size_t i = k; i < rows; ++i) m(i, j) -= s * v[i];
      }
    };
    reflect(a);
    reflect(b);
  }
  Matrix w(p, q);
  for (std::size_t c = 0; c < q; ++c)
    for (std::size_t k = p; k-- > 0;) {
      double s = b(k, c);
      for (std::size_t j = k + 1; j < p; ++j) s -= a(k, j) * w(j, c);
      w(k, c) = s / a(k, k);
    }
  return w;
}

/// Gaussian-window SSIM, two-pass moments per window.
inline double ssim_loop(const Matrix& a, const Matrix& b, double range) {
  const int win = 11;
  const double sigma = 1.5;
  double kernel[11][11];
  double total = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      kernel[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
      total += kernel[i][j];
    }
  for (auto& r : kernel)
    for (double& v : r) v /= total;
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double sum = 0;
  int count = 0;
  for (std::size_t r0 = 0; r0 + win <= a.rows(); ++r0)
    for (std::size_t c0 = 0; c0 + win <= a.cols(); ++c0) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) ma += kernel[i][j] * a(r0 + i, c0 + j), mb += kernel[i][j] * b(r0 + i, c0 + j);
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double da = a(r0 + i, c0 + j) - ma, db = b(r0 + i, c0 + j) - mb;
          va += kernel[i][j] * da * da;
          vb += kernel[i][j] * db * db;
          cov += kernel[i][j] * da * db;
        }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

inline double two_way(const Matrix& preds, const Matrix& truths) {
  const std::size_t n = preds.rows();
  double wins = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double own = pearson(row(preds, i), row(truths, i));
      const double other = pearson(row(preds, i), row(truths, j));
      wins += own > other ? 1.0 : own == other ? 0.5 : 0.0;
    }
  return 100.0 * wins / static_cast<double>(n * (n - 1));
}

/// Orthogonal d x d matrix from Gram-Schmidt on the given square matrix.
inline Matrix orthonormalize(Matrix q) {
  const std::size_t d = q.cols();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double s = 0;
      for (std::size_t i = 0; i < q.rows(); ++i) s += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) -= s * q(i, k);
    }
    double norm = 0;
    for (std::size_t i = 0; i < q.rows(); ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) /= norm;
  }
  return q;
}

}  // namespace oracle
