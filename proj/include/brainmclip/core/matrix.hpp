#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "brainmclip/core/error.hpp"

namespace brainmclip {

using Vector = std::vector<double>;

/**
 * Dense row-major real64 matrix.
 *
 * A default-constructed Matrix is empty (0x0) and acts as an "absent" marker;
 * every sized constructor requires rows >= 1 and cols >= 1.
 */
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    check_dims();
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_dims();
    if (data_.size() != rows_ * cols_) {
      throw ShapeMismatch("matrix data length " + std::to_string(data_.size()) + " != " +
                          std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    check_dims();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeMismatch("ragged initializer list");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  /// Same data reinterpreted with a new shape (row-major order preserved).
  Matrix reshaped(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) throw ShapeMismatch("reshape changes element count");
    return Matrix(rows, cols, data_);
  }

  Matrix row_matrix(std::size_t i) const {
    auto r = row(i);
    return Matrix(1, cols_, std::vector<double>(r.begin(), r.end()));
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    require_same_shape(*this, o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }

  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  static void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
    if (!a.same_shape(b)) {
      throw ShapeMismatch(what + ": " + shape_string(a) + " vs " + shape_string(b));
    }
  }

  static std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows_) + "x" + std::to_string(m.cols_);
  }

 private:
  void check_dims() const {
    if (rows_ == 0 || cols_ == 0) throw ShapeMismatch("matrix dimensions must be >= 1");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + Matrix::shape_string(a) + " * " + Matrix::shape_string(b));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// C = A^T * B.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeMismatch("matmul_tn: " + Matrix::shape_string(a) + "^T * " + Matrix::shape_string(b));
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += ari * br[j];
    }
  }
  return c;
}

/// C = A * B^T.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeMismatch("matmul_nt: " + Matrix::shape_string(a) + " * " + Matrix::shape_string(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeMismatch("dot: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

/// Frobenius inner product <A, B>.
inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  Matrix::require_same_shape(a, b, "frobenius_dot");
  return dot(a.values(), b.values());
}

inline double frobenius_norm(const Matrix& a) { return norm2(a.values()); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  Matrix::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
  return m;
}

inline bool all_finite(const Matrix& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

/// Column means as a 1 x cols matrix.
inline Matrix column_means(const Matrix& a) {
  Matrix m(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) += a(i, j);
  m *= 1.0 / static_cast<double>(a.rows());
  return m;
}

/// Rows [begin, end) as a new matrix.
inline Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows()) throw RangeError("slice_rows: bad row range");
  auto first = a.values().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  auto last = a.values().begin() + static_cast<std::ptrdiff_t>(end * a.cols());
  return Matrix(end - begin, a.cols(), std::vector<double>(first, last));
}

inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> idx) {
  if (idx.empty()) throw DegenerateInput("gather_rows: empty index set");
  Matrix out(idx.size(), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.rows()) throw RangeError("gather_rows: index out of range");
    std::copy(a.row(idx[r]).begin(), a.row(idx[r]).end(), out.row(r).begin());
  }
  return out;
}

/// Linear-kernel Gram matrix K = A A^T.
inline Matrix gram_linear(const Matrix& a) { return matmul_nt(a, a); }

/**
 * Double centering H K H with H = I - (1/m) 11^T, computed by subtracting
 * row and column means and adding back the grand mean.
 */
inline Matrix apply_centering(const Matrix& k) {
  if (k.rows() != k.cols()) throw ShapeMismatch("apply_centering: matrix not square");
  const std::size_t m = k.rows();
  if (m < 2) throw DegenerateInput("apply_centering: need m >= 2");
  std::vector<double> row_mean(m, 0.0), col_mean(m, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      row_mean[i] += k(i, j);
      col_mean[j] += k(i, j);
    }
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    grand += row_mean[i];
    row_mean[i] *= inv;
    col_mean[i] *= inv;
  }
  grand *= inv * inv;
  Matrix c(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) c(i, j) = k(i, j) - row_mean[i] - col_mean[j] + grand;
  return c;
}

}  // namespace brainmclip
