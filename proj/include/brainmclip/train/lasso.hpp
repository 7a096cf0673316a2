#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/data/synth.hpp"

namespace brainmclip {

struct LassoOptions {
  double tolerance = 1e-8;  // max absolute coordinate change per sweep
  std::size_t max_sweeps = 10000;
};

struct LassoResult {
  Vector beta;           // original column scale
  Vector beta_std;       // on the standardized columns
  double intercept = 0.0;
  std::size_t sweeps = 0;
  bool converged = false;
  std::optional<std::string> warning;  // set when max_sweeps was reached
};

inline double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

/// Column means and population standard deviations of x.
struct Standardization {
  Vector mean;
  Vector sd;
};

inline Standardization column_standardization(const Matrix& x) {
  const std::size_t n = x.rows(), p = x.cols();
  Standardization s{Vector(p, 0.0), Vector(p, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) s.mean[j] += x(i, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double d = x(i, j) - s.mean[j];
      s.sd[j] += d * d;
    }
  }
  for (double& v : s.sd) v = std::sqrt(v / static_cast<double>(n));
  return s;
}

/// Standardized design, column-major for the coordinate sweeps. Constant columns stay zero.
inline std::vector<Vector> standardized_columns(const Matrix& x, const Standardization& s) {
  std::vector<Vector> z(x.cols(), Vector(x.rows(), 0.0));
  for (std::size_t j = 0; j < x.cols(); ++j) {
    if (s.sd[j] <= 0.0) continue;
    for (std::size_t i = 0; i < x.rows(); ++i) z[j][i] = (x(i, j) - s.mean[j]) / s.sd[j];
  }
  return z;
}

namespace detail {

inline LassoResult lasso_on_columns(const std::vector<Vector>& z, const Standardization& s, std::span<const double> y,
                                    double lambda, const LassoOptions& opt) {
  const std::size_t n = y.size(), p = z.size();
  double y_mean = 0.0;
  for (double v : y) y_mean += v;
  y_mean /= static_cast<double>(n);
  Vector r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - y_mean;

  LassoResult out;
  out.beta_std.assign(p, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (out.sweeps = 1; out.sweeps <= opt.max_sweeps; ++out.sweeps) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (s.sd[j] <= 0.0) continue;
      const Vector& zj = z[j];
      const double old = out.beta_std[j];
      // Standardized columns have n^-1 z_j^T z_j = 1.
      const double rho = inv_n * dot(zj, r) + old;
      const double next = soft_threshold(rho, lambda);
      const double delta = next - old;
      if (delta != 0.0) {
        for (std::size_t i = 0; i < n; ++i) r[i] -= delta * zj[i];
        out.beta_std[j] = next;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    if (max_change < opt.tolerance) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) {
    out.sweeps = opt.max_sweeps;
    out.warning = "lasso did not converge within " + std::to_string(opt.max_sweeps) + " sweeps";
  }
  out.beta.assign(p, 0.0);
  out.intercept = y_mean;
  for (std::size_t j = 0; j < p; ++j) {
    if (s.sd[j] <= 0.0) continue;
    out.beta[j] = out.beta_std[j] / s.sd[j];
    out.intercept -= out.beta[j] * s.mean[j];
  }
  return out;
}

}  // namespace detail

/**
 * Cyclic coordinate descent on (1/2n)||y - ybar - Z b||^2 + lambda ||b||_1,
 * Z the column-standardized X (population sd). Non-convergence is reported
 * through `warning`, with the last iterate returned.
 */
inline LassoResult lasso_fit(const Matrix& x, std::span<const double> y, double lambda, const LassoOptions& opt = {}) {
  if (x.rows() != y.size()) throw ShapeMismatch("lasso_fit: X has " + std::to_string(x.rows()) + " rows, y has " +
                                                std::to_string(y.size()));
  if (x.rows() < 2) throw DegenerateInput("lasso_fit: need n >= 2");
  if (!(lambda > 0.0)) throw RangeError("lasso_fit: lambda must be > 0");
  const auto s = column_standardization(x);
  return detail::lasso_on_columns(standardized_columns(x, s), s, y, lambda, opt);
}

struct BackprojectResult {
  Vector voxel_mean_abs_beta;  // per voxel, averaged over feature dimensions
  double low_level = 0.0;      // region means of the above
  double high_level = 0.0;
  std::vector<std::size_t> unconverged_features;
};

/**
 * Regresses every feature dimension on the voxels and averages |beta| over
 * features per voxel, then per region. Betas are taken on the standardized
 * voxel scale so voxels with different variances compare directly.
 */
inline BackprojectResult backproject(const Matrix& features, const Matrix& voxels, const RegionMask& mask,
                                     double lambda, const LassoOptions& opt = {}) {
  if (features.rows() != voxels.rows()) throw ShapeMismatch("backproject: features and voxels differ in sample count");
  if (voxels.cols() != mask.n_det()) throw ShapeMismatch("backproject: voxel width does not match mask");
  if (voxels.rows() < 2) throw DegenerateInput("backproject: need n >= 2");
  if (!(lambda > 0.0)) throw RangeError("backproject: lambda must be > 0");
  const auto s = column_standardization(voxels);
  const auto z = standardized_columns(voxels, s);
  BackprojectResult out;
  out.voxel_mean_abs_beta.assign(voxels.cols(), 0.0);
  Vector y(features.rows());
  for (std::size_t f = 0; f < features.cols(); ++f) {
    for (std::size_t i = 0; i < features.rows(); ++i) y[i] = features(i, f);
    LassoResult fit;
    try {
      fit = detail::lasso_on_columns(z, s, y, lambda, opt);
    } catch (const Error& e) {
      throw NumericalFailure("backproject: feature " + std::to_string(f) + ": " + e.what());
    }
    if (!fit.converged) out.unconverged_features.push_back(f);
    for (std::size_t v = 0; v < voxels.cols(); ++v) out.voxel_mean_abs_beta[v] += std::abs(fit.beta_std[v]);
  }
  for (double& b : out.voxel_mean_abs_beta) b /= static_cast<double>(features.cols());
  auto region_mean = [&](const std::vector<std::size_t>& idx) {
    double sum = 0.0;
    for (std::size_t v : idx) sum += out.voxel_mean_abs_beta[v];
    return idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
  };
  out.low_level = region_mean(mask.low_indices());
  out.high_level = region_mean(mask.high_indices());
  return out;
}

}  // namespace brainmclip
