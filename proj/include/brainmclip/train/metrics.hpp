#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/core/stats.hpp"

namespace brainmclip {

/// Pearson correlation of the flattened values.
inline double pixcorr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeMismatch("pixcorr: length mismatch");
  if (a.size() < 2) throw DegenerateInput("pixcorr: need at least 2 values");
  return pearson(a, b);
}

namespace detail {

inline constexpr std::size_t kSsimWindow = 11;

inline std::array<double, kSsimWindow * kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  constexpr double sigma = 1.5;
  const double c = (kSsimWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    for (std::size_t j = 0; j < kSsimWindow; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      w[i * kSsimWindow + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      total += w[i * kSsimWindow + j];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

/**
 * Mean local SSIM over every fully contained 11x11 Gaussian window
 * (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2.
 */
inline double ssim(const Matrix& a, const Matrix& b, double value_range) {
  Matrix::require_same_shape(a, b, "ssim");
  constexpr std::size_t win = detail::kSsimWindow;
  if (a.rows() < win || a.cols() < win) {
    throw DegenerateInput("ssim: image " + Matrix::shape_string(a) + " is smaller than the 11x11 window");
  }
  if (!(value_range > 0.0)) throw DegenerateInput("ssim: value range must be positive");
  static const auto w = detail::ssim_kernel();
  const double c1 = (0.01 * value_range) * (0.01 * value_range);
  const double c2 = (0.03 * value_range) * (0.03 * value_range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r0 = 0; r0 + win <= a.rows(); ++r0) {
    for (std::size_t c0 = 0; c0 + win <= a.cols(); ++c0) {
      double mu_a = 0.0, mu_b = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          const double k = w[i * win + j];
          const double x = a(r0 + i, c0 + j), y = b(r0 + i, c0 + j);
          mu_a += k * x;
          mu_b += k * y;
          saa += k * x * x;
          sbb += k * y * y;
          sab += k * x * y;
        }
      }
      const double var_a = saa - mu_a * mu_a;
      const double var_b = sbb - mu_b * mu_b;
      const double cov = sab - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

enum class Similarity { pearson, cosine };

inline Similarity similarity_from_string(std::string_view s) {
  if (s == "pearson") return Similarity::pearson;
  if (s == "cosine") return Similarity::cosine;
  throw UsageError("unknown similarity '" + std::string(s) + "'");
}

/**
 * Percentage of ordered pairs (i, j), i != j, where prediction i is more
 * similar to truth i than to truth j. Ties count one half.
 */
inline double two_way_identification(const Matrix& preds, const Matrix& truths, Similarity sim = Similarity::pearson) {
  Matrix::require_same_shape(preds, truths, "two_way_identification");
  const std::size_t n = preds.rows();
  if (n < 2) throw DegenerateInput("two_way_identification: need at least 2 samples");
  auto score = [&](std::size_t i, std::size_t j) {
    return sim == Similarity::pearson ? pearson(preds.row(i), truths.row(j)) : cosine(preds.row(i), truths.row(j));
  };
  double wins = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double own = score(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = score(i, j);
      if (own > other) wins += 1.0;
      else if (own == other) wins += 0.5;
    }
  }
  return 100.0 * wins / static_cast<double>(n * (n - 1));
}

}  // namespace brainmclip
