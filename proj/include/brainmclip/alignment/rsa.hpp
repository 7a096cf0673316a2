#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "brainmclip/alignment/cka.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/core/linalg.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/core/stats.hpp"

namespace brainmclip {

/// Representational dissimilarity matrix, entries 1 - Pearson(stimulus_i, stimulus_j).
class Rdm {
 public:
  explicit Rdm(Matrix values) : values_(std::move(values)) {
    if (values_.rows() != values_.cols()) throw ShapeMismatch("Rdm: matrix not square");
  }

  std::size_t n() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

  /// Strictly-upper-triangular entries in row-major order.
  std::vector<double> upper_triangle() const {
    std::vector<double> out;
    out.reserve(n() * (n() - 1) / 2);
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = i + 1; j < n(); ++j) out.push_back(values_(i, j));
    return out;
  }

 private:
  Matrix values_;
};

/// Per-layer stimulus x flattened-embedding matrices with strictly increasing ids.
class LayerStack {
 public:
  LayerStack() = default;

  LayerStack(std::vector<int> layer_ids, std::vector<Matrix> layers)
      : ids_(std::move(layer_ids)), layers_(std::move(layers)) {
    if (ids_.size() != layers_.size()) throw ShapeMismatch("LayerStack: id/layer count mismatch");
    if (ids_.empty()) throw DegenerateInput("LayerStack: no layers");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (k > 0 && ids_[k] <= ids_[k - 1]) throw RangeError("LayerStack: layer ids must be strictly increasing");
      Matrix::require_same_shape(layers_[0], layers_[k], "LayerStack layer " + std::to_string(ids_[k]));
    }
  }

  std::size_t size() const noexcept { return layers_.size(); }
  const std::vector<int>& ids() const noexcept { return ids_; }
  const Matrix& layer(std::size_t k) const { return layers_.at(k); }
  const std::vector<Matrix>& layers() const noexcept { return layers_; }
  std::size_t n_stimuli() const { return layers_.empty() ? 0 : layers_[0].rows(); }
  std::size_t width() const { return layers_.empty() ? 0 : layers_[0].cols(); }

  /// Position of a layer id; throws RangeError when absent.
  std::size_t index_of(int id) const {
    for (std::size_t k = 0; k < ids_.size(); ++k)
      if (ids_[k] == id) return k;
    throw RangeError("LayerStack: layer " + std::to_string(id) + " not present");
  }

  const Matrix& by_id(int id) const { return layers_[index_of(id)]; }

  LayerStack select_rows(std::span<const std::size_t> idx) const {
    std::vector<Matrix> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(gather_rows(l, idx));
    return LayerStack(ids_, std::move(out));
  }

 private:
  std::vector<int> ids_;
  std::vector<Matrix> layers_;
};

inline Rdm rdm_from_features(const Matrix& f) {
  const std::size_t n = f.rows();
  if (n < 2) throw DegenerateInput("rdm_from_features: need at least 2 stimuli");
  // Standardize each row once so each entry is a single dot product.
  Matrix z(n, f.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto r = f.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    double ss = 0.0, q = 0.0;
    for (double v : r) {
      ss += (v - mean) * (v - mean);
      q += v * v;
    }
    if (r.size() < 2 || ss <= 1e-26 * q) {
      throw DegenerateInput("rdm_from_features: stimulus " + std::to_string(i) + " has a constant pattern");
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < r.size(); ++j) z(i, j) = (r[j] - mean) * inv;
  }
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double r = std::clamp(dot(z.row(i), z.row(j)), -1.0, 1.0);
      d(i, j) = d(j, i) = 1.0 - r;
    }
  }
  return Rdm(std::move(d));
}

/// Spearman correlation between the upper triangles of two RDMs.
inline double rsa(const Rdm& r1, const Rdm& r2) {
  if (r1.n() != r2.n()) {
    throw ShapeMismatch("rsa: RDM sizes differ (" + std::to_string(r1.n()) + " vs " + std::to_string(r2.n()) + ")");
  }
  if (r1.n() < 3) throw DegenerateInput("rsa: need at least 3 stimuli");
  return spearman(r1.upper_triangle(), r2.upper_triangle());
}

/// L x L matrix of cka(layer_i, layer_j); the diagonal is exactly 1.
inline Matrix layer_cka_heatmap(const LayerStack& stack) {
  const std::size_t l = stack.size();
  if (l < 2) throw DegenerateInput("layer_cka_heatmap: need at least 2 layers");
  Matrix h(l, l);
  for (std::size_t i = 0; i < l; ++i) {
    h(i, i) = 1.0;
    for (std::size_t j = i + 1; j < l; ++j) {
      try {
        h(i, j) = h(j, i) = cka(stack.layer(i), stack.layer(j));
      } catch (const DegenerateInput& e) {
        throw DegenerateInput("layer_cka_heatmap: layers " + std::to_string(stack.ids()[i]) + " and " +
                              std::to_string(stack.ids()[j]) + ": " + e.what());
      }
    }
  }
  return h;
}

struct RsaRaw {};
struct RsaRidge {
  double lambda = 1.0;
};
using RsaMode = std::variant<RsaRaw, RsaRidge>;

struct NamedFeatures {
  std::string name;
  Matrix features;
};

struct RsaEntry {
  std::string region;
  int layer = 0;
  double similarity = 0.0;
};

/**
 * Region x layer RSA table.
 *
 * Raw mode compares the region's own RDM against each layer's RDM. Ridge mode
 * fits region -> layer on even-indexed stimuli and compares RDMs of the
 * predicted vs actual layer features on odd-indexed stimuli.
 */
inline std::vector<RsaEntry> region_layer_rsa(const std::vector<NamedFeatures>& regions, const LayerStack& stack,
                                              const RsaMode& mode) {
  const std::size_t n = stack.n_stimuli();
  if (n < 3) throw DegenerateInput("region_layer_rsa: need at least 3 stimuli");
  for (const auto& r : regions) {
    if (r.features.rows() != n) throw ShapeMismatch("region_layer_rsa: region " + r.name + " stimulus count");
  }
  std::vector<RsaEntry> table;
  if (std::holds_alternative<RsaRaw>(mode)) {
    std::vector<Rdm> layer_rdms;
    for (const auto& l : stack.layers()) layer_rdms.push_back(rdm_from_features(l));
    for (const auto& r : regions) {
      const Rdm region_rdm = rdm_from_features(r.features);
      for (std::size_t k = 0; k < stack.size(); ++k) {
        table.push_back({r.name, stack.ids()[k], rsa(region_rdm, layer_rdms[k])});
      }
    }
    return table;
  }

  const double lambda = std::get<RsaRidge>(mode).lambda;
  std::vector<std::size_t> train_idx, eval_idx;
  for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? train_idx : eval_idx).push_back(i);
  if (eval_idx.size() < 3) throw DegenerateInput("region_layer_rsa: ridge split leaves fewer than 3 eval stimuli");
  for (const auto& r : regions) {
    const Matrix x_train = gather_rows(r.features, train_idx);
    const Matrix x_eval = gather_rows(r.features, eval_idx);
    for (std::size_t k = 0; k < stack.size(); ++k) {
      const Matrix y_train = gather_rows(stack.layer(k), train_idx);
      const Matrix y_eval = gather_rows(stack.layer(k), eval_idx);
      const Matrix w = ridge_solve(x_train, y_train, lambda);
      const Matrix predicted = matmul(x_eval, w);
      table.push_back({r.name, stack.ids()[k], rsa(rdm_from_features(predicted), rdm_from_features(y_eval))});
    }
  }
  return table;
}

}  // namespace brainmclip
