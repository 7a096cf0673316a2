#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "brainmclip/alignment/rsa.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/core/rng.hpp"

namespace brainmclip {

enum class Region { low_level, high_level };

inline const char* to_string(Region r) { return r == Region::low_level ? "low_level" : "high_level"; }

/// Per-voxel region labels. F_S is the high-level subset; F_D is every voxel.
class RegionMask {
 public:
  RegionMask() = default;
  explicit RegionMask(std::vector<Region> labels) : labels_(std::move(labels)) {
    for (std::size_t v = 0; v < labels_.size(); ++v) (labels_[v] == Region::high_level ? high_ : low_).push_back(v);
  }

  std::size_t n_det() const noexcept { return labels_.size(); }
  std::size_t n_sem() const noexcept { return high_.size(); }
  std::size_t n_low() const noexcept { return low_.size(); }
  const std::vector<Region>& labels() const noexcept { return labels_; }
  const std::vector<std::size_t>& high_indices() const noexcept { return high_; }
  const std::vector<std::size_t>& low_indices() const noexcept { return low_; }

  friend bool operator==(const RegionMask& a, const RegionMask& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<Region> labels_;
  std::vector<std::size_t> low_, high_;
};

struct RegionSplit {
  Vector f_sem;
  Vector f_det;
};

inline RegionSplit split_regions(std::span<const double> voxels, const RegionMask& mask) {
  if (voxels.size() != mask.n_det()) {
    throw ShapeMismatch("split_regions: voxel vector has " + std::to_string(voxels.size()) + " entries, mask has " +
                        std::to_string(mask.n_det()));
  }
  RegionSplit out;
  out.f_det.assign(voxels.begin(), voxels.end());
  out.f_sem.reserve(mask.n_sem());
  for (std::size_t v : mask.high_indices()) out.f_sem.push_back(voxels[v]);
  return out;
}

/// Columns of a stimulus x voxel matrix restricted to one region.
inline Matrix region_columns(const Matrix& voxels, const RegionMask& mask, Region r) {
  if (voxels.cols() != mask.n_det()) throw ShapeMismatch("region_columns: voxel width does not match mask");
  const auto& idx = r == Region::high_level ? mask.high_indices() : mask.low_indices();
  if (idx.empty()) throw DegenerateInput(std::string("region_columns: region ") + to_string(r) + " is empty");
  Matrix out(voxels.rows(), idx.size());
  for (std::size_t i = 0; i < voxels.rows(); ++i)
    for (std::size_t k = 0; k < idx.size(); ++k) out(i, k) = voxels(i, idx[k]);
  return out;
}

/// E_T: elementwise mean of the per-caption embeddings.
inline Matrix average_captions(const std::vector<Matrix>& embs) {
  if (embs.empty()) throw DegenerateInput("average_captions: no captions");
  Matrix sum = embs.front();
  for (std::size_t k = 1; k < embs.size(); ++k) sum += embs[k];
  sum *= 1.0 / static_cast<double>(embs.size());
  return sum;
}

struct LayerRange {
  int lo = 0;
  int hi = 0;
};

/// Mean of layers lo..hi (inclusive, by layer id) for every stimulus.
inline Matrix average_layers(const LayerStack& stack, LayerRange range) {
  if (range.lo > range.hi) throw RangeError("average_layers: lo > hi");
  const std::size_t first = stack.index_of(range.lo);
  const std::size_t last = stack.index_of(range.hi);
  Matrix sum = stack.layer(first);
  for (std::size_t k = first + 1; k <= last; ++k) sum += stack.layer(k);
  sum *= 1.0 / static_cast<double>(last - first + 1);
  return sum;
}

/// e_{I,D} of one stimulus as a tokens x dims matrix.
inline Matrix average_layers(const LayerStack& stack, std::size_t stimulus, LayerRange range, std::size_t tokens,
                             std::size_t dims) {
  return average_layers(stack, range).row_matrix(stimulus).reshaped(tokens, dims);
}

/// E_I = (e_D + e_S) / 2.
inline Matrix fuse_targets(const Matrix& e_det, const Matrix& e_sem) {
  Matrix::require_same_shape(e_det, e_sem, "fuse_targets");
  return (e_det + e_sem) * 0.5;
}

/**
 * Generator settings. Voxels and layer targets are linear in three latent
 * factor blocks: z_det (detail), z_sem (semantic) and z_nuis, a stimulus
 * feature that appears in every non-final layer but in no voxel.
 */
struct SynthConfig {
  std::size_t n_train = 512;
  std::size_t n_test = 64;
  std::size_t n_low = 80;
  std::size_t n_high = 60;
  std::size_t k_sem = 4;
  std::size_t k_det = 12;
  std::size_t k_nuis = 8;
  std::size_t n_layers = 8;
  std::vector<double> alpha;  // detail weight per layer; empty = linear from 1 down to 0
  std::size_t m_text = 8;
  std::size_t d_text = 16;
  std::size_t m_img = 12;
  std::size_t d_img = 16;
  double voxel_noise = 0.1;
  double layer_noise = 0.1;
  double nuisance_std = 1.0;
  double caption_noise = 3.0;
  std::size_t max_captions = 5;
  std::uint64_t seed = 0;

  std::vector<double> resolved_alpha() const {
    if (!alpha.empty()) return alpha;
    std::vector<double> a(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      a[l] = static_cast<double>(n_layers - 1 - l) / static_cast<double>(n_layers - 1);
    }
    return a;
  }

  void validate() const {
    if (n_train + n_test < 2) throw UsageError("synth: need at least 2 stimuli");
    if (n_high < 1) throw UsageError("synth.n_high must be >= 1");
    if (k_sem < 1 || k_det < 1) throw UsageError("synth.k_sem and synth.k_det must be >= 1");
    if (n_layers < 2) throw UsageError("synth.n_layers must be >= 2");
    if (m_text < 2 || m_img < 2 || d_text < 1 || d_img < 1) throw UsageError("synth: bad embedding dimensions");
    if (max_captions < 1) throw UsageError("synth.max_captions must be >= 1");
    for (double s : {voxel_noise, layer_noise, nuisance_std, caption_noise}) {
      if (!(s >= 0.0)) throw UsageError("synth: noise levels must be >= 0");
    }
    const auto a = resolved_alpha();
    if (a.size() != n_layers) throw UsageError("synth.alpha: expected " + std::to_string(n_layers) + " values");
    for (std::size_t l = 0; l < a.size(); ++l) {
      if (!(a[l] >= 0.0 && a[l] <= 1.0)) throw UsageError("synth.alpha: values must lie in [0, 1]");
      if (l > 0 && !(a[l] < a[l - 1])) throw UsageError("synth.alpha: schedule must be strictly decreasing");
    }
    if (a.back() != 0.0) throw UsageError("synth.alpha: final layer must have alpha = 0");
  }
};

/// One stimulus: its voxel pattern, caption embeddings and per-layer targets.
struct BrainSample {
  std::size_t id = 0;
  Vector voxels;
  std::vector<Matrix> captions;
  std::vector<Matrix> layer_targets;  // tokens x dims, one per layer
};

struct Dataset {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  std::size_t m_text = 0, d_text = 0, m_img = 0, d_img = 0;
  RegionMask mask;
  Matrix voxels;  // stimuli x N_D
  LayerStack layers;
  std::vector<std::vector<Matrix>> captions;  // per stimulus, each m_text x d_text

  std::size_t size() const { return n_train + n_test; }
  int final_layer() const { return layers.ids().back(); }

  BrainSample sample(std::size_t i) const {
    BrainSample s;
    s.id = i;
    auto r = voxels.row(i);
    s.voxels.assign(r.begin(), r.end());
    s.captions = captions.at(i);
    for (const auto& l : layers.layers()) s.layer_targets.push_back(l.row_matrix(i).reshaped(m_img, d_img));
    return s;
  }
};

inline Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  const std::size_t n = cfg.n_train + cfg.n_test;
  const std::size_t n_vox = cfg.n_low + cfg.n_high;
  const std::size_t w_img = cfg.m_img * cfg.d_img;
  const std::size_t width_txt = cfg.m_text * cfg.d_text;
  const auto alpha = cfg.resolved_alpha();

  // Voxel order is a seeded shuffle of the region labels.
  std::vector<Region> labels(n_vox, Region::high_level);
  std::fill_n(labels.begin(), cfg.n_low, Region::low_level);
  {
    Rng r = root.child("mask");
    for (std::size_t i = n_vox; i > 1; --i) std::swap(labels[i - 1], labels[r.below(i)]);
  }
  Dataset ds;
  ds.n_train = cfg.n_train;
  ds.n_test = cfg.n_test;
  ds.seed = cfg.seed;
  ds.m_text = cfg.m_text;
  ds.d_text = cfg.d_text;
  ds.m_img = cfg.m_img;
  ds.d_img = cfg.d_img;
  ds.mask = RegionMask(labels);

  auto mixing = [&](const char* label, std::size_t rows, std::size_t k, double scale) {
    Rng r = root.child(label);
    return k == 0 ? Matrix() : r.normal_matrix(rows, k, scale);
  };
  const Matrix a_low = mixing("mix.low", std::max<std::size_t>(cfg.n_low, 1), cfg.k_det, 1.0);
  const Matrix a_high = mixing("mix.high", cfg.n_high, cfg.k_sem, 1.0);
  const Matrix w_det = mixing("proj.det", w_img, cfg.k_det, 1.0 / std::sqrt(static_cast<double>(cfg.k_det)));
  const Matrix w_sem = mixing("proj.sem", w_img, cfg.k_sem, 1.0 / std::sqrt(static_cast<double>(cfg.k_sem)));
  const Matrix w_nuis = mixing("proj.nuis", w_img, cfg.k_nuis,
                               cfg.k_nuis ? 1.0 / std::sqrt(static_cast<double>(cfg.k_nuis)) : 0.0);
  const Matrix w_txt = mixing("proj.text", width_txt, cfg.k_sem, 1.0 / std::sqrt(static_cast<double>(cfg.k_sem)));

  auto project = [](const Matrix& w, const Vector& z, std::size_t i) {
    double s = 0.0;
    auto r = w.row(i);
    for (std::size_t k = 0; k < z.size(); ++k) s += r[k] * z[k];
    return s;
  };

  ds.voxels = Matrix(n, n_vox);
  std::vector<Matrix> layers(cfg.n_layers, Matrix(n, w_img));
  ds.captions.resize(n);
  const Rng stimuli = root.child("stimuli");
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = stimuli.child(static_cast<std::uint64_t>(i));
    Vector z_det(cfg.k_det), z_sem(cfg.k_sem), z_nuis(cfg.k_nuis);
    for (double& v : z_det) v = r.normal();
    for (double& v : z_sem) v = r.normal();
    for (double& v : z_nuis) v = r.normal();

    const auto& low = ds.mask.low_indices();
    const auto& high = ds.mask.high_indices();
    for (std::size_t k = 0; k < low.size(); ++k) {
      ds.voxels(i, low[k]) = project(a_low, z_det, k) + cfg.voxel_noise * r.normal();
    }
    for (std::size_t k = 0; k < high.size(); ++k) {
      ds.voxels(i, high[k]) = project(a_high, z_sem, k) + cfg.voxel_noise * r.normal();
    }

    for (std::size_t e = 0; e < w_img; ++e) {
      const double det = project(w_det, z_det, e);
      const double sem = project(w_sem, z_sem, e);
      const double nuis = cfg.k_nuis ? project(w_nuis, z_nuis, e) : 0.0;
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const bool final_layer = l + 1 == cfg.n_layers;
        double v = alpha[l] * det + (1.0 - alpha[l]) * sem;
        if (!final_layer) v += cfg.nuisance_std * nuis;
        layers[l](i, e) = v + cfg.layer_noise * r.normal();
      }
    }

    const std::size_t n_caps = 1 + r.below(cfg.max_captions);
    for (std::size_t c = 0; c < n_caps; ++c) {
      Matrix cap(cfg.m_text, cfg.d_text);
      for (std::size_t e = 0; e < width_txt; ++e) cap.values()[e] = project(w_txt, z_sem, e) + cfg.caption_noise * r.normal();
      ds.captions[i].push_back(std::move(cap));
    }
  }
  std::vector<int> ids(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) ids[l] = static_cast<int>(l + 1);
  ds.layers = LayerStack(std::move(ids), std::move(layers));
  return ds;
}

/// Everything the trainer consumes, one row per stimulus.
struct TrainingTargets {
  Matrix f_sem;     // F_S
  Matrix f_det;     // F_D
  Matrix text;      // E_T, flattened
  Matrix semantic;  // e_{I,S}, flattened
  Matrix detail;    // e_{I,D}, flattened
  Matrix fused;     // E_I, flattened
};

/**
 * Builds training targets from a dataset. e_{I,D} averages the given layer
 * range; e_{I,S} is the final layer. With include_final = false the final
 * layer is left out entirely and both image targets equal the range average.
 */
inline TrainingTargets build_targets(const Dataset& ds, LayerRange range, bool include_final = true) {
  TrainingTargets t;
  t.f_det = ds.voxels;
  t.f_sem = region_columns(ds.voxels, ds.mask, Region::high_level);
  t.text = Matrix(ds.size(), ds.m_text * ds.d_text);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Matrix avg = average_captions(ds.captions.at(i));
    std::copy(avg.values().begin(), avg.values().end(), t.text.row(i).begin());
  }
  t.detail = average_layers(ds.layers, range);
  t.semantic = include_final ? ds.layers.by_id(ds.final_layer()) : t.detail;
  t.fused = fuse_targets(t.detail, t.semantic);
  return t;
}

inline TrainingTargets select_rows(const TrainingTargets& t, std::span<const std::size_t> idx) {
  return {gather_rows(t.f_sem, idx),    gather_rows(t.f_det, idx),  gather_rows(t.text, idx),
          gather_rows(t.semantic, idx), gather_rows(t.detail, idx), gather_rows(t.fused, idx)};
}

inline std::vector<std::size_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = begin + k;
  return idx;
}

inline std::vector<std::size_t> train_indices(const Dataset& ds) { return index_range(0, ds.n_train); }
inline std::vector<std::size_t> test_indices(const Dataset& ds) { return index_range(ds.n_train, ds.size()); }

}  // namespace brainmclip
