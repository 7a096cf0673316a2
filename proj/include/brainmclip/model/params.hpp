#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/core/rng.hpp"

namespace brainmclip {

/**
 * Network dimensions. Desk-scale defaults; the full-scale setting uses
 * 77x768 text tokens and 257x768 image tokens.
 */
struct ModelConfig {
  std::size_t n_sem = 60;    // N_S, high-level voxel count
  std::size_t n_det = 140;   // N_D, all voxels
  std::size_t latent_dim = 128;
  std::size_t m_text = 8;
  std::size_t d_text = 16;
  std::size_t m_img = 12;
  std::size_t d_img = 16;
  double dropout_codec = 0.15;
  double dropout_backbone = 0.5;

  std::size_t text_width() const { return m_text * d_text; }
  std::size_t image_width() const { return m_img * d_img; }

  void validate() const {
    for (auto [v, name] : {std::pair{n_sem, "n_sem"}, std::pair{n_det, "n_det"}, std::pair{latent_dim, "latent_dim"},
                           std::pair{m_text, "m_text"}, std::pair{d_text, "d_text"}, std::pair{m_img, "m_img"},
                           std::pair{d_img, "d_img"}}) {
      if (v < 1) throw UsageError(std::string("model.") + name + " must be >= 1");
    }
    if (m_text < 2 || m_img < 2) throw UsageError("model.m_text and model.m_img must be >= 2 (token losses)");
    if (!(dropout_codec >= 0.0 && dropout_codec < 1.0)) throw UsageError("model.dropout_codec must be in [0, 1)");
    if (!(dropout_backbone >= 0.0 && dropout_backbone < 1.0)) {
      throw UsageError("model.dropout_backbone must be in [0, 1)");
    }
  }
};

/// Which sub-networks exist and are trained.
enum class ModelVariant { text_only, text_semantic, text_detail, full_no_crec, full };

inline const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::text_only: return "text_only";
    case ModelVariant::text_semantic: return "text+semantic";
    case ModelVariant::text_detail: return "text+detail";
    case ModelVariant::full_no_crec: return "full_no_crec";
    case ModelVariant::full: return "full";
  }
  return "?";
}

inline ModelVariant variant_from_string(std::string_view s) {
  for (auto v : {ModelVariant::text_only, ModelVariant::text_semantic, ModelVariant::text_detail,
                 ModelVariant::full_no_crec, ModelVariant::full}) {
    if (s == to_string(v)) return v;
  }
  throw UsageError("unknown variant '" + std::string(s) + "'");
}

inline bool has_image_branch(ModelVariant v) { return v != ModelVariant::text_only; }
inline bool has_semantic_path(ModelVariant v) { return v != ModelVariant::text_only && v != ModelVariant::text_detail; }
inline bool has_detail_path(ModelVariant v) { return v != ModelVariant::text_only && v != ModelVariant::text_semantic; }
inline bool has_fmri_decoders(ModelVariant v) { return v == ModelVariant::full || v == ModelVariant::full_no_crec; }

/// Affine layer y = x W + b with W of shape in x out and b of shape 1 x out.
struct Dense {
  Matrix weight;
  Matrix bias;

  bool empty() const { return weight.empty(); }
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  static Dense zeros(std::size_t in, std::size_t out) { return {Matrix(in, out), Matrix(1, out)}; }

  /// Glorot-uniform weights, zero bias.
  static Dense glorot(std::size_t in, std::size_t out, Rng rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    return {rng.uniform_matrix(in, out, -a, a), Matrix(1, out)};
  }
};

struct TextBranchParams {
  Dense encoder;  // E_S
  Dense decoder;  // D_S
  Dense block1;
  Dense block2;
  Dense head;  // D_T
};

struct ImageBranchParams {
  Dense sem_encoder;  // E_IS
  Dense det_encoder;  // E_ID
  Dense sem_decoder;  // D_IS
  Dense det_decoder;  // D_ID
  Dense block1;       // backbone, shared by both paths
  Dense block2;
  Dense head;  // D_I, shared by both paths
};

struct ModelParams {
  ModelConfig config;
  ModelVariant variant = ModelVariant::full;
  TextBranchParams text;
  ImageBranchParams image;
};

/// Gradients have exactly the layout of the parameters they belong to.
using ParamGrads = ModelParams;

/// Calls f(name, dense) for every present layer, in a fixed order.
template <class Params, class F>
void for_each_layer(Params& p, F&& f) {
  auto visit = [&](const char* name, auto& d) {
    if (!d.empty()) f(std::string_view(name), d);
  };
  visit("text.encoder", p.text.encoder);
  visit("text.decoder", p.text.decoder);
  visit("text.block1", p.text.block1);
  visit("text.block2", p.text.block2);
  visit("text.head", p.text.head);
  visit("image.sem_encoder", p.image.sem_encoder);
  visit("image.det_encoder", p.image.det_encoder);
  visit("image.sem_decoder", p.image.sem_decoder);
  visit("image.det_decoder", p.image.det_decoder);
  visit("image.block1", p.image.block1);
  visit("image.block2", p.image.block2);
  visit("image.head", p.image.head);
}

/// Calls f(tensor_name, matrix) for every weight and bias tensor.
template <class Params, class F>
void for_each_tensor(Params& p, F&& f) {
  for_each_layer(p, [&](std::string_view layer, auto& d) {
    f(std::string(layer) + ".weight", d.weight);
    f(std::string(layer) + ".bias", d.bias);
  });
}

namespace detail {

template <class Make>
ModelParams build_params(const ModelConfig& cfg, ModelVariant variant, Make&& make) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.variant = variant;
  const std::size_t h = cfg.latent_dim;
  p.text.encoder = make("text.encoder", cfg.n_sem, h);
  p.text.decoder = make("text.decoder", h, cfg.n_sem);
  p.text.block1 = make("text.block1", h, h);
  p.text.block2 = make("text.block2", h, h);
  p.text.head = make("text.head", h, cfg.text_width());
  if (has_image_branch(variant)) {
    if (has_semantic_path(variant)) p.image.sem_encoder = make("image.sem_encoder", cfg.n_sem, h);
    if (has_detail_path(variant)) p.image.det_encoder = make("image.det_encoder", cfg.n_det, h);
    if (has_fmri_decoders(variant)) {
      p.image.sem_decoder = make("image.sem_decoder", h, cfg.n_sem);
      p.image.det_decoder = make("image.det_decoder", h, cfg.n_det);
    }
    p.image.block1 = make("image.block1", h, h);
    p.image.block2 = make("image.block2", h, h);
    p.image.head = make("image.head", h, cfg.image_width());
  }
  return p;
}

}  // namespace detail

/// Glorot-uniform initialization; each layer draws from its own labelled stream.
inline ModelParams init_params(const ModelConfig& cfg, Rng rng, ModelVariant variant = ModelVariant::full) {
  return detail::build_params(cfg, variant, [&](const char* name, std::size_t in, std::size_t out) {
    return Dense::glorot(in, out, rng.child(name));
  });
}

inline ModelParams zero_params(const ModelConfig& cfg, ModelVariant variant = ModelVariant::full) {
  return detail::build_params(cfg, variant,
                              [](const char*, std::size_t in, std::size_t out) { return Dense::zeros(in, out); });
}

/// Zero-valued gradient buffer with the layout of p.
inline ParamGrads zeros_like(const ModelParams& p) {
  ParamGrads g = p;
  for_each_tensor(g, [](const std::string&, Matrix& m) { m = Matrix(m.rows(), m.cols()); });
  return g;
}

/// Total weight + bias element count of the architecture.
inline std::size_t param_count(const ModelConfig& cfg, ModelVariant variant = ModelVariant::full) {
  std::size_t total = 0;
  auto count = [&](std::size_t in, std::size_t out) { total += in * out + out; };
  const std::size_t h = cfg.latent_dim;
  count(cfg.n_sem, h);
  count(h, cfg.n_sem);
  count(h, h);
  count(h, h);
  count(h, cfg.text_width());
  if (has_image_branch(variant)) {
    if (has_semantic_path(variant)) count(cfg.n_sem, h);
    if (has_detail_path(variant)) count(cfg.n_det, h);
    if (has_fmri_decoders(variant)) {
      count(h, cfg.n_sem);
      count(h, cfg.n_det);
    }
    count(h, h);
    count(h, h);
    count(h, cfg.image_width());
  }
  return total;
}

}  // namespace brainmclip
