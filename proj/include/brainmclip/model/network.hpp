#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/core/rng.hpp"
#include "brainmclip/losses/losses.hpp"
#include "brainmclip/model/params.hpp"

namespace brainmclip {

enum class Activation { relu, linear };

struct BlockSpec {
  Activation activation = Activation::relu;
  bool residual = false;
  double dropout = 0.0;
};

/**
 * Train mode carries the dropout stream; each layer draws its mask from a
 * child stream keyed by the layer's label, so masks do not depend on call order.
 */
class ForwardMode {
 public:
  static ForwardMode infer() { return ForwardMode(std::nullopt); }
  static ForwardMode train(Rng rng) { return ForwardMode(std::move(rng)); }

  bool training() const noexcept { return rng_.has_value(); }
  Rng stream(std::string_view label) const { return rng_->child(label); }

 private:
  explicit ForwardMode(std::optional<Rng> rng) : rng_(std::move(rng)) {}
  std::optional<Rng> rng_;
};

/// What the backward pass needs from one block evaluation.
struct LayerTape {
  Matrix input;
  Matrix pre;   // x W + b
  Matrix mask;  // inverted-dropout multipliers; empty when no mask was drawn
  BlockSpec spec;
  bool training = false;
};

struct BlockOutput {
  Matrix y;
  LayerTape tape;
};

/**
 * y = x + dropout(act(x W + b)) for residual blocks, y = dropout(act(x W + b))
 * otherwise. Training multiplies kept units by 1/(1-p); inference applies no mask.
 */
inline BlockOutput mlp_block_forward(const Matrix& x, const Dense& layer, BlockSpec spec, const ForwardMode& mode,
                                     std::string_view label = "block") {
  if (x.cols() != layer.in_dim()) {
    throw ShapeMismatch(std::string(label) + ": input width " + std::to_string(x.cols()) + " != layer input " +
                        std::to_string(layer.in_dim()));
  }
  if (spec.residual && layer.in_dim() != layer.out_dim()) {
    throw ShapeMismatch(std::string(label) + ": residual block needs equal input and output widths");
  }
  Matrix pre = matmul(x, layer.weight);
  for (std::size_t i = 0; i < pre.rows(); ++i) {
    auto r = pre.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias(0, j);
  }
  Matrix y = pre;
  if (spec.activation == Activation::relu) {
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  }
  Matrix mask;
  if (mode.training() && spec.dropout > 0.0) {
    Rng rng = mode.stream(label);
    mask = Matrix(y.rows(), y.cols());
    const double keep_scale = 1.0 / (1.0 - spec.dropout);
    for (double& m : mask.values()) m = rng.uniform() >= spec.dropout ? keep_scale : 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) y.values()[k] *= mask.values()[k];
  }
  if (spec.residual) y += x;
  return {std::move(y), LayerTape{x, std::move(pre), std::move(mask), spec, mode.training()}};
}

/// Accumulates dW, db into grad and returns dL/dx.
inline Matrix mlp_block_backward(const LayerTape& tape, const Matrix& dy, const Dense& layer, Dense& grad,
                                 std::string_view label = "block") {
  if (tape.training && tape.spec.dropout > 0.0 && tape.mask.empty()) {
    throw InvalidState(std::string(label) + ": training-mode tape has no dropout mask");
  }
  Matrix::require_same_shape(dy, tape.pre, std::string(label) + " backward");
  Matrix dz = dy;
  if (!tape.mask.empty()) {
    for (std::size_t k = 0; k < dz.size(); ++k) dz.values()[k] *= tape.mask.values()[k];
  }
  if (tape.spec.activation == Activation::relu) {
    for (std::size_t k = 0; k < dz.size(); ++k) {
      if (!(tape.pre.values()[k] > 0.0)) dz.values()[k] = 0.0;
    }
  }
  grad.weight += matmul_tn(tape.input, dz);
  for (std::size_t i = 0; i < dz.rows(); ++i) {
    auto r = dz.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) grad.bias(0, j) += r[j];
  }
  Matrix dx = matmul_nt(dz, layer.weight);
  if (tape.spec.residual) dx += dy;
  return dx;
}

inline BlockSpec encoder_spec(const ModelConfig& c) { return {Activation::relu, false, c.dropout_codec}; }
inline BlockSpec backbone_spec(const ModelConfig& c) { return {Activation::relu, true, c.dropout_backbone}; }
inline BlockSpec linear_spec() { return {Activation::linear, false, 0.0}; }

struct TextOutputs {
  Matrix code;   // b_S
  Matrix recon;  // reconstructed F_S
  Matrix pred;   // predicted text embedding, one flattened m_text x d_text row per sample
  LayerTape encoder, decoder, block1, block2, head;
};

struct ImageOutputs {
  Matrix code_sem;  // b_IS
  Matrix code_det;  // b_ID
  CrecReconstructions recon;
  Matrix pred_sem;    // e_IS prediction
  Matrix pred_det;    // e_ID prediction
  Matrix pred_fused;  // E_I prediction = (pred_sem + pred_det) / 2
  LayerTape sem_encoder, det_encoder;
  LayerTape sem_block1, sem_block2, sem_head, det_block1, det_block2, det_head;
  LayerTape dec_sem_direct, dec_det_from_sem, dec_det_direct, dec_sem_from_det;
};

struct ForwardOutputs {
  bool training = false;
  TextOutputs text;
  std::optional<ImageOutputs> image;
};

/// Rows of f_sem are samples. Computes b_S, the F_S reconstruction and the text embedding.
inline TextOutputs text_branch_forward(const Matrix& f_sem, const ModelParams& p, const ForwardMode& mode) {
  const auto& c = p.config;
  const auto& t = p.text;
  TextOutputs out;
  auto enc = mlp_block_forward(f_sem, t.encoder, encoder_spec(c), mode, "text.encoder");
  auto dec = mlp_block_forward(enc.y, t.decoder, linear_spec(), mode, "text.decoder");
  auto b1 = mlp_block_forward(enc.y, t.block1, backbone_spec(c), mode, "text.block1");
  auto b2 = mlp_block_forward(b1.y, t.block2, backbone_spec(c), mode, "text.block2");
  auto head = mlp_block_forward(b2.y, t.head, linear_spec(), mode, "text.head");
  out.code = std::move(enc.y);
  out.recon = std::move(dec.y);
  out.pred = std::move(head.y);
  out.encoder = std::move(enc.tape);
  out.decoder = std::move(dec.tape);
  out.block1 = std::move(b1.tape);
  out.block2 = std::move(b2.tape);
  out.head = std::move(head.tape);
  return out;
}

/**
 * Both image paths: codes b_IS = E_IS(F_S) and b_ID = E_ID(F_D), direct and
 * cross reconstructions through D_IS / D_ID, and per-path embeddings through
 * the shared backbone and head. Paths or decoders absent from the variant are
 * skipped and their outputs left empty.
 */
inline ImageOutputs image_branch_forward(const Matrix& f_sem, const Matrix& f_det, const ModelParams& p,
                                         const ForwardMode& mode) {
  const auto& c = p.config;
  const auto& im = p.image;
  if (!has_image_branch(p.variant)) throw InvalidState("image_branch_forward: variant has no image branch");
  ImageOutputs out;

  auto run_path = [&](const Matrix& code, const char* tag, LayerTape& t1, LayerTape& t2, LayerTape& th) {
    const std::string prefix = std::string("image.") + tag;
    auto b1 = mlp_block_forward(code, im.block1, backbone_spec(c), mode, prefix + ".block1");
    auto b2 = mlp_block_forward(b1.y, im.block2, backbone_spec(c), mode, prefix + ".block2");
    auto head = mlp_block_forward(b2.y, im.head, linear_spec(), mode, prefix + ".head");
    t1 = std::move(b1.tape);
    t2 = std::move(b2.tape);
    th = std::move(head.tape);
    return std::move(head.y);
  };
  auto decode = [&](const Matrix& code, const Dense& d, const char* label, LayerTape& tape) {
    auto r = mlp_block_forward(code, d, linear_spec(), mode, label);
    tape = std::move(r.tape);
    return std::move(r.y);
  };

  if (!im.sem_encoder.empty()) {
    auto enc = mlp_block_forward(f_sem, im.sem_encoder, encoder_spec(c), mode, "image.sem_encoder");
    out.code_sem = std::move(enc.y);
    out.sem_encoder = std::move(enc.tape);
    out.pred_sem = run_path(out.code_sem, "sem", out.sem_block1, out.sem_block2, out.sem_head);
  }
  if (!im.det_encoder.empty()) {
    auto enc = mlp_block_forward(f_det, im.det_encoder, encoder_spec(c), mode, "image.det_encoder");
    out.code_det = std::move(enc.y);
    out.det_encoder = std::move(enc.tape);
    out.pred_det = run_path(out.code_det, "det", out.det_block1, out.det_block2, out.det_head);
  }
  if (!im.sem_decoder.empty() && !im.det_decoder.empty()) {
    out.recon.sem_direct = decode(out.code_sem, im.sem_decoder, "image.sem_decoder.direct", out.dec_sem_direct);
    out.recon.det_from_sem = decode(out.code_sem, im.det_decoder, "image.det_decoder.cross", out.dec_det_from_sem);
    out.recon.det_direct = decode(out.code_det, im.det_decoder, "image.det_decoder.direct", out.dec_det_direct);
    out.recon.sem_from_det = decode(out.code_det, im.sem_decoder, "image.sem_decoder.cross", out.dec_sem_from_det);
  }
  if (!out.pred_sem.empty() && !out.pred_det.empty()) {
    out.pred_fused = (out.pred_sem + out.pred_det) * 0.5;
  } else {
    out.pred_fused = out.pred_sem.empty() ? out.pred_det : out.pred_sem;
  }
  return out;
}

inline ForwardOutputs model_forward(const Matrix& f_sem, const Matrix& f_det, const ModelParams& p,
                                    const ForwardMode& mode) {
  if (f_sem.cols() != p.config.n_sem) throw ShapeMismatch("model_forward: F_S width does not match n_sem");
  if (f_det.cols() != p.config.n_det) throw ShapeMismatch("model_forward: F_D width does not match n_det");
  if (f_sem.rows() != f_det.rows()) throw ShapeMismatch("model_forward: F_S and F_D sample counts differ");
  ForwardOutputs out;
  out.training = mode.training();
  out.text = text_branch_forward(f_sem, p, mode);
  if (has_image_branch(p.variant)) out.image = image_branch_forward(f_sem, f_det, p, mode);
  return out;
}

/// Upstream gradients for every model output; empty matrices mean zero.
struct UpstreamGrads {
  Matrix text_pred;
  Matrix text_recon;
  Matrix image_sem;
  Matrix image_det;
  Matrix image_fused;  // distributed 1/2 to each path (or wholly to the single active path)
  CrecReconstructions image_recon;
};

namespace detail {

inline void accumulate(Matrix& into, const Matrix& g) {
  if (g.empty()) return;
  if (into.empty()) {
    into = g;
  } else {
    into += g;
  }
}

}  // namespace detail

/// Reverse pass through the recorded tapes; returns gradients for every present parameter.
inline ParamGrads model_backward(const ForwardOutputs& out, const UpstreamGrads& up, const ModelParams& p) {
  ParamGrads g = zeros_like(p);
  {
    const auto& t = out.text;
    Matrix d_code;
    if (!up.text_pred.empty()) {
      Matrix d = mlp_block_backward(t.head, up.text_pred, p.text.head, g.text.head, "text.head");
      d = mlp_block_backward(t.block2, d, p.text.block2, g.text.block2, "text.block2");
      d = mlp_block_backward(t.block1, d, p.text.block1, g.text.block1, "text.block1");
      detail::accumulate(d_code, d);
    }
    if (!up.text_recon.empty()) {
      detail::accumulate(d_code, mlp_block_backward(t.decoder, up.text_recon, p.text.decoder, g.text.decoder,
                                                    "text.decoder"));
    }
    if (!d_code.empty()) mlp_block_backward(t.encoder, d_code, p.text.encoder, g.text.encoder, "text.encoder");
  }

  if (!out.image) return g;
  const auto& im = *out.image;
  const bool use_sem = !im.pred_sem.empty();
  const bool use_det = !im.pred_det.empty();

  Matrix d_pred_sem, d_pred_det;
  if (use_sem) detail::accumulate(d_pred_sem, up.image_sem);
  if (use_det) detail::accumulate(d_pred_det, up.image_det);
  if (!up.image_fused.empty()) {
    const double share = (use_sem && use_det) ? 0.5 : 1.0;
    if (use_sem) detail::accumulate(d_pred_sem, up.image_fused * share);
    if (use_det) detail::accumulate(d_pred_det, up.image_fused * share);
  }

  auto path_backward = [&](const Matrix& d_pred, const LayerTape& th, const LayerTape& t2, const LayerTape& t1) {
    Matrix d = mlp_block_backward(th, d_pred, p.image.head, g.image.head, "image.head");
    d = mlp_block_backward(t2, d, p.image.block2, g.image.block2, "image.block2");
    return mlp_block_backward(t1, d, p.image.block1, g.image.block1, "image.block1");
  };
  auto decoder_backward = [&](const Matrix& d_rec, const LayerTape& tape, const Dense& dec, Dense& gdec,
                              Matrix& d_code) {
    if (d_rec.empty()) return;
    detail::accumulate(d_code, mlp_block_backward(tape, d_rec, dec, gdec, "image.decoder"));
  };

  Matrix d_code_sem, d_code_det;
  if (use_sem && !d_pred_sem.empty()) {
    detail::accumulate(d_code_sem, path_backward(d_pred_sem, im.sem_head, im.sem_block2, im.sem_block1));
  }
  if (use_det && !d_pred_det.empty()) {
    detail::accumulate(d_code_det, path_backward(d_pred_det, im.det_head, im.det_block2, im.det_block1));
  }
  if (!im.recon.sem_direct.empty()) {
    decoder_backward(up.image_recon.sem_direct, im.dec_sem_direct, p.image.sem_decoder, g.image.sem_decoder,
                     d_code_sem);
    decoder_backward(up.image_recon.det_from_sem, im.dec_det_from_sem, p.image.det_decoder, g.image.det_decoder,
                     d_code_sem);
    decoder_backward(up.image_recon.det_direct, im.dec_det_direct, p.image.det_decoder, g.image.det_decoder,
                     d_code_det);
    decoder_backward(up.image_recon.sem_from_det, im.dec_sem_from_det, p.image.sem_decoder, g.image.sem_decoder,
                     d_code_det);
  }
  if (!d_code_sem.empty()) {
    mlp_block_backward(im.sem_encoder, d_code_sem, p.image.sem_encoder, g.image.sem_encoder, "image.sem_encoder");
  }
  if (!d_code_det.empty()) {
    mlp_block_backward(im.det_encoder, d_code_det, p.image.det_encoder, g.image.det_encoder, "image.det_encoder");
  }
  return g;
}

/// Sample i of a batch of flattened embeddings, viewed as a tokens x dims matrix.
inline Matrix token_matrix(const Matrix& flat, std::size_t i, std::size_t tokens, std::size_t dims) {
  if (flat.cols() != tokens * dims) throw ShapeMismatch("token_matrix: width is not tokens * dims");
  return flat.row_matrix(i).reshaped(tokens, dims);
}

}  // namespace brainmclip
