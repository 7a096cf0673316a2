#pragma once

#include <array>
#include <cmath>
#include <string>

#include "brainmclip/alignment/cka.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

/// Loss value and its gradient with respect to the predicted argument.
struct LossValueGrad {
  double value = 0.0;
  Matrix grad;
};

/**
 * Which first token anchors the predicted similarity vector in the Sims loss.
 *
 * own_first_token: s_B[k] = cos(b_0, b_{k+1}), each sequence relative to its own first token.
 * target_first_token: s_B[k] = cos(a_0, b_{k+1}), the prediction measured against the target's first token.
 */
enum class SimsAnchor { own_first_token, target_first_token };

inline const char* to_string(SimsAnchor a) {
  return a == SimsAnchor::own_first_token ? "own_first_token" : "target_first_token";
}

inline SimsAnchor sims_anchor_from_string(const std::string& s) {
  if (s == "own_first_token") return SimsAnchor::own_first_token;
  if (s == "target_first_token") return SimsAnchor::target_first_token;
  throw UsageError("unknown sims anchor '" + s + "'");
}

/// mean((pred - target)^2) over all entries; gradient with respect to pred.
inline LossValueGrad mse_loss(const Matrix& target, const Matrix& pred) {
  Matrix::require_same_shape(target, pred, "mse_loss");
  const double inv = 1.0 / static_cast<double>(pred.size());
  Matrix grad(pred.rows(), pred.cols());
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = pred.values()[k] - target.values()[k];
    sum += d * d;
    grad.values()[k] = 2.0 * d * inv;
  }
  return {sum * inv, std::move(grad)};
}

/// Cosine similarity of the first token against each remaining token.
inline Vector sims_vector(const Matrix& a) {
  if (a.rows() < 2) throw DegenerateInput("sims_vector: need at least 2 tokens");
  const double n0 = norm2(a.row(0));
  if (n0 <= 0.0) throw DegenerateInput("sims_vector: token 0 is the zero vector");
  Vector s(a.rows() - 1);
  for (std::size_t k = 1; k < a.rows(); ++k) {
    const double nk = norm2(a.row(k));
    if (nk <= 0.0) throw DegenerateInput("sims_vector: token " + std::to_string(k) + " is the zero vector");
    s[k - 1] = dot(a.row(0), a.row(k)) / (n0 * nk);
  }
  return s;
}

/// MSE between the target's and the prediction's first-token similarity vectors.
inline LossValueGrad sims_loss(const Matrix& target, const Matrix& pred,
                               SimsAnchor anchor = SimsAnchor::own_first_token) {
  Matrix::require_same_shape(target, pred, "sims_loss");
  const std::size_t m = pred.rows();
  const std::size_t d = pred.cols();
  const Vector s_target = sims_vector(target);
  const auto anchor_row = anchor == SimsAnchor::own_first_token ? pred.row(0) : target.row(0);
  const double na = norm2(anchor_row);
  if (na <= 0.0) throw DegenerateInput("sims_loss: anchor token is the zero vector");

  Matrix grad(m, d);
  double sum = 0.0;
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (std::size_t k = 1; k < m; ++k) {
    const auto v = pred.row(k);
    const double nv = norm2(v);
    if (nv <= 0.0) throw DegenerateInput("sims_loss: predicted token " + std::to_string(k) + " is the zero vector");
    const double c = dot(anchor_row, v) / (na * nv);
    const double diff = c - s_target[k - 1];
    sum += diff * diff;
    const double g = 2.0 * diff * inv;
    // dc/dv = a/(|a||v|) - c v/|v|^2, and symmetrically for the anchor.
    auto gv = grad.row(k);
    for (std::size_t j = 0; j < d; ++j) gv[j] += g * (anchor_row[j] / (na * nv) - c * v[j] / (nv * nv));
    if (anchor == SimsAnchor::own_first_token) {
      auto g0 = grad.row(0);
      for (std::size_t j = 0; j < d; ++j) g0[j] += g * (v[j] / (na * nv) - c * anchor_row[j] / (na * na));
    }
  }
  return {sum * inv, std::move(grad)};
}

/**
 * 1 - CKA(target, pred) with the gradient taken through L = B B^T, the
 * centering and the normalization. The target is treated as a constant.
 */
inline LossValueGrad cka_loss(const Matrix& target, const Matrix& pred) {
  if (target.rows() != pred.rows()) throw ShapeMismatch("cka_loss: token counts differ");
  if (pred.rows() < 2) throw DegenerateInput("cka_loss: need at least 2 tokens");
  const Matrix kc = centered_gram(target, "cka_loss target");
  const Matrix lc = centered_gram(pred, "cka_loss prediction");
  const double nk = frobenius_norm(kc);
  const double nl = frobenius_norm(lc);
  const double s = frobenius_dot(kc, lc);
  const double similarity = s / (nk * nl);

  // d cka / dL = Kc/(|Kc||Lc|) - s Lc/(|Kc||Lc|^3); dL = dB B^T + B dB^T.
  Matrix g = kc * (1.0 / (nk * nl));
  g -= lc * (s / (nk * nl * nl * nl));
  Matrix grad = matmul(g, pred);
  grad *= -2.0;
  return {1.0 - similarity, std::move(grad)};
}

struct MgWeights {
  double cka = 1.0;
  double sims = 1.0;
};

struct MgLoss {
  double value = 0.0;
  double cka = 0.0;
  double sims = 0.0;
  Matrix grad;
};

/// Multi-granularity alignment: weighted CKA loss plus weighted Sims loss.
inline MgLoss mg_loss(const Matrix& target, const Matrix& pred, SimsAnchor anchor = SimsAnchor::own_first_token,
                      MgWeights w = {}) {
  const LossValueGrad c = cka_loss(target, pred);
  const LossValueGrad s = sims_loss(target, pred, anchor);
  MgLoss out;
  out.cka = c.value;
  out.sims = s.value;
  out.value = w.cka * c.value + w.sims * s.value;
  out.grad = c.grad * w.cka;
  out.grad += s.grad * w.sims;
  return out;
}

/**
 * The four fMRI reconstructions of the image branch. Each lives in the output
 * space of the decoder that produced it:
 *   sem_direct   = D_IS(b_IS)   (semantic space)
 *   det_from_sem = D_ID(b_IS)   (detail space, cross path)
 *   det_direct   = D_ID(b_ID)   (detail space)
 *   sem_from_det = D_IS(b_ID)   (semantic space, cross path)
 */
struct CrecReconstructions {
  Matrix sem_direct;
  Matrix det_from_sem;
  Matrix det_direct;
  Matrix sem_from_det;
};

struct CrecLoss {
  double value = 0.0;
  std::array<double, 4> terms{};  // same order as CrecReconstructions
  CrecReconstructions grads;
};

inline CrecLoss crec_loss(const Matrix& f_sem, const Matrix& f_det, const CrecReconstructions& rec) {
  auto term = [](const Matrix& target, const Matrix& pred, const char* name) {
    if (!target.same_shape(pred)) {
      throw ShapeMismatch(std::string("crec_loss term ") + name + ": " + Matrix::shape_string(target) + " vs " +
                          Matrix::shape_string(pred));
    }
    return mse_loss(target, pred);
  };
  auto a = term(f_sem, rec.sem_direct, "sem_direct");
  auto b = term(f_det, rec.det_from_sem, "det_from_sem");
  auto c = term(f_det, rec.det_direct, "det_direct");
  auto d = term(f_sem, rec.sem_from_det, "sem_from_det");
  CrecLoss out;
  out.terms = {a.value, b.value, c.value, d.value};
  out.value = a.value + b.value + c.value + d.value;
  out.grads = {std::move(a.grad), std::move(b.grad), std::move(c.grad), std::move(d.grad)};
  return out;
}

struct TextLossWeights {
  double mg = 1.0;
  double rec = 1.0;
  MgWeights mg_parts;
};

struct TextLoss {
  double value = 0.0;
  double mg = 0.0;
  double cka = 0.0;
  double sims = 0.0;
  double rec = 0.0;
  Matrix grad_embedding;  // wrt predicted text embedding
  Matrix grad_recon;      // wrt reconstructed F_S
};

inline TextLoss text_total_loss(const Matrix& e_text, const Matrix& e_text_pred, const Matrix& f_sem,
                                const Matrix& f_sem_pred, SimsAnchor anchor = SimsAnchor::own_first_token,
                                const TextLossWeights& w = {}) {
  MgLoss mg = mg_loss(e_text, e_text_pred, anchor, w.mg_parts);
  LossValueGrad rec = mse_loss(f_sem, f_sem_pred);
  TextLoss out;
  out.mg = mg.value;
  out.cka = mg.cka;
  out.sims = mg.sims;
  out.rec = rec.value;
  out.value = w.mg * mg.value + w.rec * rec.value;
  out.grad_embedding = std::move(mg.grad) * w.mg;
  out.grad_recon = std::move(rec.grad) * w.rec;
  return out;
}

struct ImageLossWeights {
  double mg = 1.0;
  double crec = 1.0;
  double mse = 1.0;
  MgWeights mg_parts;
};

/// Targets of the image branch for one sample (token x dim matrices).
struct ImageTargets {
  const Matrix& fused;     // E_I
  const Matrix& semantic;  // e_IS
  const Matrix& detail;    // e_ID
};

struct ImageLoss {
  double value = 0.0;
  double mg = 0.0;
  double cka = 0.0;
  double sims = 0.0;
  double crec = 0.0;
  double mse_sem = 0.0;
  double mse_det = 0.0;
  Matrix grad_sem;  // wrt e_IS prediction (empty when that path is disabled)
  Matrix grad_det;  // wrt e_ID prediction (empty when that path is disabled)
  CrecReconstructions crec_grads;
};

/**
 * L_image = w_mg L_MG(E_I, fused) + w_crec L_Crec + w_mse (MSE(e_IS, pred_sem) + MSE(e_ID, pred_det)).
 *
 * The fused prediction is (pred_sem + pred_det)/2, so each path receives half
 * of the fused gradient. An empty pred_sem or pred_det disables that path:
 * the fused prediction is then the remaining path and its MSE term is dropped.
 * A null crec disables the cross-reconstruction term.
 */
inline ImageLoss image_total_loss(const ImageTargets& t, const Matrix& pred_sem, const Matrix& pred_det,
                                  const Matrix* f_sem, const Matrix* f_det, const CrecReconstructions* crec,
                                  SimsAnchor anchor = SimsAnchor::own_first_token, const ImageLossWeights& w = {}) {
  const bool use_sem = !pred_sem.empty();
  const bool use_det = !pred_det.empty();
  if (!use_sem && !use_det) throw InvalidState("image_total_loss: both image paths disabled");

  Matrix fused;
  if (use_sem && use_det) {
    fused = (pred_sem + pred_det) * 0.5;
  } else {
    fused = use_sem ? pred_sem : pred_det;
  }
  MgLoss mg = mg_loss(t.fused, fused, anchor, w.mg_parts);

  ImageLoss out;
  out.mg = mg.value;
  out.cka = mg.cka;
  out.sims = mg.sims;
  const double fused_share = (use_sem && use_det) ? 0.5 : 1.0;
  if (use_sem) {
    LossValueGrad m = mse_loss(t.semantic, pred_sem);
    out.mse_sem = m.value;
    out.grad_sem = mg.grad * (w.mg * fused_share);
    out.grad_sem += m.grad * w.mse;
  }
  if (use_det) {
    LossValueGrad m = mse_loss(t.detail, pred_det);
    out.mse_det = m.value;
    out.grad_det = mg.grad * (w.mg * fused_share);
    out.grad_det += m.grad * w.mse;
  }
  if (crec != nullptr) {
    if (f_sem == nullptr || f_det == nullptr) throw InvalidState("image_total_loss: crec requires both fMRI signals");
    CrecLoss c = crec_loss(*f_sem, *f_det, *crec);
    out.crec = c.value;
    out.crec_grads = std::move(c.grads);
    for (Matrix* g : {&out.crec_grads.sem_direct, &out.crec_grads.det_from_sem, &out.crec_grads.det_direct,
                      &out.crec_grads.sem_from_det}) {
      *g *= w.crec;
    }
  }
  out.value = w.mg * out.mg + w.crec * out.crec + w.mse * (out.mse_sem + out.mse_det);
  return out;
}

}  // namespace brainmclip
