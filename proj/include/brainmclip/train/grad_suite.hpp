#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "brainmclip/core/rng.hpp"
#include "brainmclip/losses/grad_check.hpp"
#include "brainmclip/losses/losses.hpp"
#include "brainmclip/model/network.hpp"
#include "brainmclip/train/trainer.hpp"

namespace brainmclip {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;  // worst over all seeds and coordinates
  double threshold = 0.0;
  bool passed() const { return max_rel_error < threshold; }
};

/// Tiny dimensions for the model-level check; three tokens keep CKA non-trivial.
inline ModelConfig grad_check_model_config() {
  ModelConfig c;
  c.n_sem = 3;
  c.n_det = 5;
  c.latent_dim = 4;
  c.m_text = 3;
  c.d_text = 4;
  c.m_img = 3;
  c.d_img = 4;
  return c;
}

/**
 * Max relative error between model_backward and central differences of the
 * joint batch loss, over every parameter tensor, in training mode with fixed
 * dropout masks.
 */
inline double model_grad_check(ModelVariant variant, std::uint64_t seed, std::size_t batch = 3) {
  const ModelConfig c = grad_check_model_config();
  Rng rng = Rng(seed).child("model_grad_check");
  ModelParams p = init_params(c, rng.child("init"), variant);
  // Non-zero biases so every bias path is exercised.
  for_each_tensor(p, [&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias")) m = rng.child(name).normal_matrix(m.rows(), m.cols(), 0.1);
  });
  TrainingTargets t;
  t.f_sem = rng.child("f_sem").normal_matrix(batch, c.n_sem);
  t.f_det = rng.child("f_det").normal_matrix(batch, c.n_det);
  t.text = rng.child("text").normal_matrix(batch, c.text_width());
  t.semantic = rng.child("sem").normal_matrix(batch, c.image_width());
  t.detail = rng.child("det").normal_matrix(batch, c.image_width());
  t.fused = fuse_targets(t.detail, t.semantic);
  TrainConfig tc;
  tc.variant = variant;
  tc.weights.crec = 0.7;  // distinct weights catch mis-scaled terms
  tc.weights.image_mse = 1.3;
  const ForwardMode mode = ForwardMode::train(rng.child("dropout"));

  auto loss = [&](const ModelParams& q) {
    const auto out = forward_branches(t, q, mode, true, true);
    const auto b = batch_losses(out, t, q, tc, true, true);
    const double n = static_cast<double>(batch);
    return b.totals.text_total / n + b.totals.image_total / n;
  };
  const auto out = forward_branches(t, p, mode, true, true);
  const auto b = batch_losses(out, t, p, tc, true, true);
  const ParamGrads g = model_backward(out, b.grads, p);

  std::vector<Matrix> analytic;
  for_each_tensor(g, [&](const std::string&, const Matrix& m) { analytic.push_back(m); });
  double worst = 0.0;
  std::size_t k = 0;
  for_each_tensor(p, [&](const std::string&, Matrix& m) {
    const Matrix numeric = numeric_gradient(
        [&](const Matrix& x) {
          const Matrix saved = m;
          m = x;
          const double v = loss(p);
          m = saved;
          return v;
        },
        Matrix(m));
    worst = std::max(worst, max_relative_error(analytic[k].values(), numeric.values()));
    ++k;
  });
  return worst;
}

/// Every loss gradient and the model backward pass against central differences.
inline std::vector<GradCheckCase> run_grad_suite(std::size_t seeds = 20) {
  std::vector<GradCheckCase> cases{{"mse_loss", 0.0, 1e-6},
                                   {"sims_loss/own_first_token", 0.0, 1e-4},
                                   {"sims_loss/target_first_token", 0.0, 1e-4},
                                   {"cka_loss", 0.0, 1e-4},
                                   {"mg_loss", 0.0, 1e-4},
                                   {"crec_loss", 0.0, 1e-6},
                                   {"text_total_loss", 0.0, 1e-4},
                                   {"image_total_loss", 0.0, 1e-4},
                                   {"model_backward/full", 0.0, 1e-4},
                                   {"model_backward/text+detail", 0.0, 1e-4},
                                   {"model_backward/text_only", 0.0, 1e-4}};
  auto record = [&](std::size_t c, double e) { cases[c].max_rel_error = std::max(cases[c].max_rel_error, e); };

  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = Rng(s).child("grad_suite");
    const Matrix a = rng.child("a").normal_matrix(4, 5);
    const Matrix b = rng.child("b").normal_matrix(4, 5);
    record(0, grad_check([&](const Matrix& x) { return mse_loss(a, x); }, b));
    record(1, grad_check([&](const Matrix& x) { return sims_loss(a, x, SimsAnchor::own_first_token); }, b));
    record(2, grad_check([&](const Matrix& x) { return sims_loss(a, x, SimsAnchor::target_first_token); }, b));
    record(3, grad_check([&](const Matrix& x) { return cka_loss(a, x); }, b));
    record(4, grad_check(
                  [&](const Matrix& x) {
                    auto m = mg_loss(a, x, SimsAnchor::own_first_token, {0.8, 1.2});
                    return LossValueGrad{m.value, m.grad};
                  },
                  b));

    const Matrix f_sem = rng.child("fs").normal_matrix(1, 3);
    const Matrix f_det = rng.child("fd").normal_matrix(1, 5);
    const CrecReconstructions rec{rng.child("r0").normal_matrix(1, 3), rng.child("r1").normal_matrix(1, 5),
                                  rng.child("r2").normal_matrix(1, 5), rng.child("r3").normal_matrix(1, 3)};
    for (int slot = 0; slot < 4; ++slot) {
      auto pick = [slot](auto& r) -> decltype(auto) {
        return slot == 0 ? (r.sem_direct) : slot == 1 ? (r.det_from_sem) : slot == 2 ? (r.det_direct) : (r.sem_from_det);
      };
      record(5, grad_check(
                    [&](const Matrix& x) {
                      CrecReconstructions r = rec;
                      pick(r) = x;
                      auto l = crec_loss(f_sem, f_det, r);
                      return LossValueGrad{l.value, pick(l.grads)};
                    },
                    pick(rec)));
    }

    const Matrix rs = rng.child("rs").normal_matrix(1, 3);
    record(6, grad_check(
                  [&](const Matrix& x) {
                    auto l = text_total_loss(a, x, f_sem, rs, SimsAnchor::own_first_token, {0.9, 1.1, {1.0, 1.0}});
                    return LossValueGrad{l.value, l.grad_embedding};
                  },
                  b));
    const Matrix c = rng.child("c").normal_matrix(4, 5);
    const Matrix e = rng.child("e").normal_matrix(4, 5);
    const Matrix fused = fuse_targets(a, c);
    const ImageLossWeights iw{1.0, 0.5, 1.5, {1.0, 1.0}};
    record(7, grad_check(
                  [&](const Matrix& x) {
                    auto l = image_total_loss({fused, a, c}, x, e, &f_sem, &f_det, &rec, SimsAnchor::own_first_token, iw);
                    return LossValueGrad{l.value, l.grad_sem};
                  },
                  b));
    record(7, grad_check(
                  [&](const Matrix& x) {
                    auto l = image_total_loss({fused, a, c}, b, x, &f_sem, &f_det, &rec, SimsAnchor::own_first_token, iw);
                    return LossValueGrad{l.value, l.grad_det};
                  },
                  e));

    record(8, model_grad_check(ModelVariant::full, s));
    record(9, model_grad_check(ModelVariant::text_detail, s));
    record(10, model_grad_check(ModelVariant::text_only, s));
  }
  return cases;
}

}  // namespace brainmclip
