#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/core/matrix.hpp"
#include "brainmclip/model/params.hpp"

namespace brainmclip {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam update of one tensor at step t >= 1.
inline void adam_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, std::uint64_t t,
                        const AdamConfig& cfg, const std::string& name = "tensor") {
  if (t < 1) throw InvalidState("adam: step counter must start at 1");
  Matrix::require_same_shape(theta, grad, "adam " + name);
  if (!all_finite(grad)) throw NumericalFailure("non-finite gradient in " + name);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  auto th = theta.values();
  auto g = grad.values();
  auto mv = m.values();
  auto vv = v.values();
  for (std::size_t k = 0; k < th.size(); ++k) {
    mv[k] = cfg.beta1 * mv[k] + (1.0 - cfg.beta1) * g[k];
    vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * g[k] * g[k];
    const double m_hat = mv[k] / c1;
    const double v_hat = vv[k] / c2;
    th[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

/// First and second moments for every tensor of a model.
struct AdamState {
  ParamGrads m;
  ParamGrads v;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& p) { return {zeros_like(p), zeros_like(p), 0}; }
};

/**
 * One Adam step over every tensor whose name starts with `only_prefix`
 * (all tensors by default). Gradients are checked for finiteness before
 * anything is written, so a failing step leaves params untouched.
 */
inline void adam_step(ModelParams& p, const ParamGrads& g, AdamState& s, const AdamConfig& cfg,
                      std::string_view only_prefix = {}) {
  std::vector<const Matrix*> grads;
  for_each_tensor(g, [&](const std::string& name, const Matrix& gm) {
    if (name.starts_with(only_prefix) && !all_finite(gm)) throw NumericalFailure("non-finite gradient in " + name);
    grads.push_back(&gm);
  });
  std::vector<Matrix*> ms, vs;
  for_each_tensor(s.m, [&](const std::string&, Matrix& x) { ms.push_back(&x); });
  for_each_tensor(s.v, [&](const std::string&, Matrix& x) { vs.push_back(&x); });
  ++s.step;
  std::size_t k = 0;
  for_each_tensor(p, [&](const std::string& name, Matrix& theta) {
    if (k >= grads.size() || k >= ms.size()) throw ShapeMismatch("adam_step: gradient layout does not match params");
    if (name.starts_with(only_prefix)) adam_update(theta, *grads[k], *ms[k], *vs[k], s.step, cfg, name);
    ++k;
  });
}

}  // namespace brainmclip
