#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "brainmclip/alignment/csv.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/core/rng.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/losses/losses.hpp"
#include "brainmclip/model/network.hpp"
#include "brainmclip/model/params.hpp"
#include "brainmclip/train/adam.hpp"

namespace brainmclip {

struct LossWeights {
  double text_mg = 1.0;
  double text_rec = 1.0;
  double image_mg = 1.0;
  double crec = 1.0;
  double image_mse = 1.0;
  double cka = 1.0;  // inside L_MG
  double sims = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;       // image branch, and both branches when trained jointly
  std::size_t text_batch_size = 32;  // text branch with separate_branches
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossWeights weights;
  SimsAnchor anchor = SimsAnchor::own_first_token;
  LayerRange layer_range{3, 6};
  bool include_final = true;  // e_IS = final layer; otherwise e_IS = e_ID = range average
  ModelVariant variant = ModelVariant::full;
  bool separate_branches = false;
  bool train_text = true;

  void validate() const {
    if (epochs < 1) throw UsageError("train.epochs must be >= 1");
    if (batch_size < 1 || text_batch_size < 1) throw UsageError("train.batch_size must be >= 1");
    if (!(adam.learning_rate >= 0.0)) throw UsageError("train.learning_rate must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw UsageError("train.beta1 and train.beta2 must be in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw UsageError("train.epsilon must be > 0");
    for (double w : {weights.text_mg, weights.text_rec, weights.image_mg, weights.crec, weights.image_mse, weights.cka,
                     weights.sims}) {
      if (!(w >= 0.0)) throw UsageError("train loss weights must be >= 0");
    }
    if (layer_range.lo > layer_range.hi) throw UsageError("train.layer_lo must be <= train.layer_hi");
  }
};

struct LossRecord {
  std::size_t epoch = 0;
  std::string split;      // train | val
  std::string component;  // e.g. image_total, image_cka
  double value = 0.0;
};

struct TrainReport {
  ModelVariant variant = ModelVariant::full;
  std::uint64_t seed = 0;
  std::vector<LossRecord> history;
  std::string monitored;  // component used to pick best_epoch
  std::size_t best_epoch = 0;
  double best_value = 0.0;
  double wall_seconds = 0.0;  // informational only; never written to disk

  double value(std::size_t epoch, std::string_view split, std::string_view component) const {
    for (const auto& r : history)
      if (r.epoch == epoch && r.split == split && r.component == component) return r.value;
    throw RangeError("TrainReport: no record " + std::string(split) + "/" + std::string(component) + " at epoch " +
                     std::to_string(epoch));
  }
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

inline void write_loss_history_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,split,component,value\n";
  for (const auto& h : r.history) os << h.epoch << ',' << h.split << ',' << h.component << ',' << format_g9(h.value) << '\n';
}

/// Per-sample losses summed over a set of samples; divide by the counts for means.
struct LossTotals {
  double text_total = 0, text_mg = 0, text_cka = 0, text_sims = 0, text_rec = 0;
  double image_total = 0, image_mg = 0, image_cka = 0, image_sims = 0, image_crec = 0, image_mse_sem = 0,
         image_mse_det = 0;
  std::size_t n_text = 0, n_image = 0;

  void add(const LossTotals& o) {
    text_total += o.text_total, text_mg += o.text_mg, text_cka += o.text_cka, text_sims += o.text_sims;
    text_rec += o.text_rec;
    image_total += o.image_total, image_mg += o.image_mg, image_cka += o.image_cka, image_sims += o.image_sims;
    image_crec += o.image_crec, image_mse_sem += o.image_mse_sem, image_mse_det += o.image_mse_det;
    n_text += o.n_text, n_image += o.n_image;
  }

  /// Mean components in a fixed order; branches without samples are omitted.
  std::vector<std::pair<const char*, double>> means() const {
    std::vector<std::pair<const char*, double>> out;
    if (n_text) {
      const double s = 1.0 / static_cast<double>(n_text);
      out.insert(out.end(), {{"text_total", text_total * s},
                             {"text_mg", text_mg * s},
                             {"text_cka", text_cka * s},
                             {"text_sims", text_sims * s},
                             {"text_rec", text_rec * s}});
    }
    if (n_image) {
      const double s = 1.0 / static_cast<double>(n_image);
      out.insert(out.end(), {{"image_total", image_total * s},
                             {"image_mg", image_mg * s},
                             {"image_cka", image_cka * s},
                             {"image_sims", image_sims * s},
                             {"image_crec", image_crec * s},
                             {"image_mse_sem", image_mse_sem * s},
                             {"image_mse_det", image_mse_det * s}});
    }
    return out;
  }
};

/// Weight applied to L_Crec: the full_no_crec variant keeps its decoders but never trains them.
inline double effective_crec_weight(const TrainConfig& tc) {
  return tc.variant == ModelVariant::full_no_crec ? 0.0 : tc.weights.crec;
}

struct BatchLoss {
  LossTotals totals;
  UpstreamGrads grads;  // gradients of the batch-mean loss
};

/**
 * Evaluates the per-sample losses of every computed branch output against
 * the batch targets; gradients are scaled for the batch mean.
 */
inline BatchLoss batch_losses(const ForwardOutputs& out, const TrainingTargets& t, const ModelParams& p,
                              const TrainConfig& tc, bool with_text, bool with_image) {
  const auto& c = p.config;
  const auto& w = tc.weights;
  BatchLoss b;
  const std::size_t n = t.f_sem.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  if (with_text) {
    const TextLossWeights tw{w.text_mg, w.text_rec, {w.cka, w.sims}};
    b.grads.text_pred = Matrix(n, c.text_width());
    b.grads.text_recon = Matrix(n, c.n_sem);
    for (std::size_t i = 0; i < n; ++i) {
      const TextLoss l = text_total_loss(token_matrix(t.text, i, c.m_text, c.d_text),
                                         token_matrix(out.text.pred, i, c.m_text, c.d_text), t.f_sem.row_matrix(i),
                                         out.text.recon.row_matrix(i), tc.anchor, tw);
      auto& s = b.totals;
      s.text_total += l.value, s.text_mg += l.mg, s.text_cka += l.cka, s.text_sims += l.sims, s.text_rec += l.rec;
      for (std::size_t k = 0; k < l.grad_embedding.size(); ++k) {
        b.grads.text_pred.row(i)[k] = l.grad_embedding.values()[k] * inv_n;
      }
      for (std::size_t k = 0; k < l.grad_recon.size(); ++k) b.grads.text_recon.row(i)[k] = l.grad_recon.values()[k] * inv_n;
    }
    b.totals.n_text = n;
  }

  if (with_image && out.image) {
    const auto& im = *out.image;
    const bool use_sem = !im.pred_sem.empty(), use_det = !im.pred_det.empty();
    const bool use_crec = !im.recon.sem_direct.empty();
    const ImageLossWeights iw{w.image_mg, effective_crec_weight(tc), w.image_mse, {w.cka, w.sims}};
    if (use_sem) b.grads.image_sem = Matrix(n, c.image_width());
    if (use_det) b.grads.image_det = Matrix(n, c.image_width());
    if (use_crec) {
      b.grads.image_recon = {Matrix(n, c.n_sem), Matrix(n, c.n_det), Matrix(n, c.n_det), Matrix(n, c.n_sem)};
    }
    auto tok = [&](const Matrix& flat, std::size_t i) {
      return flat.empty() ? Matrix() : token_matrix(flat, i, c.m_img, c.d_img);
    };
    auto put = [&](Matrix& into, std::size_t i, const Matrix& g) {
      auto r = into.row(i);
      for (std::size_t k = 0; k < g.size(); ++k) r[k] = g.values()[k] * inv_n;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const Matrix fused = tok(t.fused, i), sem = tok(t.semantic, i), det = tok(t.detail, i);
      const Matrix f_sem = t.f_sem.row_matrix(i), f_det = t.f_det.row_matrix(i);
      CrecReconstructions rec;
      if (use_crec) {
        rec = {im.recon.sem_direct.row_matrix(i), im.recon.det_from_sem.row_matrix(i),
               im.recon.det_direct.row_matrix(i), im.recon.sem_from_det.row_matrix(i)};
      }
      const ImageLoss l = image_total_loss({fused, sem, det}, tok(im.pred_sem, i), tok(im.pred_det, i), &f_sem, &f_det,
                                           use_crec ? &rec : nullptr, tc.anchor, iw);
      auto& s = b.totals;
      s.image_total += l.value, s.image_mg += l.mg, s.image_cka += l.cka, s.image_sims += l.sims;
      s.image_crec += l.crec, s.image_mse_sem += l.mse_sem, s.image_mse_det += l.mse_det;
      if (use_sem) put(b.grads.image_sem, i, l.grad_sem);
      if (use_det) put(b.grads.image_det, i, l.grad_det);
      if (use_crec) {
        put(b.grads.image_recon.sem_direct, i, l.crec_grads.sem_direct);
        put(b.grads.image_recon.det_from_sem, i, l.crec_grads.det_from_sem);
        put(b.grads.image_recon.det_direct, i, l.crec_grads.det_direct);
        put(b.grads.image_recon.sem_from_det, i, l.crec_grads.sem_from_det);
      }
    }
    b.totals.n_image = n;
  }
  return b;
}

inline ForwardOutputs forward_branches(const TrainingTargets& t, const ModelParams& p, const ForwardMode& mode,
                                       bool with_text, bool with_image) {
  if (t.f_sem.cols() != p.config.n_sem || t.f_det.cols() != p.config.n_det) {
    throw ShapeMismatch("forward: voxel widths do not match the model");
  }
  ForwardOutputs out;
  out.training = mode.training();
  if (with_text) out.text = text_branch_forward(t.f_sem, p, mode);
  if (with_image && has_image_branch(p.variant)) out.image = image_branch_forward(t.f_sem, t.f_det, p, mode);
  return out;
}

inline void require_compatible(const Dataset& ds, const ModelConfig& mc) {
  auto check = [](std::size_t data, std::size_t model, const char* what) {
    if (data != model) {
      throw ShapeMismatch(std::string("dataset ") + what + " = " + std::to_string(data) + " but model." + what + " = " +
                          std::to_string(model));
    }
  };
  check(ds.mask.n_sem(), mc.n_sem, "n_sem");
  check(ds.mask.n_det(), mc.n_det, "n_det");
  check(ds.m_text, mc.m_text, "m_text");
  check(ds.d_text, mc.d_text, "d_text");
  check(ds.m_img, mc.m_img, "m_img");
  check(ds.d_img, mc.d_img, "d_img");
}

/// Mean losses of a model over a set of samples, in inference mode.
inline LossTotals evaluate_losses(const ModelParams& p, const TrainingTargets& t, const TrainConfig& tc, bool with_text,
                                  bool with_image) {
  const auto out = forward_branches(t, p, ForwardMode::infer(), with_text, with_image);
  return batch_losses(out, t, p, tc, with_text, with_image).totals;
}

/**
 * Trains the variant named in tc on the dataset's training split and records
 * per-epoch train/val loss components. Initialization, shuffling and dropout
 * all derive from tc.seed.
 */
inline TrainResult train(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc) {
  const auto start = std::chrono::steady_clock::now();
  tc.validate();
  mc.validate();
  require_compatible(ds, mc);
  if (ds.n_train < 1) throw UsageError("train: dataset has no training samples");

  const TrainingTargets all = build_targets(ds, tc.layer_range, tc.include_final);
  const auto train_idx = train_indices(ds);
  const TrainingTargets train_set = select_rows(all, train_idx);
  const bool has_val = ds.n_test >= 1;
  TrainingTargets val_set;
  if (has_val) {
    const auto test_idx = test_indices(ds);
    val_set = select_rows(all, test_idx);
  }

  const Rng root(tc.seed);
  TrainResult result{init_params(mc, root.child("init"), tc.variant), {}};
  ModelParams& p = result.params;
  const bool with_text = tc.train_text;
  const bool with_image = has_image_branch(tc.variant);
  if (!with_text && !with_image) throw UsageError("train: nothing to train (text disabled and no image branch)");

  struct Phase {
    const char* tag;
    bool text;
    bool image;
    std::size_t batch;
    const char* prefix;
  };
  std::vector<Phase> phases;
  if (tc.separate_branches) {
    if (with_text) phases.push_back({"text", true, false, tc.text_batch_size, "text."});
    if (with_image) phases.push_back({"image", false, true, tc.batch_size, "image."});
  } else {
    phases.push_back({"joint", with_text, with_image, tc.batch_size, ""});
  }
  std::vector<AdamState> states(phases.size(), AdamState::for_params(p));

  TrainReport& report = result.report;
  report.variant = tc.variant;
  report.seed = tc.seed;
  report.monitored = with_image ? "image_total" : "text_total";
  report.best_value = std::numeric_limits<double>::infinity();

  const std::size_t n = train_set.f_sem.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    LossTotals epoch_totals;
    for (std::size_t ph = 0; ph < phases.size(); ++ph) {
      const Phase& phase = phases[ph];
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle = root.child("shuffle").child(phase.tag).child(static_cast<std::uint64_t>(epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      const Rng dropout = root.child("dropout").child(phase.tag);

      for (std::size_t begin = 0; begin < n; begin += phase.batch) {
        const std::size_t end = std::min(n, begin + phase.batch);
        const std::span<const std::size_t> idx(order.data() + begin, end - begin);
        const TrainingTargets batch = select_rows(train_set, idx);
        const ForwardMode mode = ForwardMode::train(dropout.child(states[ph].step + 1));
        const ForwardOutputs out = forward_branches(batch, p, mode, phase.text, phase.image);
        BatchLoss loss = batch_losses(out, batch, p, tc, phase.text, phase.image);
        const ParamGrads g = model_backward(out, loss.grads, p);
        adam_step(p, g, states[ph], tc.adam, phase.prefix);
        epoch_totals.add(loss.totals);
      }
    }
    for (const auto& [name, v] : epoch_totals.means()) {
      if (!std::isfinite(v)) throw NumericalFailure("non-finite training loss " + std::string(name));
      report.history.push_back({epoch, "train", name, v});
    }
    const LossTotals monitored_totals =
        has_val ? evaluate_losses(p, val_set, tc, with_text, with_image) : epoch_totals;
    if (has_val) {
      for (const auto& [name, v] : monitored_totals.means()) {
        if (!std::isfinite(v)) throw NumericalFailure("non-finite validation loss " + std::string(name));
        report.history.push_back({epoch, "val", name, v});
      }
    }
    for (const auto& [name, v] : monitored_totals.means()) {
      if (name == report.monitored && v < report.best_value) {
        report.best_value = v;
        report.best_epoch = epoch;
      }
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace brainmclip
