#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "brainmclip/alignment/csv.hpp"
#include "brainmclip/core/error.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/model/network.hpp"
#include "brainmclip/train/metrics.hpp"
#include "brainmclip/train/trainer.hpp"

namespace brainmclip {

/// Metrics of one model on a sample set; absent values mean the variant has no such output.
struct EvalMetrics {
  ModelVariant variant = ModelVariant::full;
  std::uint64_t seed = 0;
  std::optional<double> pixcorr;
  std::optional<double> ssim;
  std::optional<double> two_way_image;
  std::optional<double> two_way_text;
};

/**
 * Identification of the predicted text embedding against E_T and of the
 * predicted fused image embedding against E_I. PixCorr and SSIM compare each
 * predicted m_img x d_img embedding with its target as an image; SSIM uses the
 * target's value range over the evaluated samples and is absent when the
 * embedding is smaller than the 11x11 window.
 */
inline EvalMetrics evaluate(const ModelParams& p, const Dataset& ds, LayerRange range, bool include_final,
                            std::span<const std::size_t> idx, Similarity sim = Similarity::pearson) {
  require_compatible(ds, p.config);
  if (idx.size() < 2) throw DegenerateInput("evaluate: need at least 2 samples");
  const TrainingTargets t = select_rows(build_targets(ds, range, include_final), idx);
  const auto out = forward_branches(t, p, ForwardMode::infer(), true, true);

  EvalMetrics m;
  m.variant = p.variant;
  m.two_way_text = two_way_identification(out.text.pred, t.text, sim);
  if (out.image) {
    const Matrix& pred = out.image->pred_fused;
    m.two_way_image = two_way_identification(pred, t.fused, sim);
    double pc = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) pc += pixcorr(pred.row(i), t.fused.row(i));
    m.pixcorr = pc / static_cast<double>(idx.size());
    const auto& c = p.config;
    if (c.m_img >= 11 && c.d_img >= 11) {
      const auto [lo, hi] = std::minmax_element(t.fused.values().begin(), t.fused.values().end());
      const double range_l = *hi - *lo;
      double s = 0.0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        s += ssim(token_matrix(pred, i, c.m_img, c.d_img), token_matrix(t.fused, i, c.m_img, c.d_img), range_l);
      }
      m.ssim = s / static_cast<double>(idx.size());
    }
  }
  return m;
}

inline EvalMetrics evaluate_test(const ModelParams& p, const Dataset& ds, const TrainConfig& tc) {
  const auto idx = test_indices(ds);
  EvalMetrics m = evaluate(p, ds, tc.layer_range, tc.include_final, idx);
  m.seed = tc.seed;
  return m;
}

struct AblationResult {
  TrainResult trained;
  EvalMetrics metrics;
};

/// Trains one variant and evaluates it on the test split.
inline AblationResult run_ablation(ModelVariant variant, const Dataset& ds, const ModelConfig& mc, TrainConfig tc) {
  tc.variant = variant;
  AblationResult r{train(ds, mc, tc), {}};
  r.metrics = evaluate_test(r.trained.params, ds, tc);
  return r;
}

/// Identification score of the variant's primary output: E_I when present, E_T otherwise.
inline double primary_identification(const EvalMetrics& m) {
  return m.two_way_image ? *m.two_way_image : m.two_way_text.value();
}

struct LayerScanEntry {
  LayerRange range;
  bool include_final = true;
};

struct LayerScanRow {
  LayerScanEntry entry;
  double two_way_image = 0.0;
};

/**
 * For each entry, trains a short image-branch model against that entry's
 * fused targets and scores identification against the same targets. Rows
 * come back in entry order.
 */
inline std::vector<LayerScanRow> layer_scan(const Dataset& ds, const std::vector<LayerScanEntry>& entries,
                                            const ModelConfig& mc, TrainConfig tc) {
  if (entries.empty()) throw UsageError("layer_scan: no layer ranges configured");
  if (!has_image_branch(tc.variant)) throw UsageError("layer_scan: variant has no image branch");
  tc.train_text = false;
  std::vector<LayerScanRow> rows;
  for (const auto& e : entries) {
    if (!e.include_final && e.range.hi >= ds.final_layer()) {
      throw RangeError("layer_scan: a range without the final layer must end before layer " +
                       std::to_string(ds.final_layer()));
    }
    tc.layer_range = e.range;
    tc.include_final = e.include_final;
    const TrainResult r = train(ds, mc, tc);
    const auto idx = test_indices(ds);
    rows.push_back({e, evaluate(r.params, ds, e.range, e.include_final, idx).two_way_image.value()});
  }
  return rows;
}

/// Ranking table, best first; ties keep entry order.
inline void write_layer_scan_csv(std::ostream& os, std::vector<LayerScanRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const LayerScanRow& a, const LayerScanRow& b) { return a.two_way_image > b.two_way_image; });
  os << "rank,layer_lo,layer_hi,include_final,two_way_image\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    os << k + 1 << ',' << r.entry.range.lo << ',' << r.entry.range.hi << ',' << (r.entry.include_final ? 1 : 0) << ','
       << format_g9(r.two_way_image) << '\n';
  }
}

}  // namespace brainmclip
