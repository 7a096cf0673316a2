#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "brainmclip/core/linalg.hpp"
#include "brainmclip/core/rng.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/train/adam.hpp"
#include "brainmclip/train/evaluate.hpp"
#include "brainmclip/train/lasso.hpp"
#include "brainmclip/train/metrics.hpp"
#include "brainmclip/train/trainer.hpp"
#include "support/oracles.hpp"

using namespace brainmclip;

namespace {

Dataset small_data(std::uint64_t seed = 0) {
  SynthConfig c;
  c.n_train = 48;
  c.n_test = 16;
  c.seed = seed;
  return synth_generate(c);
}

ModelConfig small_model() {
  ModelConfig m;
  m.latent_dim = 16;
  return m;
}

TrainConfig short_train(std::size_t epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.text_batch_size = 12;
  return t;
}

std::vector<Matrix> tensors(const ModelParams& p) {
  std::vector<Matrix> out;
  for_each_tensor(p, [&](const std::string&, const Matrix& m) { out.push_back(m); });
  return out;
}

bool same_history(const TrainReport& a, const TrainReport& b) {
  if (a.history.size() != b.history.size()) return false;
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    const auto &x = a.history[k], &y = b.history[k];
    if (x.epoch != y.epoch || x.split != y.split || x.component != y.component || x.value != y.value) return false;
  }
  return a.best_epoch == b.best_epoch && a.best_value == b.best_value;
}

/// Residual-based KKT violation on the standardized problem.
double kkt_violation(const Matrix& x, const Vector& y, double lambda, const LassoResult& r) {
  const auto s = column_standardization(x);
  const auto z = standardized_columns(x, s);
  const std::size_t n = y.size();
  const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  Vector res(n);
  for (std::size_t i = 0; i < n; ++i) {
    res[i] = y[i] - y_mean;
    for (std::size_t j = 0; j < z.size(); ++j) res[i] -= z[j][i] * r.beta_std[j];
  }
  double worst = 0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    double g = 0;
    for (std::size_t i = 0; i < n; ++i) g += z[j][i] * res[i];
    g /= static_cast<double>(n);
    if (r.beta_std[j] != 0.0) {
      worst = std::max(worst, std::abs(g - lambda * (r.beta_std[j] > 0 ? 1.0 : -1.0)));
    } else {
      worst = std::max(worst, std::abs(g) - lambda);
    }
  }
  return worst;
}

}  // namespace

TEST(Adam, ClosedFormFirstStep) {
  Matrix theta(1, 1), m(1, 1), v(1, 1);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  adam_update(theta, Matrix(1, 1, 1.0), m, v, 1, cfg);
  EXPECT_LT(std::abs(theta(0, 0) + 0.1), 1e-6);
}

TEST(Adam, ZeroGradsIdenticalGradsAndErrors) {
  Matrix theta{{1.5, -2.0}}, m(1, 2), v(1, 2);
  adam_update(theta, Matrix(1, 2), m, v, 1, AdamConfig{});
  EXPECT_EQ(theta, (Matrix{{1.5, -2.0}}));

  Matrix pair{{0.3, 0.3}};
  Matrix pm(1, 2), pv(1, 2);
  for (std::uint64_t t = 1; t <= 5; ++t) adam_update(pair, Matrix{{0.7, 0.7}}, pm, pv, t, AdamConfig{});
  EXPECT_EQ(pair(0, 0), pair(0, 1));

  EXPECT_THROW(adam_update(theta, Matrix(1, 2), m, v, 0, AdamConfig{}), InvalidState);
  Matrix nan_grad{{std::numeric_limits<double>::quiet_NaN(), 0.0}};
  try {
    adam_update(theta, nan_grad, m, v, 2, AdamConfig{}, "image.head.weight");
    FAIL();
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("image.head.weight"), std::string::npos);
  }
}

TEST(Adam, PrefixFilterLeavesOtherBranchUntouched) {
  const ModelParams init = init_params(small_model(), Rng(1));
  ModelParams p = init;
  ParamGrads g = zeros_like(p);
  for_each_tensor(g, [](const std::string&, Matrix& m) { m = Matrix(m.rows(), m.cols(), 1.0); });
  AdamState s = AdamState::for_params(p);
  adam_step(p, g, s, AdamConfig{}, "text.");
  EXPECT_FALSE(p.text.head.weight == init.text.head.weight);
  EXPECT_EQ(p.image.head.weight, init.image.head.weight);
  EXPECT_EQ(max_abs(s.m.image.head.weight), 0.0);
}

TEST(Train, ZeroLearningRateKeepsInit) {
  const Dataset ds = small_data();
  TrainConfig tc = short_train(2);
  tc.adam.learning_rate = 0.0;
  const TrainResult r = train(ds, small_model(), tc);
  const ModelParams init = init_params(small_model(), Rng(tc.seed).child("init"));
  const auto a = tensors(r.params), b = tensors(init);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
}

TEST(Train, DeterministicReports) {
  const Dataset ds = small_data();
  const TrainResult a = train(ds, small_model(), short_train());
  const TrainResult b = train(ds, small_model(), short_train());
  EXPECT_TRUE(same_history(a.report, b.report));
  const auto ta = tensors(a.params), tb = tensors(b.params);
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(ta[k], tb[k]);
  TrainConfig other = short_train();
  other.seed = 1;
  EXPECT_FALSE(same_history(a.report, train(ds, small_model(), other).report));
}

TEST(Train, ComponentsSumToTotals) {
  const TrainResult r = train(small_data(), small_model(), short_train());
  for (std::size_t e = 1; e <= 3; ++e)
    for (const char* split : {"train", "val"}) {
      const auto& rep = r.report;
      EXPECT_NEAR(rep.value(e, split, "text_total"), rep.value(e, split, "text_mg") + rep.value(e, split, "text_rec"),
                  1e-9);
      EXPECT_NEAR(rep.value(e, split, "text_mg"), rep.value(e, split, "text_cka") + rep.value(e, split, "text_sims"),
                  1e-9);
      EXPECT_NEAR(rep.value(e, split, "image_total"),
                  rep.value(e, split, "image_mg") + rep.value(e, split, "image_crec") +
                      rep.value(e, split, "image_mse_sem") + rep.value(e, split, "image_mse_det"),
                  1e-9);
      EXPECT_NEAR(rep.value(e, split, "image_mg"),
                  rep.value(e, split, "image_cka") + rep.value(e, split, "image_sims"), 1e-9);
    }
  EXPECT_EQ(r.report.monitored, "image_total");
  EXPECT_GE(r.report.best_epoch, 1u);
  EXPECT_THROW(r.report.value(9, "val", "image_total"), RangeError);
}

TEST(Train, LossDecreasesOnSmallData) {
  const Dataset ds = small_data();
  TrainConfig tc = short_train(30);
  tc.adam.learning_rate = 1e-3;
  const TrainResult r = train(ds, small_model(), tc);
  EXPECT_LT(r.report.best_value, 0.8 * r.report.value(1, "val", "image_total"));
}

TEST(Train, ZeroCrecWeightMatchesNoCrecVariant) {
  const Dataset ds = small_data();
  TrainConfig full = short_train();
  full.weights.crec = 0.0;
  TrainConfig no_crec = short_train();
  no_crec.variant = ModelVariant::full_no_crec;
  const TrainResult a = train(ds, small_model(), full), b = train(ds, small_model(), no_crec);
  EXPECT_TRUE(same_history(a.report, b.report));
}

TEST(Train, TextOnlyAndSeparateBranches) {
  const Dataset ds = small_data();
  TrainConfig tc = short_train(2);
  tc.variant = ModelVariant::text_only;
  const TrainResult t = train(ds, small_model(), tc);
  EXPECT_EQ(t.report.monitored, "text_total");
  EXPECT_TRUE(t.params.image.head.empty());
  for (const auto& h : t.report.history) EXPECT_EQ(h.component.rfind("text_", 0), 0u);

  TrainConfig sep = short_train(2);
  sep.separate_branches = true;
  const TrainResult s = train(ds, small_model(), sep);
  EXPECT_NO_THROW(s.report.value(2, "val", "text_total"));
  EXPECT_NO_THROW(s.report.value(2, "val", "image_total"));
  // The image phase only steps image.* tensors, so the text branch ends where a text-only run does.
  TrainConfig sep_text = sep;
  sep_text.variant = ModelVariant::text_only;
  const TrainResult st = train(ds, small_model(), sep_text);
  EXPECT_EQ(st.params.text.head.weight, s.params.text.head.weight);
}

TEST(Train, RejectsMismatchedModel) {
  ModelConfig wrong = small_model();
  wrong.n_det = 10;
  EXPECT_THROW(train(small_data(), wrong, short_train()), ShapeMismatch);
  TrainConfig bad = short_train();
  bad.epochs = 0;
  EXPECT_THROW(train(small_data(), small_model(), bad), UsageError);
}

TEST(Train, LossHistoryCsv) {
  TrainReport r;
  r.history = {{1, "train", "image_total", 0.5}, {1, "val", "image_total", 1.0 / 3.0}};
  std::ostringstream os;
  write_loss_history_csv(os, r);
  EXPECT_EQ(os.str(), "epoch,split,component,value\n1,train,image_total,0.5\n1,val,image_total,0.333333333\n");
}

TEST(Pixcorr, Examples) {
  const Vector a{1, 2, 3, 5};
  Vector neg(4), aff(4);
  for (int i = 0; i < 4; ++i) neg[i] = -a[i], aff[i] = 4.0 * a[i] - 7.0;
  EXPECT_NEAR(pixcorr(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pixcorr(a, neg), -1.0, 1e-15);
  // Hand Pearson: centered a = [-1.75,-0.75,0.25,2.25], b = [1,0,0,-1] centered.
  EXPECT_NEAR(pixcorr(a, Vector{1, 0, 0, -1}), -4.0 / std::sqrt(8.75 * 2.0), 1e-12);
  EXPECT_NEAR(pixcorr(a, Vector{2, 1, 0, 1}), pixcorr(aff, Vector{2, 1, 0, 1}), 1e-12);
  EXPECT_THROW(pixcorr(a, Vector{1, 1, 1, 1}), DegenerateInput);
}

TEST(Ssim, IdentityShiftAndOracle) {
  Rng rng(5);
  const Matrix a = rng.uniform_matrix(16, 16, 0, 1);
  const Matrix b = rng.uniform_matrix(16, 16, 0, 1);
  EXPECT_NEAR(ssim(a, a, 1.0), 1.0, 1e-12);
  Matrix shifted = a;
  for (double& v : shifted.values()) v += 0.5;
  EXPECT_LT(ssim(a, shifted, 1.0), 1.0);
  EXPECT_NEAR(ssim(a, b, 1.0), oracle::ssim_loop(a, b, 1.0), 1e-10);
  EXPECT_NEAR(ssim(a, b, 1.0), ssim(b, a, 1.0), 1e-12);
  const Matrix c = rng.normal_matrix(12, 20), d = rng.normal_matrix(12, 20);
  EXPECT_NEAR(ssim(c, d, 6.0), oracle::ssim_loop(c, d, 6.0), 1e-10);
  EXPECT_THROW(ssim(Matrix(10, 16), Matrix(10, 16), 1.0), DegenerateInput);
  EXPECT_THROW(ssim(a, a, 0.0), DegenerateInput);
}

TEST(TwoWay, PerfectAndNull) {
  Rng rng(1);
  const Matrix t = rng.normal_matrix(10, 6);
  EXPECT_EQ(two_way_identification(t, t), 100.0);
  EXPECT_NEAR(two_way_identification(t, t), oracle::two_way(t, t), 1e-12);
  double sum = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng r(1000 + s);
    const Matrix p = r.normal_matrix(50, 16), q = r.normal_matrix(50, 16);
    const double v = two_way_identification(p, q);
    EXPECT_NEAR(v, oracle::two_way(p, q), 1e-9);
    sum += v;
  }
  EXPECT_NEAR(sum / 20.0, 50.0, 5.0);
  EXPECT_THROW(two_way_identification(Matrix(1, 3, 1.0), Matrix(1, 3, 1.0)), DegenerateInput);
  EXPECT_EQ(similarity_from_string("cosine"), Similarity::cosine);
  EXPECT_THROW(similarity_from_string("dot"), UsageError);
}

TEST(TwoWay, SinglePerfectPairAmongOrthogonalRows) {
  // Truths are basis rows e0..e3; prediction 0 is e0 and the rest point along e4.
  Matrix truths(4, 5), preds(4, 5);
  for (std::size_t i = 0; i < 4; ++i) truths(i, i) = 1.0;
  preds(0, 0) = 1.0;
  for (std::size_t i = 1; i < 4; ++i) preds(i, 4) = 1.0;
  // Sample 0 wins all 3 comparisons; the others tie every comparison (0.5 each).
  EXPECT_DOUBLE_EQ(two_way_identification(preds, truths, Similarity::cosine), 100.0 * (3.0 + 4.5) / 12.0);
}

TEST(TwoWay, CommonPermutationInvariance) {
  Rng rng(2);
  const Matrix p = rng.normal_matrix(12, 5), t = p + rng.normal_matrix(12, 5, 1.5);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.begin() + 7);
  for (auto sim : {Similarity::pearson, Similarity::cosine}) {
    EXPECT_NEAR(two_way_identification(p, t, sim), two_way_identification(gather_rows(p, perm), gather_rows(t, perm), sim),
                1e-12);
  }
}

TEST(Lasso, KillConditionAndErrors) {
  Rng rng(3);
  const Matrix x = rng.normal_matrix(30, 5);
  Vector y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = x(i, 0) - 2 * x(i, 3) + 0.1 * rng.normal();
  const auto s = column_standardization(x);
  const auto z = standardized_columns(x, s);
  const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / 30.0;
  double lambda_max = 0;
  for (const auto& zj : z) {
    double g = 0;
    for (std::size_t i = 0; i < 30; ++i) g += zj[i] * (y[i] - y_mean);
    lambda_max = std::max(lambda_max, std::abs(g) / 30.0);
  }
  const LassoResult r = lasso_fit(x, y, lambda_max);
  for (double b : r.beta) EXPECT_EQ(b, 0.0);
  EXPECT_NEAR(r.intercept, y_mean, 1e-15);
  EXPECT_THROW(lasso_fit(x, y, 0.0), RangeError);
  EXPECT_THROW(lasso_fit(x, Vector(29), 0.1), ShapeMismatch);
}

TEST(Lasso, OrthonormalDesignIsSoftThresholdedOls) {
  const Matrix x{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  const Vector y{3, 1, 0, -2};
  // OLS on the standardized columns: x1.y/4 = 1.5, x2.y/4 = 1.0.
  const LassoResult r = lasso_fit(x, y, 0.4);
  EXPECT_NEAR(r.beta[0], soft_threshold(1.5, 0.4), 1e-10);
  EXPECT_NEAR(r.beta[1], soft_threshold(1.0, 0.4), 1e-10);
  EXPECT_NEAR(lasso_fit(x, y, 1.2).beta[1], 0.0, 1e-10);
  EXPECT_EQ(soft_threshold(-2.0, 0.5), -1.5);
  EXPECT_EQ(soft_threshold(0.3, 0.5), 0.0);
}

TEST(Lasso, SmallLambdaMatchesRidge) {
  Rng rng(4);
  const Matrix x = rng.normal_matrix(50, 4);
  Vector y(50);
  for (std::size_t i = 0; i < 50; ++i) y[i] = 2 * x(i, 0) - x(i, 2) + 0.5 + 0.3 * rng.normal();
  const LassoResult r = lasso_fit(x, y, 1e-10);
  EXPECT_TRUE(r.converged);
  // Ridge on centered data with the intercept removed.
  const Matrix mu = column_means(x);
  Matrix xc = x, yc(50, 1);
  const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / 50.0;
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 4; ++j) xc(i, j) -= mu(0, j);
    yc(i, 0) = y[i] - y_mean;
  }
  const Matrix w = ridge_solve(xc, yc, 1e-10);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.beta[j], w(j, 0), 1e-4);
}

TEST(Lasso, KktOnRandomProblems) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t n = 20 + rng.below(30), p = 2 + rng.below(10);
    const Matrix x = rng.normal_matrix(n, p);
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x(i, 0) * 1.5 - x(i, p - 1) + rng.normal();
    const double lambda = 0.01 + 0.3 * rng.uniform();
    const LassoResult r = lasso_fit(x, y, lambda);
    EXPECT_TRUE(r.converged);
    EXPECT_LT(kkt_violation(x, y, lambda, r), 1e-6) << "seed " << s;
  }
}

TEST(Lasso, NonConvergenceIsReported) {
  // The first sweep always moves some coefficient off zero when there is signal above lambda.
  Rng rng(5);
  const Matrix x = rng.normal_matrix(40, 3);
  Vector y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = x(i, 0) + x(i, 1) + 0.1 * rng.normal();
  const LassoResult r = lasso_fit(x, y, 1e-3, {1e-8, 1});
  EXPECT_FALSE(r.converged);
  ASSERT_TRUE(r.warning.has_value());
  EXPECT_EQ(r.sweeps, 1u);
  EXPECT_TRUE(lasso_fit(x, y, 1e-3).converged);
}

TEST(Backproject, ZeroFeaturesAndPlantedVoxel) {
  const Dataset ds = small_data();
  const auto idx = train_indices(ds);
  const Matrix vox = gather_rows(ds.voxels, idx);
  const BackprojectResult zero = backproject(Matrix(vox.rows(), 3), vox, ds.mask, 0.01);
  EXPECT_EQ(zero.low_level, 0.0);
  EXPECT_EQ(zero.high_level, 0.0);

  const std::size_t v = ds.mask.low_indices()[5];
  Matrix f(vox.rows(), 1);
  for (std::size_t i = 0; i < vox.rows(); ++i) f(i, 0) = vox(i, v);
  const BackprojectResult one = backproject(f, vox, ds.mask, 0.01);
  EXPECT_GE(one.low_level, 10.0 * one.high_level);
  EXPECT_EQ(one.voxel_mean_abs_beta.size(), vox.cols());
  EXPECT_THROW(backproject(f, Matrix(vox.rows(), 3), ds.mask, 0.01), ShapeMismatch);
  EXPECT_THROW(backproject(f, vox, ds.mask, -1.0), RangeError);
}

TEST(Evaluate, UntrainedNullAndTextOnly) {
  const Dataset ds = small_data();
  const TrainConfig tc;
  ModelConfig mc = small_model();
  const auto idx = test_indices(ds);
  double sum = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const EvalMetrics m = evaluate(init_params(mc, Rng(s)), ds, tc.layer_range, true, idx);
    ASSERT_TRUE(m.two_way_image && m.pixcorr);
    EXPECT_TRUE(m.ssim.has_value());  // 12x16 fits the 11x11 window
    sum += *m.two_way_image;
  }
  EXPECT_NEAR(sum / 5.0, 50.0, 8.0);
  const EvalMetrics t = evaluate(init_params(mc, Rng(0), ModelVariant::text_only), ds, tc.layer_range, true, idx);
  EXPECT_FALSE(t.two_way_image.has_value());
  EXPECT_FALSE(t.pixcorr.has_value());
  EXPECT_TRUE(t.two_way_text.has_value());
}

TEST(Evaluate, RunAblationFullMatchesTrain) {
  const Dataset ds = small_data();
  const TrainConfig tc = short_train(2);
  const AblationResult a = run_ablation(ModelVariant::full, ds, small_model(), tc);
  const TrainResult t = train(ds, small_model(), tc);
  EXPECT_TRUE(same_history(a.trained.report, t.report));
  EXPECT_EQ(*a.metrics.two_way_image, *evaluate_test(t.params, ds, tc).two_way_image);
  EXPECT_EQ(primary_identification(a.metrics), *a.metrics.two_way_image);
}

TEST(LayerScan, ValidationAndRanking) {
  const Dataset ds = small_data();
  EXPECT_THROW(layer_scan(ds, {{{3, 8}, false}}, small_model(), short_train(1)), RangeError);
  EXPECT_THROW(layer_scan(ds, {}, small_model(), short_train(1)), UsageError);
  const auto rows = layer_scan(ds, {{{2, 4}, true}, {{2, 4}, false}}, small_model(), short_train(2));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].entry.include_final);
  std::ostringstream os;
  write_layer_scan_csv(os, {{{{2, 4}, false}, 60.0}, {{{2, 4}, true}, 75.5}, {{{5, 7}, true}, 60.0}});
  EXPECT_EQ(os.str(),
            "rank,layer_lo,layer_hi,include_final,two_way_image\n1,2,4,1,75.5\n2,2,4,0,60\n3,5,7,1,60\n");
}
