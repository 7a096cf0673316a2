#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "brainmclip/alignment/cka.hpp"
#include "brainmclip/alignment/csv.hpp"
#include "brainmclip/alignment/rsa.hpp"
#include "brainmclip/core/rng.hpp"
#include "brainmclip/data/synth.hpp"
#include "support/oracles.hpp"

using namespace brainmclip;

namespace {

const Matrix kA{{1, 0}, {0, 1}, {1, 1}};
const Matrix kB{{2, 1}, {0, 0}, {1, 2}};

Matrix random_orthogonal(Rng& rng, std::size_t d) { return oracle::orthonormalize(rng.normal_matrix(d, d)); }

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i-- > 1;) std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

}  // namespace

TEST(Hsic, HandExampleMatchesExplicitOracle) {
  EXPECT_NEAR(hsic(kA, kB), oracle::hsic_explicit(kA, kB), 1e-12);
  EXPECT_NEAR(cka(kA, kB), oracle::cka_explicit(kA, kB), 1e-12);
}

TEST(Hsic, IdenticalRowsGiveZero) {
  Rng rng(2);
  EXPECT_NEAR(hsic(Matrix(4, 3, 1.5), rng.normal_matrix(4, 2)), 0.0, 1e-12);
}

TEST(Hsic, ErrorsOnBadShapes) {
  EXPECT_THROW(hsic(Matrix(3, 2), Matrix(4, 2)), ShapeMismatch);
  EXPECT_THROW(hsic(Matrix(1, 2), Matrix(1, 2)), DegenerateInput);
  EXPECT_THROW(cka(Matrix(3, 2, 1.0), kB), DegenerateInput);
}

TEST(Hsic, RandomInstancesMatchOracle) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 2 + rng.below(15);
    const Matrix a = rng.normal_matrix(m, 1 + rng.below(6));
    const Matrix b = rng.normal_matrix(m, 1 + rng.below(6));
    EXPECT_NEAR(hsic(a, b), oracle::hsic_explicit(a, b), 1e-12);
    EXPECT_GE(hsic(a, a), -1e-10);
    EXPECT_NEAR(cka(a, b), oracle::cka_explicit(a, b), 1e-12);
  }
}

TEST(Cka, SelfScaleRotationInvariance) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 3 + rng.below(10), d = 1 + rng.below(6);
    const Matrix a = rng.normal_matrix(m, d);
    const Matrix b = rng.normal_matrix(m, 1 + rng.below(6));
    EXPECT_NEAR(cka(a, a), 1.0, 1e-9);
    for (double c : {0.1, -2.0, 7.0}) EXPECT_NEAR(cka(a, c * a), 1.0, 1e-9);
    EXPECT_NEAR(cka(a, matmul(a, random_orthogonal(rng, d))), 1.0, 1e-9);
    EXPECT_NEAR(cka(a, b), cka(b, a), 1e-12);
    EXPECT_NEAR(cka(3.0 * a, b), cka(a, b), 1e-9);
    EXPECT_NEAR(cka(matmul(a, random_orthogonal(rng, d)), b), cka(a, b), 1e-9);
    const double raw = cka_unclamped(a, b);
    EXPECT_GE(raw, -1e-9);
    EXPECT_LE(raw, 1.0 + 1e-9);
  }
}

TEST(Rdm, HandExamples) {
  const Matrix f{{1, 2, 3}, {1, 2, 3}, {-1, -2, -3}};
  const Rdm r = rdm_from_features(f);
  EXPECT_NEAR(r(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(r(0, 2), 2.0, 1e-15);
  const Matrix shifted{{1, 2, 3, 5}, {9, 8, 7, 5}};  // second row is -first + 10
  EXPECT_NEAR(rdm_from_features(shifted)(0, 1), 2.0, 1e-12);
}

TEST(Rdm, ConstantRowReportsIndex) {
  try {
    rdm_from_features(Matrix{{1, 2}, {3, 4}, {5, 5}});
    FAIL() << "expected DegenerateInput";
  } catch (const DegenerateInput& e) {
    EXPECT_NE(std::string(e.what()).find("stimulus 2"), std::string::npos);
  }
  EXPECT_THROW(rdm_from_features(Matrix{{1, 2}}), DegenerateInput);
}

TEST(Rdm, MatchesDoubleLoopOracleAndInvariants) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Matrix f = rng.normal_matrix(3 + rng.below(10), 4);
    const Rdm r = rdm_from_features(f);
    EXPECT_LT(max_abs_diff(r.values(), oracle::rdm(f)), 1e-12);
    for (std::size_t i = 0; i < r.n(); ++i) {
      EXPECT_EQ(r(i, i), 0.0);
      for (std::size_t j = 0; j < r.n(); ++j) {
        EXPECT_EQ(r(i, j), r(j, i));
        EXPECT_GE(r(i, j), 0.0);
        EXPECT_LE(r(i, j), 2.0);
      }
    }
  }
}

TEST(Rsa, IdentityAndRankInvariance) {
  Rng rng(7);
  const Rdm r = rdm_from_features(rng.normal_matrix(8, 5));
  EXPECT_NEAR(rsa(r, r), 1.0, 1e-12);
  Matrix cubed = r.values();
  for (double& v : cubed.values()) v = std::exp(3.0 * v);
  EXPECT_NEAR(rsa(r, Rdm(cubed)), 1.0, 1e-12);
  EXPECT_THROW(rsa(r, rdm_from_features(rng.normal_matrix(7, 5))), ShapeMismatch);
}

TEST(Rsa, IndependentFeaturesNearZero) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(100 + s);
    const Rdm r1 = rdm_from_features(rng.normal_matrix(20, 10));
    const Rdm r2 = rdm_from_features(rng.normal_matrix(20, 10));
    EXPECT_LT(std::abs(rsa(r1, r2)), 0.35) << "seed " << s;
  }
}

TEST(LayerStack, ValidatesIds) {
  EXPECT_THROW(LayerStack({2, 1}, {Matrix(3, 2), Matrix(3, 2)}), RangeError);
  EXPECT_THROW(LayerStack({1, 2}, {Matrix(3, 2), Matrix(4, 2)}), ShapeMismatch);
  EXPECT_THROW(LayerStack({1}, {}), ShapeMismatch);
  const LayerStack s({1, 5}, {Matrix(3, 2), Matrix(3, 2, 1.0)});
  EXPECT_EQ(s.index_of(5), 1u);
  EXPECT_THROW(s.index_of(3), RangeError);
}

TEST(LayerCkaHeatmap, ScaledLayerAndSymmetry) {
  Rng rng(8);
  const Matrix l1 = rng.normal_matrix(10, 6);
  const Matrix h = layer_cka_heatmap(LayerStack({1, 2, 3}, {l1, 3.0 * l1, rng.normal_matrix(10, 6)}));
  EXPECT_NEAR(h(0, 1), 1.0, 1e-9);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(h(i, i), 1.0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(h(i, j), h(j, i), 1e-9);
  }
  EXPECT_THROW(layer_cka_heatmap(LayerStack({1}, {l1})), DegenerateInput);
}

TEST(LayerCkaHeatmap, ErrorNamesLayers) {
  Rng rng(1);
  try {
    layer_cka_heatmap(LayerStack({4, 9}, {rng.normal_matrix(5, 3), Matrix(5, 3, 2.0)}));
    FAIL() << "expected DegenerateInput";
  } catch (const DegenerateInput& e) {
    EXPECT_NE(std::string(e.what()).find("layers 4 and 9"), std::string::npos);
  }
}

TEST(LayerCkaHeatmap, PlantedBlocks) {
  // Two latent sources; layers 1-3 read the first, layers 4-6 the second.
  Rng rng(12);
  const Matrix z1 = rng.normal_matrix(60, 5), z2 = rng.normal_matrix(60, 5);
  std::vector<Matrix> layers;
  std::vector<int> ids;
  for (int l = 0; l < 6; ++l) {
    layers.push_back(matmul(l < 3 ? z1 : z2, rng.normal_matrix(5, 12)) + rng.normal_matrix(60, 12, 0.3));
    ids.push_back(l + 1);
  }
  const Matrix h = layer_cka_heatmap(LayerStack(ids, layers));
  double within = 0, cross = 0;
  int nw = 0, nc = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) {
      if ((i < 3) == (j < 3)) within += h(i, j), ++nw;
      else cross += h(i, j), ++nc;
    }
  EXPECT_GT(within / nw, cross / nc);
}

TEST(RegionLayerRsa, RegionEqualToLayerScoresOne) {
  Rng rng(9);
  const LayerStack s({1, 2}, {rng.normal_matrix(12, 6), rng.normal_matrix(12, 6)});
  const auto table = region_layer_rsa({{"r", s.layer(1)}}, s, RsaRaw{});
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[1].layer, 2);
  EXPECT_NEAR(table[1].similarity, 1.0, 1e-12);
}

TEST(RegionLayerRsa, RawModeIgnoresPerStimulusShifts) {
  Rng rng(10);
  const LayerStack s({1, 2, 3}, {rng.normal_matrix(15, 6), rng.normal_matrix(15, 6), rng.normal_matrix(15, 6)});
  const Matrix region = rng.normal_matrix(15, 9);
  Matrix shifted = region;
  for (std::size_t i = 0; i < shifted.rows(); ++i)
    for (double& v : shifted.row(i)) v += 5.0 * static_cast<double>(i) - 3.0;
  const auto a = region_layer_rsa({{"r", region}}, s, RsaRaw{});
  const auto b = region_layer_rsa({{"r", shifted}}, s, RsaRaw{});
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k].similarity, b[k].similarity, 1e-9);
}

TEST(RegionLayerRsa, ShuffledLabelsNull) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    const Matrix layer = rng.normal_matrix(20, 8);
    const Matrix region = layer + rng.normal_matrix(20, 8, 0.1);
    const auto perm = permutation(rng, 20);
    const auto table = region_layer_rsa({{"r", gather_rows(region, perm)}}, LayerStack({1}, {layer}), RsaRaw{});
    EXPECT_LT(std::abs(table[0].similarity), 0.35) << "seed " << seed;
  }
}

TEST(RegionLayerRsa, RidgeModeSplitAndErrors) {
  Rng rng(11);
  const Matrix z = rng.normal_matrix(40, 4);
  const LayerStack s({1}, {matmul(z, rng.normal_matrix(4, 10))});
  const auto table = region_layer_rsa({{"r", matmul(z, rng.normal_matrix(4, 7))}}, s, RsaRidge{1e-6});
  EXPECT_GT(table[0].similarity, 0.99);
  const LayerStack tiny({1}, {rng.normal_matrix(5, 3)});
  EXPECT_THROW(region_layer_rsa({{"r", rng.normal_matrix(5, 3)}}, tiny, RsaRidge{1.0}), DegenerateInput);
  EXPECT_THROW(region_layer_rsa({{"r", rng.normal_matrix(6, 3)}}, tiny, RsaRaw{}), ShapeMismatch);
}

TEST(RegionLayerRsa, PlantedHierarchyDirection) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    sc.n_train = 128;
    sc.n_test = 0;
    const Dataset ds = synth_generate(sc);
    const auto table = region_layer_rsa({{"low_level", region_columns(ds.voxels, ds.mask, Region::low_level)},
                                         {"high_level", region_columns(ds.voxels, ds.mask, Region::high_level)}},
                                        ds.layers, RsaRaw{});
    const std::size_t l = ds.layers.size();
    std::vector<double> low, high;
    for (const auto& e : table) (e.region == "low_level" ? low : high).push_back(e.similarity);
    ASSERT_EQ(low.size(), l);
    const auto low_peak = std::max_element(low.begin(), low.end()) - low.begin();
    const auto high_peak = std::max_element(high.begin(), high.end()) - high.begin();
    EXPECT_LT(low_peak, high_peak) << "seed " << seed;
    EXPECT_EQ(static_cast<std::size_t>(high_peak), l - 1) << "seed " << seed;
    // Low-level similarity tracks the planted detail weight.
    EXPECT_GT(spearman(sc.resolved_alpha(), low), 0.6);
    EXPECT_GT(*std::max_element(low.begin(), low.end() - 1), low.back());
  }
}

TEST(AnalysisCsv, Formats) {
  std::ostringstream os;
  write_pairs_csv(os, Matrix{{1, 0.5}, {0.5, 1}}, {3, 7});
  EXPECT_EQ(os.str(), "i,j,value\n3,3,1\n3,7,0.5\n7,3,0.5\n7,7,1\n");
  std::ostringstream rs;
  write_rsa_csv(rs, {{"low_level", 2, 1.0 / 3.0}});
  EXPECT_EQ(rs.str(), "region,layer,similarity\nlow_level,2,0.333333333\n");
  EXPECT_THROW(write_pairs_csv(os, Matrix(2, 2), {1}), ShapeMismatch);
}
