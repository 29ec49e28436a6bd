#include <gtest/gtest.h>

#include <cmath>

#include "dam/dam_conv.hpp"
#include "dam/gradcheck.hpp"
#include "oracles.hpp"

using namespace dam;

namespace {

DamConv make_layer(WeightTensor w, std::vector<Real> b, Activation act = Activation::identity, bool diff = false) {
  const auto in = w.in_channels();
  return DamConv(std::move(w), std::move(b), MultiscaleParams::uniform(in), act, diff);
}

WeightTensor identity_kernel(std::size_t channels, std::size_t k = 3) {
  WeightTensor w(channels, channels, k, k);
  for (std::size_t c = 0; c < channels; ++c) w(c, c, k / 2, k / 2) = 1;
  return w;
}

MultiscaleParams params(std::vector<Real> scales, Real mean, std::int32_t pool, std::int32_t q,
                        std::int32_t smax = 16) {
  MultiscaleParams p;
  p.scales = std::move(scales);
  p.mean_depth = mean;
  p.pool_product = pool;
  p.ancestor_dilation = q;
  p.max_dilation = smax;
  return p;
}

}  // namespace

TEST(Multiscale, PExamples) {
  EXPECT_DOUBLE_EQ(multiscale_p(params({1}, 1000, 1, 1), 0), 1000);
  EXPECT_DOUBLE_EQ(multiscale_p(params({2}, 1000, 2, 1), 0), 1000);
  EXPECT_DOUBLE_EQ(multiscale_p(params({0.5}, 2400, 1, 2), 0), 2400);
}

TEST(Multiscale, ValidationRejectsBadFactors) {
  EXPECT_THROW(params({0}, 1000, 1, 1).validate(1), Error);
  EXPECT_THROW(params({1}, 0, 1, 1).validate(1), Error);
  EXPECT_THROW(params({1}, 1000, 0, 1).validate(1), Error);
  EXPECT_THROW(params({1}, 1000, 1, 0).validate(1), Error);
  EXPECT_THROW(params({1, 1}, 1000, 1, 1).validate(3), Error);
}

TEST(Multiscale, GroupsAreContiguousQuartersAndThirds) {
  const std::vector<Real> four{1, 2, 3, 4};
  EXPECT_EQ(expand_scale_groups(four, 8), (std::vector<Real>{1, 1, 2, 2, 3, 3, 4, 4}));
  const std::vector<Real> three{1, 2, 3};
  EXPECT_EQ(expand_scale_groups(three, 6), (std::vector<Real>{1, 1, 2, 2, 3, 3}));
  EXPECT_EQ(expand_scale_groups(three, 3), (std::vector<Real>{1, 2, 3}));
  EXPECT_THROW(expand_scale_groups(four, 3), Error);
}

TEST(Sparsity, Examples) {
  const auto p = params({1}, 1000, 1, 1);
  EXPECT_EQ(compute_sparsity(p, DepthMap(1, 1, 500.0))(0, 0, 0), 2);
  EXPECT_EQ(compute_sparsity(p, DepthMap(1, 1, 1000.0))(0, 0, 0), 1);
  EXPECT_EQ(compute_sparsity(params({1}, 1000, 1, 1, 8), DepthMap(1, 1, 100.0))(0, 0, 0), 8);
}

TEST(Sparsity, RoundsHalfUpAndClampsAtOne) {
  const auto p = params({1}, 1000, 1, 1);
  EXPECT_EQ(compute_sparsity(p, DepthMap(1, 1, 1000.0 / 1.5))(0, 0, 0), 2);
  EXPECT_EQ(compute_sparsity(p, DepthMap(1, 1, 400.0))(0, 0, 0), 3);  // 2.5 -> 3
  EXPECT_EQ(compute_sparsity(p, DepthMap(1, 1, 5000.0))(0, 0, 0), 1);
}

TEST(Sparsity, PerChannelScales) {
  const auto s = compute_sparsity(params({1, 3}, 1000, 1, 1), DepthMap(1, 1, 500.0));
  EXPECT_EQ(s(0, 0, 0), 2);
  EXPECT_EQ(s(1, 0, 0), 6);
}

TEST(Sparsity, NonPositiveDepthIsAnError) {
  EXPECT_THROW(compute_sparsity(params({1}, 1000, 1, 1), DepthMap(1, 1, 0.0)), Error);
}

TEST(Sparsity, MonotoneNonIncreasingInDepth) {
  oracle::Random rng(21);
  DepthMap d(6, 6);
  for (auto& v : d.values()) v = rng.uniform(50, 5000);
  const auto s = compute_sparsity(params({1.7, 0.6}, 1300, 1, 2), d);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t a = 0; a < d.size(); ++a) {
      for (std::size_t b = 0; b < d.size(); ++b) {
        if (d.values()[a] <= d.values()[b]) {
          EXPECT_GE(s.values()[r * d.size() + a], s.values()[r * d.size() + b]);
        }
      }
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_GE(s.values()[r * d.size() + i], 1);
      EXPECT_LE(s.values()[r * d.size() + i], 16);
    }
  }
}

TEST(DamForward, IdentityKernelReproducesInputForAnySparsity) {
  oracle::Random rng(1);
  const auto x = rng.map(2, 7, 6);
  auto layer = make_layer(identity_kernel(2), {0, 0});
  const auto y = layer.forward_with_sparsity(x, rng.sparsity(2, 7, 6, 1, 4));
  EXPECT_EQ(y, x);
}

TEST(DamForward, DenseEquivalenceAtUnitSparsity) {
  oracle::Random rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = static_cast<std::size_t>(rng.integer(1, 4));
    const auto o = static_cast<std::size_t>(rng.integer(1, 4));
    const auto h = static_cast<std::size_t>(rng.integer(1, 16));
    const auto w = static_cast<std::size_t>(rng.integer(1, 16));
    const auto k = static_cast<std::size_t>(2 * rng.integer(0, 2) + 1);
    const auto x = rng.map(c, h, w);
    const auto wt = rng.weights(o, c, k, k);
    const auto b = rng.vector(o);
    const bool relu = trial % 2 == 0;
    auto layer = make_layer(wt, b, relu ? Activation::relu : Activation::identity);
    const auto y = layer.forward_with_sparsity(x, SparsityMap(c, h, w, 1));
    const auto ref = oracle::dense_conv(x, wt, b, relu);
    EXPECT_LT(oracle::max_abs_diff(y.values(), ref.values()), 1e-12) << "trial " << trial;
  }
}

TEST(DamForward, MatchesNestedLoopOracleWithMixedSparsity) {
  oracle::Random rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const bool diff = trial % 2 == 1;
    const auto x = rng.map(3, 9, 11);
    const auto wt = rng.weights(2, 3, 3, 3);
    const auto b = rng.vector(2);
    const auto s = rng.sparsity(3, 9, 11, 1, 5);
    auto layer = make_layer(wt, b, Activation::relu, diff);
    const auto y = layer.forward_with_sparsity(x, s);
    EXPECT_LT(oracle::max_abs_diff(y.values(), oracle::dam_conv(x, wt, b, s, diff, true).values()), 1e-12);
  }
}

TEST(DamForward, ForwardFromDepthUsesComputedSparsity) {
  oracle::Random rng(5);
  const auto x = rng.map(2, 6, 6);
  DepthMap d(6, 6);
  for (auto& v : d.values()) v = rng.uniform(200, 2000);
  const auto wt = rng.weights(2, 2, 3, 3);
  const auto b = rng.vector(2);
  DamConv layer(wt, b, params({1, 2}, 1000, 1, 1), Activation::relu);
  const auto y = layer.forward(x, d);
  const auto s = compute_sparsity(layer.params(), d);
  EXPECT_EQ(layer.cached_sparsity(), s);
  EXPECT_LT(oracle::max_abs_diff(y.values(), oracle::dam_conv(x, wt, b, s, false, true).values()), 1e-12);
}

TEST(DamForward, FigureThreeTapColumns) {
  // One output pixel, all-ones kernel: the input gradient marks exactly the taps read.
  const std::size_t h = 10, w = 20;
  WeightTensor ones(1, 1, 3, 3, 1.0);
  auto layer = make_layer(ones, {0});
  struct Case {
    std::size_t col;
    std::int32_t s;
    std::vector<std::size_t> rows, cols;
  };
  for (const auto& c : {Case{2, 1, {3, 4, 5}, {1, 2, 3}}, Case{7, 2, {2, 4, 6}, {5, 7, 9}},
                        Case{15, 3, {1, 4, 7}, {12, 15, 18}}}) {
    SparsityMap s(1, h, w, 1);
    s(0, 4, c.col) = c.s;
    layer.forward_with_sparsity(FeatureMap(1, h, w, 1.0), s);
    FeatureMap g(1, h, w, 0.0);
    g(0, 4, c.col) = 1;
    const auto gx = layer.backward_input(g);
    std::size_t nonzero = 0;
    for (std::size_t m = 0; m < h; ++m) {
      for (std::size_t n = 0; n < w; ++n) {
        const bool expected = std::find(c.rows.begin(), c.rows.end(), m) != c.rows.end() &&
                              std::find(c.cols.begin(), c.cols.end(), n) != c.cols.end();
        EXPECT_EQ(gx(0, m, n), expected ? 1.0 : 0.0) << "S=" << c.s << " at " << m << "," << n;
        nonzero += gx(0, m, n) != 0;
      }
    }
    EXPECT_EQ(nonzero, 9u);
  }
}

TEST(DamForward, OutOfBoundsTapsReadZero) {
  WeightTensor w(1, 1, 3, 3, 1.0);
  auto layer = make_layer(w, {0});
  const auto y = layer.forward_with_sparsity(FeatureMap(1, 3, 3, 1.0), SparsityMap(1, 3, 3, 2));
  EXPECT_EQ(y(0, 1, 1), 1.0);  // every tap but the centre lands outside
  EXPECT_EQ(y(0, 0, 0), 4.0);  // centre, (0,2), (2,0), (2,2)
}

TEST(DamForward, LinearityWithIdentityActivation) {
  oracle::Random rng(6);
  const auto x = rng.map(2, 8, 8);
  const auto s = rng.sparsity(2, 8, 8, 1, 3);
  auto layer = make_layer(rng.weights(3, 2, 3, 3), rng.vector(3));
  const auto f0 = layer.forward_with_sparsity(FeatureMap(2, 8, 8, 0.0), s);
  const auto fx = layer.forward_with_sparsity(x, s);
  for (Real alpha : {-2.0, 0.5, 3.0}) {
    FeatureMap ax = x;
    for (auto& v : ax.values()) v *= alpha;
    const auto fax = layer.forward_with_sparsity(ax, s);
    for (std::size_t i = 0; i < fax.size(); ++i) {
      EXPECT_NEAR(fax.values()[i] - f0.values()[i], alpha * (fx.values()[i] - f0.values()[i]), 1e-12);
    }
  }
}

TEST(DamForward, ShapeErrors) {
  auto layer = make_layer(WeightTensor(1, 2, 3, 3), {0});
  EXPECT_THROW(layer.forward_with_sparsity(FeatureMap(1, 4, 4), SparsityMap(1, 4, 4)), Error);
  EXPECT_THROW(layer.forward_with_sparsity(FeatureMap(2, 4, 4), SparsityMap(2, 4, 5)), Error);
  EXPECT_THROW(layer.forward(FeatureMap(2, 4, 4), DepthMap(4, 3, 1000.0)), Error);
  EXPECT_THROW(make_layer(WeightTensor(2, 1, 3, 3), {0}), Error);  // bias length
}

TEST(DepthDiff, ConstantInputGivesBiasOnly) {
  oracle::Random rng(7);
  auto layer = make_layer(rng.weights(2, 1, 3, 3), {0.25, -0.75}, Activation::identity, true);
  const auto y = layer.forward_depth_diff(FeatureMap(1, 6, 6, 3.7), DepthMap(6, 6, 700.0));
  for (std::size_t m = 0; m < 6; ++m) {
    for (std::size_t n = 0; n < 6; ++n) {
      EXPECT_EQ(y(0, m, n), 0.25);
      EXPECT_EQ(y(1, m, n), -0.75);
    }
  }
}

TEST(DepthDiff, HandExample) {
  auto layer = make_layer(WeightTensor(1, 1, 1, 3, 1.0), {0}, Activation::identity, true);
  const auto y = layer.forward_depth_diff(FeatureMap(1, 1, 3, std::vector<Real>{1, 2, 4}), DepthMap(1, 3, 1000.0));
  EXPECT_DOUBLE_EQ(y(0, 0, 1), 1.0);
}

TEST(DepthDiff, AdditiveShiftInvariance) {
  oracle::Random rng(8);
  const auto x = rng.map(1, 10, 10, 0.5, 3);
  DepthMap d(10, 10);
  for (auto& v : d.values()) v = rng.uniform(300, 1500);
  auto layer = DamConv(rng.weights(4, 1, 3, 3), rng.vector(4), params({1}, 1000, 1, 1), Activation::relu, true);
  const auto base = layer.forward_depth_diff(x, d);
  for (Real c : {-5.0, 1.0, 1000.0}) {
    FeatureMap shifted = x;
    for (auto& v : shifted.values()) v += c;
    EXPECT_LT(oracle::max_abs_diff(layer.forward_depth_diff(shifted, d).values(), base.values()), 1e-12);
  }
}

TEST(DepthDiff, RequiresDiffMode) {
  auto layer = make_layer(WeightTensor(1, 1, 3, 3), {0});
  EXPECT_THROW(layer.forward_depth_diff(FeatureMap(1, 2, 2), DepthMap(2, 2, 1000.0)), Error);
}

TEST(DamBackward, CalledBeforeForwardIsAnError) {
  auto layer = make_layer(WeightTensor(1, 1, 3, 3), {0});
  EXPECT_THROW(layer.backward_weights(FeatureMap(1, 2, 2), 0), Error);
  EXPECT_THROW(layer.backward_input(FeatureMap(1, 2, 2)), Error);
}

TEST(DamBackward, ZeroGradientAndPureDecay) {
  oracle::Random rng(10);
  const auto w = rng.weights(2, 2, 3, 3);
  auto layer = make_layer(w, {0, 0}, Activation::relu);
  layer.forward_with_sparsity(rng.map(2, 5, 5), rng.sparsity(2, 5, 5, 1, 2));
  const auto g0 = layer.backward_weights(FeatureMap(2, 5, 5, 0.0), 0);
  for (Real v : g0.weights.values()) EXPECT_EQ(v, 0.0);
  for (Real v : g0.bias) EXPECT_EQ(v, 0.0);
  const auto gl = layer.backward_weights(FeatureMap(2, 5, 5, 0.0), 0.0005);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(gl.weights.values()[i], 0.0005 * w.values()[i]);
}

TEST(DamBackward, IdentityKernelPassesGradientThrough) {
  oracle::Random rng(11);
  auto layer = make_layer(identity_kernel(2), {0, 0});
  layer.forward_with_sparsity(rng.map(2, 6, 7), rng.sparsity(2, 6, 7, 1, 3));
  const auto g = rng.map(2, 6, 7);
  EXPECT_EQ(layer.backward_input(g), g);
}

TEST(DamBackward, SinglePixelScatterAtSparsityTwo) {
  oracle::Random rng(12);
  const auto w = rng.weights(2, 1, 3, 3);
  auto layer = make_layer(w, {0, 0});
  layer.forward_with_sparsity(FeatureMap(1, 9, 9, 1.0), SparsityMap(1, 9, 9, 2));
  FeatureMap g(2, 9, 9, 0.0);
  g(1, 4, 4) = 1;
  const auto gx = layer.backward_input(g);
  for (std::size_t m = 0; m < 9; ++m) {
    for (std::size_t n = 0; n < 9; ++n) {
      const bool tap = (m == 2 || m == 4 || m == 6) && (n == 2 || n == 4 || n == 6);
      const Real expected = tap ? w(1, 0, (m - 2) / 2, (n - 2) / 2) : 0.0;
      EXPECT_EQ(gx(0, m, n), expected);
    }
  }
}

TEST(DamBackward, MatchesLiteralScatterLoopAndWeightSums) {
  oracle::Random rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const bool diff = trial % 2 == 0;
    const auto x = rng.map(3, 7, 9);
    const auto wt = rng.weights(4, 3, 3, 3);
    const auto b = rng.vector(4);
    const auto s = rng.sparsity(3, 7, 9, 1, 4);
    const auto g = rng.map(4, 7, 9);
    auto layer = make_layer(wt, b, Activation::relu, diff);
    layer.forward_with_sparsity(x, s);

    // Mask by the ReLU derivative ourselves, from the oracle pre-activation.
    auto gpre = g;
    const auto pre = oracle::dam_preactivation(x, wt, b, s, diff);
    for (std::size_t i = 0; i < gpre.size(); ++i) {
      if (pre.values()[i] <= 0) gpre.values()[i] = 0;
    }
    const auto gx = layer.backward_input(g);
    const auto gx_ref = oracle::scatter_input_gradient(gpre, wt, s, 3, diff);
    EXPECT_LT(oracle::max_abs_diff(gx.values(), gx_ref.values()), 1e-12);

    const auto gw = layer.backward_weights(g, 0.01);
    const auto gw_ref = oracle::weight_gradient(gpre, x, wt, s, diff, 0.01);
    EXPECT_LT(oracle::max_abs_diff(gw.weights.values(), gw_ref.values()), 1e-12);
    for (std::size_t t = 0; t < 4; ++t) {
      Real sum = 0;
      for (std::size_t i = 0; i < 63; ++i) sum += gpre.values()[t * 63 + i];
      EXPECT_NEAR(gw.bias[t], sum, 1e-12);
    }
  }
}

TEST(DamBackward, FiniteDifferencesSmallLayer) {
  // Random 1x5x5 input, S in {1,2}: every block within 1e-6.
  GradcheckOptions opt;
  opt.tolerance = 1e-6;
  for (bool diff : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto report = check_random_layer(seed, 1, 2, 5, 5, diff, opt);
      EXPECT_TRUE(report.passed()) << report.to_table();
    }
  }
}

TEST(DamBackward, FiniteDifferencesMixedSparsityBothModes) {
  GradcheckOptions opt;
  opt.tolerance = 1e-5;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto report = check_random_layer(seed, 3, 2, 6, 7, seed % 2 == 0, opt);
    EXPECT_TRUE(report.passed()) << report.to_table();
  }
}

TEST(DamBackward, CorruptedGradientIsCaught) {
  GradcheckOptions opt;
  opt.corrupt = [](std::vector<std::vector<Real>>& g) { g[2][3] += 0.01; };
  EXPECT_FALSE(check_random_layer(1, 2, 2, 5, 5, false, opt).passed());
}
