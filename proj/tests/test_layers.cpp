#include <gtest/gtest.h>

#include <cmath>

#include "dam/layers.hpp"
#include "oracles.hpp"

using namespace dam;

TEST(Relu, ForwardAndBackward) {
  const FeatureMap x(1, 1, 3, std::vector<Real>{-1, 0, 2});
  EXPECT_EQ(relu_forward(x), FeatureMap(1, 1, 3, std::vector<Real>{0, 0, 2}));
  EXPECT_EQ(relu_backward(FeatureMap(1, 1, 3, 5.0), x), FeatureMap(1, 1, 3, std::vector<Real>{0, 0, 5}));
  const FeatureMap pos(2, 2, 2, 0.5);
  EXPECT_EQ(relu_forward(pos), pos);
}

TEST(MaxPool, ForwardPicksMaxWithArgmax) {
  MaxPool pool(2, 2);
  const auto y = pool.forward(FeatureMap(1, 2, 2, std::vector<Real>{1, 2, 3, 4}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.values()[0], 4);
  EXPECT_EQ(pool.argmax()[0], 3u);  // (1,1)
}

TEST(MaxPool, TiesRouteToSmallestIndex) {
  MaxPool pool(2, 2);
  const auto y = pool.forward(FeatureMap(1, 4, 4, 7.0));
  for (Real v : y.values()) EXPECT_EQ(v, 7.0);
  const auto g = pool.backward(FeatureMap(1, 2, 2, 1.0));
  EXPECT_EQ(g(0, 0, 0), 1.0);
  EXPECT_EQ(g(0, 0, 1), 0.0);
  EXPECT_EQ(g(0, 1, 0), 0.0);
  EXPECT_EQ(g(0, 0, 2), 1.0);
  EXPECT_EQ(pool.min_tie_margin(), 0.0);
}

TEST(MaxPool, BackwardPlacesGradientAtArgmax) {
  MaxPool pool(2, 2);
  pool.forward(FeatureMap(1, 2, 2, std::vector<Real>{1, 9, 3, 4}));
  const auto g = pool.backward(FeatureMap(1, 1, 1, 2.5));
  EXPECT_EQ(g, FeatureMap(1, 2, 2, std::vector<Real>{0, 2.5, 0, 0}));
}

TEST(MaxPool, GradientMassIsConserved) {
  oracle::Random rng(3);
  MaxPool pool(3, 2);
  const auto y = pool.forward(rng.map(3, 9, 8));
  const auto g = rng.map(y.channels(), y.height(), y.width());
  const auto gx = pool.backward(g);
  Real in = 0, out = 0;
  for (Real v : g.values()) in += v;
  for (Real v : gx.values()) out += v;
  EXPECT_NEAR(in, out, 1e-12);
}

TEST(MaxPool, DepthPooledOnTheSameGrid) {
  MaxPool pool(2, 2);
  const auto y = pool.forward(FeatureMap(1, 5, 4));
  const auto d = pool.forward_depth(DepthMap(5, 4, 900.0));
  EXPECT_EQ(d.height(), y.height());
  EXPECT_EQ(d.width(), y.width());
}

TEST(Softmax, Examples) {
  const auto p = softmax(FeatureMap(2, 1, 1, std::vector<Real>{0, 0}));
  EXPECT_DOUBLE_EQ(p.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(p.values()[1], 0.5);

  const auto q = softmax(FeatureMap(2, 1, 1, std::vector<Real>{0, std::log(3.0)}));
  EXPECT_NEAR(q.values()[0], 0.25, 1e-15);
  EXPECT_NEAR(q.values()[1], 0.75, 1e-15);

  const auto a = softmax(FeatureMap(2, 1, 1, std::vector<Real>{5, 5.7}));
  const auto b = softmax(FeatureMap(2, 1, 1, std::vector<Real>{0, 0.7}));
  EXPECT_NEAR(a.values()[1], b.values()[1], 1e-15);
}

TEST(Softmax, RowsSumToOneEvenForHugeLogits) {
  oracle::Random rng(4);
  auto x = rng.map(5, 4, 4, -50, 50);
  x(0, 0, 0) = 1000;
  x(1, 0, 0) = 999;
  const auto p = softmax(x);
  EXPECT_TRUE(p.all_finite());
  for (std::size_t m = 0; m < 4; ++m) {
    for (std::size_t n = 0; n < 4; ++n) {
      Real s = 0;
      for (std::size_t r = 0; r < 5; ++r) {
        EXPECT_GE(p(r, m, n), 0.0);
        EXPECT_LE(p(r, m, n), 1.0);
        s += p(r, m, n);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LogisticLoss, Examples) {
  LossConfig cfg;
  const auto perfect = logistic_loss(FeatureMap(2, 1, 1, std::vector<Real>{0, 1}), LabelMap(1, 1, 1), cfg);
  EXPECT_EQ(perfect.loss, 0.0);

  const auto half = logistic_loss(FeatureMap(2, 1, 1, std::vector<Real>{0.5, 0.5}), LabelMap(1, 1, 0), cfg);
  EXPECT_NEAR(half.loss, std::log(2.0), 1e-15);

  LossConfig ignore;
  ignore.ignore_label = 255;
  const auto none = logistic_loss(FeatureMap(2, 2, 1, 0.5), LabelMap(2, 1, 255, 255), ignore);
  EXPECT_EQ(none.loss, 0.0);
  EXPECT_EQ(none.counted_pixels, 0u);
  for (Real v : none.grad_logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(LogisticLoss, NormalizationDividesByPixelCount) {
  const FeatureMap p(2, 2, 2, 0.5);
  LossConfig on, off;
  off.normalize = false;
  const auto a = logistic_loss(p, LabelMap(2, 2, 0), on);
  const auto b = logistic_loss(p, LabelMap(2, 2, 0), off);
  EXPECT_NEAR(b.loss, 4 * a.loss, 1e-14);
  EXPECT_NEAR(b.grad_logits.values()[0], 4 * a.grad_logits.values()[0], 1e-14);
}

TEST(LogisticLoss, OutOfRangeLabelIsAnError) {
  EXPECT_THROW(logistic_loss(FeatureMap(2, 1, 1, 0.5), LabelMap(1, 1, 2), LossConfig{}), Error);
  EXPECT_THROW(logistic_loss(FeatureMap(2, 1, 2, 0.5), LabelMap(1, 1, 0), LossConfig{}), Error);
}

TEST(LogisticLoss, FusedGradientMatchesFiniteDifferences) {
  oracle::Random rng(5);
  const auto z = rng.map(3, 3, 4, -2, 2);
  LabelMap labels(3, 4);
  for (auto& l : labels.values()) l = static_cast<std::int32_t>(rng.integer(0, 2));
  LossConfig cfg;
  const auto res = logistic_loss(softmax(z), labels, cfg);
  const Real eps = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp.values()[i] += eps;
    zm.values()[i] -= eps;
    const Real num =
        (logistic_loss(softmax(zp), labels, cfg).loss - logistic_loss(softmax(zm), labels, cfg).loss) / (2 * eps);
    const Real a = res.grad_logits.values()[i];
    EXPECT_LT(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8}), 1e-6);
  }
}

TEST(LogisticLoss, NonNegativeAndZeroOnlyWhenCertain) {
  oracle::Random rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto p = softmax(rng.map(4, 2, 2, -3, 3));
    LabelMap l(2, 2);
    for (auto& v : l.values()) v = static_cast<std::int32_t>(rng.integer(0, 3));
    EXPECT_GT(logistic_loss(p, l, LossConfig{}).loss, 0.0);
  }
}

TEST(L2Penalty, Examples) {
  WeightTensor zero(1, 1, 1, 1, 0.0);
  WeightTensor two(1, 1, 1, 1, 2.0);
  WeightTensor pair(1, 2, 1, 1);
  pair.values()[0] = 1;
  pair.values()[1] = 2;
  const WeightTensor* z[] = {&zero};
  const WeightTensor* t[] = {&two};
  const WeightTensor* p[] = {&pair};
  EXPECT_EQ(l2_penalty(z), 0.0);
  EXPECT_EQ(l2_penalty(t), 2.0);
  EXPECT_DOUBLE_EQ(0.1 * l2_penalty(p), 0.25);
}
