// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ppmunet/adam.hpp"
#include "ppmunet/loss.hpp"
#include "ppmunet/rng.hpp"

namespace ppmunet {
namespace {

Tensor4<double> softmax_random(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  RngStream r(seed, 0);
  Tensor4<double> p(Shape4{n, c, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double z = 0;
        for (std::size_t k = 0; k < c; ++k) z += (p(b, k, y, x) = std::exp(2 * r.normal()));
        for (std::size_t k = 0; k < c; ++k) p(b, k, y, x) /= z;
      }
  return p;
}

LabelGrid random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  RngStream r(seed, 1);
  LabelGrid g(n, h, w);
  for (auto& v : g.data()) v = static_cast<std::uint8_t>(r.below(c));
  return g;
}

// Plain re-statement of the loss, written from scratch.
double gdl_reference(const Tensor4<double>& p, const LabelGrid& t, const std::vector<double>& w) {
  double num = 0, den = 0;
  for (std::size_t c = 0; c < p.c(); ++c)
    for (std::size_t b = 0; b < p.n(); ++b)
      for (std::size_t y = 0; y < p.h(); ++y)
        for (std::size_t x = 0; x < p.w(); ++x) {
          const double q = t(b, y, x) == c ? 1.0 : 0.0;
          num += w[c] * p(b, c, y, x) * q;
          den += w[c] * (p(b, c, y, x) + q);
        }
  return -2 * num / std::max(den, 1e-6);
}

TEST(Gdl, PerfectPredictionIsMinusOne) {
  const auto t = random_labels(2, 5, 7, 4, 3);
  const auto p = one_hot<double>(t, 4);
  EXPECT_DOUBLE_EQ(gdl_loss(p, t, ClassWeights::defaults(4)).loss, -1.0);
}

TEST(Gdl, DisjointPredictionIsZero) {
  const auto t = random_labels(1, 6, 6, 3, 4);
  LabelGrid shifted = t;
  for (auto& v : shifted.data()) v = static_cast<std::uint8_t>((v + 1) % 3);
  EXPECT_EQ(gdl_loss(one_hot<double>(shifted, 3), t, ClassWeights::defaults(3)).loss, 0.0);
}

TEST(Gdl, ExhaustiveTwoByTwoOneHot) {
  // Every target and every hard prediction on a 2x2 grid with 4 classes.
  const auto w = ClassWeights::defaults(4);
  LabelGrid t(1, 2, 2), q(1, 2, 2);
  for (int a = 0; a < 256; ++a) {
    for (int i = 0; i < 4; ++i) t.data()[i] = static_cast<std::uint8_t>((a >> (2 * i)) & 3);
    for (int b = 0; b < 256; ++b) {
      for (int i = 0; i < 4; ++i) q.data()[i] = static_cast<std::uint8_t>((b >> (2 * i)) & 3);
      const auto p = one_hot<double>(q, 4);
      const double got = gdl_loss(p, t, w).loss;
      ASSERT_NEAR(got, gdl_reference(p, t, w.values), 1e-15);
      ASSERT_LE(got, 0.0);
      ASSERT_GE(got, -1.0);
      if (a == b) ASSERT_DOUBLE_EQ(got, -1.0);
      else ASSERT_GT(got, -1.0);
    }
  }
}

TEST(Gdl, MatchesReferenceOnSoftInputs) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = softmax_random(2, 4, 3, 5, s);
    const auto t = random_labels(2, 3, 5, 4, s + 100);
    EXPECT_NEAR(gdl_loss(p, t, ClassWeights::defaults(4)).loss, gdl_reference(p, t, {1, 70, 20, 10}), 1e-14);
  }
}

TEST(Gdl, WeightScaleInvariance) {
  const auto p = softmax_random(1, 4, 4, 4, 7);
  const auto t = random_labels(1, 4, 4, 4, 8);
  const auto base = gdl_loss(p, t, ClassWeights::defaults(4));
  for (double k : {0.5, 3.0, 1000.0}) {
    ClassWeights w = ClassWeights::defaults(4);
    for (auto& v : w.values) v *= k;
    const auto r = gdl_loss(p, t, w);
    EXPECT_NEAR(r.loss, base.loss, 1e-14);
    for (std::size_t i = 0; i < r.grad.size(); ++i) EXPECT_NEAR(r.grad.data()[i], base.grad.data()[i], 1e-12);
  }
}

TEST(Gdl, ClassPermutationInvariance) {
  const auto p = softmax_random(1, 4, 4, 4, 9);
  const auto t = random_labels(1, 4, 4, 4, 10);
  const std::array<std::uint8_t, 4> perm{2, 0, 3, 1};
  Tensor4<double> pp(p.shape());
  LabelGrid tp(1, 4, 4);
  ClassWeights w{{0, 0, 0, 0}};
  const auto base = ClassWeights::defaults(4);
  for (std::size_t c = 0; c < 4; ++c) {
    w.values[perm[c]] = base.values[c];
    std::copy(p.plane(0, c).begin(), p.plane(0, c).end(), pp.plane(0, perm[c]).begin());
  }
  for (std::size_t i = 0; i < t.size(); ++i) tp.data()[i] = perm[t.data()[i]];
  EXPECT_NEAR(gdl_loss(pp, tp, w).loss, gdl_loss(p, t, base).loss, 1e-15);
}

TEST(Gdl, MovingMassToTargetLowersLoss) {
  const auto t = random_labels(1, 4, 4, 3, 11);
  auto p = softmax_random(1, 3, 4, 4, 12);
  const ClassWeights w{{1, 1, 1}};
  double prev = gdl_loss(p, t, w).loss;
  for (int step = 0; step < 10; ++step) {
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = p(0, c, y, x);
          v = t(0, y, x) == c ? v + 0.5 * (1 - v) : 0.5 * v;
        }
    const double cur = gdl_loss(p, t, w).loss;
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Gdl, GradientMatchesCentralDifferences) {
  const auto p = softmax_random(2, 4, 3, 3, 13);
  const auto t = random_labels(2, 3, 3, 4, 14);
  const auto w = ClassWeights::defaults(4);
  const auto r = gdl_loss(p, t, w);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto a = p, b = p;
    a.data()[i] += h;
    b.data()[i] -= h;
    const double fd = (gdl_reference(a, t, w.values) - gdl_reference(b, t, w.values)) / (2 * h);
    EXPECT_NEAR(r.grad.data()[i], fd, 1e-7) << i;
  }
}

TEST(Gdl, EmptyDenominatorGivesZero) {
  // Only a zero-weight class present and predicted.
  LabelGrid t(1, 2, 2);
  const Tensor4<double> p = one_hot<double>(t, 3);
  const auto r = gdl_loss(p, t, ClassWeights{{0, 1, 1}});
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Gdl, RejectsBadInput) {
  const auto p = softmax_random(1, 4, 2, 2, 1);
  LabelGrid t(1, 2, 2);
  EXPECT_THROW(gdl_loss(p, t, ClassWeights::defaults(3)), ValidationError);
  EXPECT_THROW(gdl_loss(p, t, ClassWeights{{-1, 1, 1, 1}}), ValidationError);
  EXPECT_THROW(gdl_loss(p, t, ClassWeights{{0, 0, 0, 0}}), ValidationError);
  EXPECT_THROW(gdl_loss(p, LabelGrid(1, 3, 2), ClassWeights::defaults(4)), ValidationError);
  t.data()[0] = 4;
  EXPECT_THROW(gdl_loss(p, t, ClassWeights::defaults(4)), ValidationError);
}

TEST(ClassWeights, Defaults) {
  EXPECT_EQ(ClassWeights::defaults(4).values, (std::vector<double>{1, 70, 20, 10}));
  EXPECT_EQ(ClassWeights::defaults(3).values, (std::vector<double>{1, 20, 10}));
  EXPECT_THROW(ClassWeights::defaults(5), ValidationError);
}

// --- Adam ------------------------------------------------------------------

ParamRegistry<double> scalar_registry(double w0) {
  ParamRegistry<double> reg;
  reg.add("w", Tensor4<double>(Shape4{1, 1, 1, 1}, w0), true);
  return reg;
}

TEST(Adam, TwoStepsMatchHandComputation) {
  auto reg = scalar_registry(1.0);
  auto st = AdamState<double>::init(reg, AdamHyper{0.1, 0.9, 0.999, 1e-8});
  Gradients<double> g{Tensor4<double>(Shape4{1, 1, 1, 1}, 0.5)};
  adam_step(reg, g, st);
  EXPECT_NEAR(reg[0].value.data()[0], 0.900000002, 1e-15);
  EXPECT_NEAR(st.m[0].data()[0], 0.05, 1e-16);
  EXPECT_NEAR(st.v[0].data()[0], 0.00025, 1e-18);
  g[0].fill(-1.0);
  adam_step(reg, g, st);
  EXPECT_NEAR(reg[0].value.data()[0], 0.9366103542405654, 1e-14);
  EXPECT_NEAR(st.m[0].data()[0], -0.055, 1e-16);
  EXPECT_NEAR(st.v[0].data()[0], 0.00124975, 1e-17);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias correction makes the first update lr * sign(g) up to epsilon.
  for (double g0 : {1e-3, -4.0, 250.0}) {
    auto reg = scalar_registry(0.0);
    auto st = AdamState<double>::init(reg, AdamHyper{1e-3, 0.9, 0.999, 1e-8});
    adam_step(reg, Gradients<double>{Tensor4<double>(Shape4{1, 1, 1, 1}, g0)}, st);
    EXPECT_NEAR(reg[0].value.data()[0], -1e-3 * (g0 > 0 ? 1 : -1), 1e-3 * 1e-8 / std::abs(g0) + 1e-15);
  }
}

TEST(Adam, ZeroGradientLeavesWeights) {
  auto reg = scalar_registry(2.5);
  auto st = AdamState<double>::init(reg);
  adam_step(reg, zero_gradients(reg), st);
  EXPECT_EQ(reg[0].value.data()[0], 2.5);
}

TEST(Adam, RejectsMismatchedGradients) {
  auto reg = scalar_registry(1.0);
  auto st = AdamState<double>::init(reg);
  EXPECT_THROW(adam_step(reg, Gradients<double>{}, st), ValidationError);
  EXPECT_THROW(adam_step(reg, Gradients<double>{Tensor4<double>(Shape4{1, 1, 1, 2})}, st), ValidationError);
}

}  // namespace
}  // namespace ppmunet
