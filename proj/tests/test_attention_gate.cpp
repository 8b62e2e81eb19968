// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "agseg/attention_gate.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace agseg;
using attention::AttentionGateParams;
using testutil::describe;

namespace {

AttentionGateParams flat_gate(std::int64_t cx, std::int64_t cg, std::uint64_t seed, float b_psi) {
  auto p = AttentionGateParams::create(cx, cg, AttentionGateParams::default_f_int(cx), seed);
  for (auto& v : p.psi.mutable_data()) {
    v = 0.0f;
  }
  p.b_psi.mutable_data()[0] = b_psi;
  return p;
}

oracle::GateParams to_oracle(const AttentionGateParams& p) {
  return {oracle::from(p.w_x), oracle::from(p.w_g), oracle::from(p.psi), oracle::values(p.b_g),
          oracle::values(p.b_psi)};
}

Tensor swap_columns(const Tensor& t, std::int64_t a, std::int64_t b) {
  auto arr = oracle::from(t);
  for (std::int64_t n = 0; n < arr.n; ++n) {
    for (std::int64_t c = 0; c < arr.c; ++c) {
      for (std::int64_t i = 0; i < arr.h; ++i) {
        std::swap(arr(n, c, i, a), arr(n, c, i, b));
      }
    }
  }
  return oracle::to_tensor(arr);
}

} // namespace

TEST(AttentionGate, FlatGateHalvesTheSkip) {
  const auto p = flat_gate(4, 6, 3, 0.0f);
  const auto x = uniform_tensor({2, 4, 8, 8}, 11);
  const auto g = uniform_tensor({2, 6, 4, 4}, 12);
  const auto out = attention::ag_forward(x, g, p);
  ASSERT_EQ(out.alpha.shape(), (Shape{2, 1, 8, 8}));
  ASSERT_EQ(out.gated.shape(), x.shape());
  for (float a : out.alpha.data()) {
    EXPECT_EQ(a, 0.5f);
  }
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    EXPECT_EQ(out.gated.data()[i], 0.5f * x.data()[i]);
  }
}

TEST(AttentionGate, SaturatedBiasPassesTheSkip) {
  const auto p = flat_gate(2, 2, 4, 20.0f);
  const auto x = uniform_tensor({1, 2, 4, 4}, 21);
  const auto g = uniform_tensor({1, 2, 2, 2}, 22);
  const auto out = attention::ag_forward(x, g, p);
  for (float a : out.alpha.data()) {
    EXPECT_NEAR(a, 1.0, 1e-8);
  }
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    EXPECT_NEAR(out.gated.data()[i], x.data()[i], 1e-7);
  }
}

TEST(AttentionGate, HandEvaluatedUnitWeights) {
  // theta = x, phi = 0.25 + 0.5 = 0.75 at every pixel after upsampling,
  // q = relu(x + 0.75) = {1.75, 0, 3.75, 1.25}, alpha = sigmoid(q).
  AttentionGateParams p;
  p.f_int = 1;
  p.w_x = Tensor({1, 1, 1, 1}, 1.0f);
  p.w_g = Tensor({1, 1, 1, 1}, 1.0f);
  p.b_g = Tensor({1}, 0.5f);
  p.psi = Tensor({1, 1, 1, 1}, 1.0f);
  p.b_psi = Tensor({1}, 0.0f);
  const Tensor x({1, 1, 2, 2}, std::vector<float>{1.0f, -2.0f, 3.0f, 0.5f});
  const Tensor g({1, 1, 1, 1}, 0.25f);
  const auto out = attention::ag_forward(x, g, p);

  const double q[4] = {1.75, 0.0, 3.75, 1.25};
  const double xs[4] = {1.0, -2.0, 3.0, 0.5};
  for (int i = 0; i < 4; ++i) {
    const double alpha = 1.0 / (1.0 + std::exp(-q[i]));
    EXPECT_NEAR(out.alpha.data()[i], alpha, 1e-7) << i;
    EXPECT_NEAR(out.gated.data()[i], xs[i] * alpha, 1e-6) << i;
  }
  EXPECT_EQ(out.alpha.data()[1], 0.5f);
}

TEST(AttentionGate, MatchesOracleOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = AttentionGateParams::create(3, 5, 2, seed);
    p.b_g = uniform_tensor({2}, seed + 100);
    p.b_psi = uniform_tensor({1}, seed + 200);
    const auto x = uniform_tensor({2, 3, 8, 8}, seed + 300);
    const auto g = uniform_tensor({2, 5, 2, 2}, seed + 400);
    const auto out = attention::ag_forward(x, g, p);
    const auto ref = oracle::attention_gate(oracle::from(x), oracle::from(g), to_oracle(p));
    for (std::size_t i = 0; i < ref.alpha.v.size(); ++i) {
      ASSERT_NEAR(out.alpha.data()[i], ref.alpha.v[i], 1e-6);
    }
    for (std::size_t i = 0; i < ref.gated.v.size(); ++i) {
      ASSERT_NEAR(out.gated.data()[i], ref.gated.v[i], 1e-6);
    }
  }
}

TEST(AttentionGate, NonDivisibleRatioRejected) {
  const auto p = AttentionGateParams::create(2, 2, 1, 0);
  EXPECT_THROW(attention::ag_forward(Tensor({1, 2, 6, 6}), Tensor({1, 2, 4, 4}), p), ShapeError);
  EXPECT_THROW(attention::ag_forward(Tensor({1, 2, 4, 4}), Tensor({1, 2, 8, 8}), p), ShapeError);
  EXPECT_THROW(attention::ag_forward(Tensor({1, 2, 8, 8}), Tensor({1, 2, 4, 2}), p), ShapeError);
  EXPECT_THROW(attention::ag_forward(Tensor({2, 2, 8, 8}), Tensor({1, 2, 4, 4}), p), ShapeError);
  EXPECT_NO_THROW(attention::ag_forward(Tensor({1, 2, 8, 8}), Tensor({1, 2, 8, 8}), p));
}

TEST(AttentionGate, DefaultIntermediateWidth) {
  EXPECT_EQ(AttentionGateParams::default_f_int(64), 32);
  EXPECT_EQ(AttentionGateParams::default_f_int(3), 1);
  EXPECT_EQ(AttentionGateParams::default_f_int(1), 1);
}

TEST(AttentionGate, RegisterAndBindShareStorage) {
  const auto p = AttentionGateParams::create(4, 2, 2, 7);
  nn::ParamStore store;
  p.register_in(store, "ag");
  EXPECT_EQ(store.size(), 5u);
  const auto q = AttentionGateParams::bind(store, "ag");
  EXPECT_EQ(q.w_x.identity(), p.w_x.identity());
  EXPECT_EQ(q.b_psi.identity(), p.b_psi.identity());
  EXPECT_EQ(q.f_int, 2);
}

TEST(AttentionGateGradient, SeedZeroInstancePasses) {
  const auto p = AttentionGateParams::create(2, 2, 1, 0);
  const auto x = uniform_tensor({1, 2, 8, 8}, 0);
  const auto g = uniform_tensor({1, 2, 4, 4}, 1);
  const auto report = attention::ag_gradcheck(p, x, g, 0);
  EXPECT_TRUE(report.passed) << describe(report);
  EXPECT_LT(report.max_rel_error, 1e-3) << describe(report);
  EXPECT_GT(report.entries.size(), 0u);
}

class AttentionGateGradientSeeds : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(AttentionGateGradientSeeds, MatchesCentralDifferences) {
  const auto seed = GetParam();
  auto p = AttentionGateParams::create(2, 3, 2, seed);
  p.b_g = uniform_tensor({2}, seed + 50, -0.5, 0.5);
  p.b_psi = uniform_tensor({1}, seed + 60, -0.5, 0.5);
  const auto x = uniform_tensor({1, 2, 8, 8}, seed + 70);
  const auto g = uniform_tensor({1, 3, 2, 2}, seed + 80);
  const auto report = attention::ag_gradcheck(p, x, g, seed);
  EXPECT_TRUE(report.passed) << describe(report);
}

INSTANTIATE_TEST_SUITE_P(Seeds, AttentionGateGradientSeeds, ::testing::Range<std::uint64_t>(0, 20));

TEST(AttentionGateGradient, FlatGateStillLearnsPsi) {
  // With psi = 0, d alpha / d psi_k = sigmoid'(b_psi) * q_k = 0.25 * q_k, so
  // dL/dpsi_k = sum over pixels of 0.25 * q_k * (sum_c r1_c x_c + r2).
  auto p = flat_gate(2, 2, 5, 0.0f);
  const auto x = uniform_tensor({1, 2, 4, 4}, 31);
  const auto g = uniform_tensor({1, 2, 2, 2}, 32);
  const auto r1 = uniform_tensor({1, 2, 4, 4}, 33);
  const auto r2 = uniform_tensor({1, 1, 4, 4}, 34);

  nn::ParamStore store;
  p.register_in(store, "ag");
  const auto out = attention::ag_forward(x, g, p);
  ops::add(testutil::project(out.gated, r1), testutil::project(out.alpha, r2)).backward();

  const auto po = to_oracle(p);
  auto theta = oracle::conv2d(oracle::from(x), po.w_x, {}, 1, 0);
  auto phi = oracle::upsample(oracle::conv2d(oracle::from(g), po.w_g, po.b_g, 1, 0), 2);
  const auto q = oracle::relu(oracle::add(theta, phi));
  const auto xa = oracle::from(x), r1a = oracle::from(r1), r2a = oracle::from(r2);
  for (std::int64_t k = 0; k < p.f_int; ++k) {
    double expected = 0.0;
    for (std::int64_t i = 0; i < 4; ++i) {
      for (std::int64_t j = 0; j < 4; ++j) {
        double upstream = r2a(0, 0, i, j);
        for (std::int64_t c = 0; c < 2; ++c) {
          upstream += r1a(0, c, i, j) * xa(0, c, i, j);
        }
        expected += 0.25 * q(0, k, i, j) * upstream;
      }
    }
    EXPECT_NE(expected, 0.0);
    EXPECT_NE(p.psi.grad()[static_cast<std::size_t>(k)], 0.0f);
    EXPECT_NEAR(p.psi.grad()[static_cast<std::size_t>(k)], expected, 1e-5 * std::max(1.0, std::abs(expected)));
  }
}

TEST(AttentionGateGradient, ZeroSkipGivesZeroSkipWeightGradient) {
  auto p = AttentionGateParams::create(3, 2, 2, 9);
  const Tensor x({1, 3, 4, 4}, 0.0f);
  const auto g = uniform_tensor({1, 2, 2, 2}, 10);
  const auto r = uniform_tensor({1, 1, 4, 4}, 11);
  p.w_x.set_requires_grad(true);
  const auto out = attention::ag_forward(x, g, p);
  ops::add(ops::sum(out.gated), testutil::project(out.alpha, r)).backward();
  ASSERT_TRUE(p.w_x.has_grad());
  for (float v : p.w_x.grad()) {
    EXPECT_EQ(v, 0.0f);
  }
}

TEST(AttentionGateProperties, CoefficientsStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = AttentionGateParams::create(4, 4, 2, seed);
    const auto x = uniform_tensor({1, 4, 8, 8}, seed + 1000, -3.0, 3.0);
    const auto g = uniform_tensor({1, 4, 4, 4}, seed + 2000, -3.0, 3.0);
    const auto out = attention::ag_forward(x, g, p);
    for (float a : out.alpha.data()) {
      ASSERT_GT(a, 0.0f);
      ASSERT_LT(a, 1.0f);
    }
  }
}

TEST(AttentionGateProperties, AllOnesGateIsTheIdentity) {
  const auto x = uniform_tensor({2, 3, 4, 4}, 5);
  const auto gated = attention::apply_gate(x, Tensor({2, 1, 4, 4}, 1.0f));
  EXPECT_TRUE(std::equal(gated.data().begin(), gated.data().end(), x.data().begin()));
}

TEST(AttentionGateProperties, OutputShapeFollowsTheSkip) {
  const auto p = AttentionGateParams::create(3, 5, 1, 0);
  for (std::int64_t hg : {1, 2, 4, 8}) {
    const auto out = attention::ag_forward(Tensor({2, 3, 8, 8}, 0.5f), Tensor({2, 5, hg, hg}, 0.5f), p);
    EXPECT_EQ(out.gated.shape(), (Shape{2, 3, 8, 8}));
    EXPECT_EQ(out.alpha.shape(), (Shape{2, 1, 8, 8}));
  }
}

TEST(AttentionGateProperties, PointwiseUnderColumnSwap) {
  const auto p = AttentionGateParams::create(3, 2, 2, 13);
  const auto x = uniform_tensor({1, 3, 6, 6}, 14);
  const auto g = uniform_tensor({1, 2, 6, 6}, 15);
  const auto base = attention::ag_forward(x, g, p);
  const auto swapped = attention::ag_forward(swap_columns(x, 1, 4), swap_columns(g, 1, 4), p);
  const auto expected = swap_columns(base.alpha, 1, 4);
  EXPECT_TRUE(std::equal(swapped.alpha.data().begin(), swapped.alpha.data().end(), expected.data().begin()));
}

TEST(AttentionGateProperties, PointwiseUnderBlockSwapWithUpsampledGate) {
  // Gate column 0 covers skip columns {0,1}; gate column 1 covers {2,3}.
  const auto p = AttentionGateParams::create(2, 2, 1, 17);
  const auto x = uniform_tensor({1, 2, 4, 4}, 18);
  const auto g = uniform_tensor({1, 2, 2, 2}, 19);
  const auto base = attention::ag_forward(x, g, p);
  const auto xs = swap_columns(swap_columns(x, 0, 2), 1, 3);
  const auto swapped = attention::ag_forward(xs, swap_columns(g, 0, 1), p);
  const auto expected = swap_columns(swap_columns(base.alpha, 0, 2), 1, 3);
  EXPECT_TRUE(std::equal(swapped.alpha.data().begin(), swapped.alpha.data().end(), expected.data().begin()));
}
