/* Copyright 2026 The adabit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "adabit/error.hpp"
#include "adabit/quantizer.hpp"
#include "oracles.hpp"

namespace adabit {
namespace {

float act(float x, float l, float u, int b) {
  return quantize_act(Tensor::scalar(x), {l, u}, BitValue{static_cast<float>(b)}).item();
}

TEST(QuantizeAct, Examples) {
  EXPECT_EQ(act(0.0f, 0.0f, 3.0f, 2), 0.0f);
  EXPECT_EQ(act(0.6f, 0.0f, 3.0f, 2), 1.0f);
  for (int b = kBitMin; b <= kBitMax; ++b) EXPECT_EQ(act(5.0f, 0.0f, 3.0f, b), 3.0f);
}

TEST(QuantizeAct, DegenerateRangeThrows) {
  try {
    quantize_act(Tensor::scalar(0.0f), {1.0f, 1.0f}, BitValue{4.0f});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateRange);
  }
}

TEST(QuantizeWgt, Examples) {
  for (int b = kBitMin; b <= kBitMax; ++b) {
    EXPECT_EQ(quantize_wgt(Tensor::scalar(0.0f), {0.7f}, BitValue{static_cast<float>(b)}).item(), 0.0f);
  }
  const float u = 1.3f;
  const float s = 2.0f * u / 254.0f;
  const float q = quantize_wgt(Tensor::scalar(0.9f * u), {u}, BitValue{8.0f}).item();
  EXPECT_LE(std::abs(q - 0.9f * u), s / 2 + 1e-7f);
  EXPECT_THROW(quantize_wgt(Tensor::scalar(0.0f), {0.0f}, BitValue{4.0f}), Error);
}

TEST(QuantizeWgt, ThreeBitEnumeration) {
  std::mt19937_64 rng(11);
  const Tensor w = oracle::random_tensor({1, 1, 1, 500}, rng, -2.0f, 2.0f);
  const auto levels = oracle::wgt_levels(1.0f, 3);
  ASSERT_EQ(levels.size(), 7u);
  const Tensor q = quantize_wgt(w, {1.0f}, BitValue{3.0f});
  const double s = 2.0 / 6.0;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    EXPECT_TRUE(oracle::is_nearest_level(levels, std::clamp(w.data()[i], -1.0f, 1.0f), q.data()[i], 1e-6 * s)) << w.data()[i];
  }
}

TEST(BitValue, EffectiveClamps) {
  EXPECT_EQ(effective_bits(4.4f), 4);
  EXPECT_EQ(effective_bits(4.6f), 5);
  EXPECT_EQ(effective_bits(0.0f), kBitMin);
  EXPECT_EQ(effective_bits(11.0f), kBitMax);
}

// Property suite over random tensors, ranges and bit-widths.
class QuantizerProperties : public ::testing::TestWithParam<int> {};

TEST_P(QuantizerProperties, ActAndWgt) {
  std::mt19937_64 rng(1000 + GetParam());
  std::uniform_real_distribution<float> ud(-3.0f, 3.0f);
  std::uniform_int_distribution<int> bd(kBitMin, kBitMax);
  const int b = bd(rng);
  float l = ud(rng);
  float u = ud(rng);
  if (l > u) std::swap(l, u);
  if (u - l < 0.05f) u = l + 0.05f;
  const float bound = std::abs(ud(rng)) + 0.05f;
  Tensor x = oracle::random_tensor({1, 2, 8, 8}, rng, -4.0f, 4.0f);
  std::sort(x.values().begin(), x.values().end());

  const Tensor q = quantize_act(x, {l, u}, BitValue{static_cast<float>(b)});
  const Tensor qq = quantize_act(q, {l, u}, BitValue{static_cast<float>(b)});
  EXPECT_EQ(q.values(), qq.values()) << "idempotence";
  for (std::size_t i = 1; i < q.numel(); ++i) ASSERT_LE(q.data()[i - 1], q.data()[i]) << "monotonicity";
  std::set<float> distinct(q.values().begin(), q.values().end());
  EXPECT_LE(distinct.size(), static_cast<std::size_t>(1 << b));
  const double s = act_step(l, u, b);
  const auto levels = oracle::act_levels(l, u, b);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float xi = x.data()[i];
    if (xi >= l && xi <= u) EXPECT_LE(std::abs(xi - q.data()[i]), s / 2 * (1 + 1e-5));
    EXPECT_TRUE(oracle::is_nearest_level(levels, std::clamp(xi, l, u), q.data()[i], 1e-5 * s));
  }

  const Tensor w = quantize_wgt(x, {bound}, BitValue{static_cast<float>(b)});
  const Tensor ww = quantize_wgt(w, {bound}, BitValue{static_cast<float>(b)});
  EXPECT_EQ(w.values(), ww.values());
  for (std::size_t i = 1; i < w.numel(); ++i) ASSERT_LE(w.data()[i - 1], w.data()[i]);
  std::set<float> wd(w.values().begin(), w.values().end());
  EXPECT_LE(wd.size(), static_cast<std::size_t>((1 << b) - 1));
  const auto wl = oracle::wgt_levels(bound, b);
  const double sw = wgt_step(bound, b);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_TRUE(oracle::is_nearest_level(wl, std::clamp(x.data()[i], -bound, bound), w.data()[i], 1e-5 * sw));
  }
}

INSTANTIATE_TEST_SUITE_P(Random, QuantizerProperties, ::testing::Range(0, 200));

TEST(QuantizeAct, FewerBitsNeverLowerError) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::normal_tensor({1, 1, 16, 16}, rng);
    for (int b = kBitMin + 1; b <= kBitMax; ++b) {
      auto err = [&](int bits) {
        const Tensor q = quantize_act(x, {-2.0f, 2.0f}, BitValue{static_cast<float>(bits)});
        double e = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) e += std::pow(x.data()[i] - q.data()[i], 2);
        return e;
      };
      EXPECT_GE(err(b - 1), err(b)) << "trial " << trial << " b " << b;
    }
  }
}

TEST(SteGradCheck, Examples) {
  auto [a1, f1] = ste_grad_check(SteKind::kActLower, -1.5);
  EXPECT_EQ(a1, 1.0);
  EXPECT_NEAR(f1, 1.0, 1e-9);
  auto [a2, f2] = ste_grad_check(SteKind::kActUpper, 0.3);
  EXPECT_EQ(a2, 0.0);
  EXPECT_NEAR(f2, 0.0, 1e-9);
  auto [a3, f3] = ste_grad_check(SteKind::kWgtBound, 1.7);
  EXPECT_EQ(a3, 1.0);
  EXPECT_NEAR(f3, 1.0, 1e-9);
  auto [a4, f4] = ste_grad_check(SteKind::kWgtBound, -1.7);
  EXPECT_EQ(a4, -1.0);
  EXPECT_NEAR(f4, -1.0, 1e-9);
}

TEST(QuantizeAct, BitGradientSkippedWhenDisabled) {
  Tape tape;
  auto x = make_tensor(Tensor({1, 1, 1, 3}, {0.1f, 0.37f, 0.8f}));
  auto l = make_parameter(0.0f);
  auto u = make_parameter(1.0f);
  auto b = make_parameter(3.0f);
  tape.backward(ops::sum(&tape, quantize_act(&tape, x, l, u, b, false)));
  EXPECT_FALSE(b->has_grad());
}

TEST(ActStep, BitDerivativeMatchesDifference) {
  for (double bits : {2.0, 3.5, 6.0, 8.0}) {
    const double fd = oracle::central_difference(
        [](double bb) { return 3.0 / (std::exp2(bb) - 1.0); }, bits, 1e-5);
    EXPECT_NEAR(act_step_bit_derivative(-1.0, 2.0, bits), fd, 1e-6 * std::abs(fd));
  }
}

// Surrogate gradients against central differences of the declared surrogate
// forwards (clip with rounding as identity; fixed level index for the bits).
TEST(GradCheck, ActivationBoundsAndBits) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> ud(-2.0f, 2.0f);
  for (int probe = 0; probe < 100; ++probe) {
    const float l = -0.5f - std::abs(ud(rng)) * 0.5f;
    const float u = 0.5f + std::abs(ud(rng)) * 0.5f;
    const float bits = 2.0f + static_cast<float>(probe % 7) + 0.3f;
    Tensor xv = oracle::random_tensor({1, 1, 4, 4}, rng, -2.5f, 2.5f);
    for (float& v : xv.values()) {
      if (std::abs(v - l) < 2e-3f) v += 5e-3f;
      if (std::abs(v - u) < 2e-3f) v -= 5e-3f;
    }
    const Tensor r = oracle::random_tensor(xv.shape(), rng);
    Tape tape;
    auto x = make_tensor(xv);
    auto lp = make_parameter(l);
    auto up = make_parameter(u);
    auto bp = make_parameter(bits);
    auto q = quantize_act(&tape, x, lp, up, bp);
    auto prod = make_tensor(q->shape());
    for (std::size_t i = 0; i < q->numel(); ++i) prod->data()[i] = q->data()[i] * r.data()[i];
    prod->set_requires_grad(true);
    tape.record("mul_const", [q, prod, r]() {
      auto g = q->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += prod->grad()[i] * r.data()[i];
    });
    tape.backward(ops::sum(&tape, prod));

    auto clip_loss = [&](double ld, double uu) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.numel(); ++i) acc += r.data()[i] * oracle::act_clip_surrogate(xv.data()[i], ld, uu);
      return acc;
    };
    const double fd_l = oracle::central_difference([&](double v) { return clip_loss(v, u); }, l);
    const double fd_u = oracle::central_difference([&](double v) { return clip_loss(l, v); }, u);
    EXPECT_LT(oracle::rel_error(lp->grad()[0], fd_l), 1e-3);
    EXPECT_LT(oracle::rel_error(up->grad()[0], fd_u), 1e-3);

    const int be = effective_bits(bits);
    const double s0 = (static_cast<double>(u) - l) / (std::exp2(be) - 1.0);
    auto bit_loss = [&](double bb) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.numel(); ++i) {
        const float xi = xv.data()[i];
        if (xi < l || xi > u) continue;
        const double t0 = (xi - static_cast<double>(l)) / s0;
        acc += r.data()[i] * oracle::act_bit_surrogate(xi, l, u, bb, std::nearbyint((xi - l) / act_step(l, u, be)), t0);
      }
      return acc;
    };
    const double fd_b = oracle::central_difference(bit_loss, be);
    EXPECT_LT(oracle::rel_error(bp->grad()[0], fd_b), 1e-3) << "probe " << probe;
  }
}

TEST(GradCheck, WeightBound) {
  std::mt19937_64 rng(14);
  for (int probe = 0; probe < 100; ++probe) {
    const float bound = 0.3f + static_cast<float>(probe % 10) * 0.1f;
    Tensor wv = oracle::random_tensor({1, 1, 3, 3}, rng, -1.5f, 1.5f);
    for (float& v : wv.values()) {
      if (std::abs(std::abs(v) - bound) < 2e-3f) v *= 1.01f;
    }
    const Tensor r = oracle::random_tensor(wv.shape(), rng);
    Tape tape;
    auto w = make_tensor(wv);
    w->set_requires_grad(true);
    auto up = make_parameter(bound);
    auto q = quantize_wgt(&tape, w, up, 4);
    auto prod = make_tensor(q->shape());
    for (std::size_t i = 0; i < q->numel(); ++i) prod->data()[i] = q->data()[i] * r.data()[i];
    prod->set_requires_grad(true);
    tape.record("mul_const", [q, prod, r]() {
      auto g = q->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += prod->grad()[i] * r.data()[i];
    });
    tape.backward(ops::sum(&tape, prod));
    auto loss = [&](double b, std::size_t moved, double value) {
      double acc = 0.0;
      for (std::size_t i = 0; i < wv.numel(); ++i) {
        const double wi = i == moved ? value : wv.data()[i];
        acc += r.data()[i] * std::clamp(wi, -b, b);
      }
      return acc;
    };
    const double fd = oracle::central_difference([&](double b) { return loss(b, wv.numel(), 0.0); }, bound);
    EXPECT_LT(oracle::rel_error(up->grad()[0], fd), 1e-3) << probe;
    const std::size_t k = static_cast<std::size_t>(probe) % wv.numel();
    const double fd_w = oracle::central_difference([&](double v) { return loss(bound, k, v); }, wv.data()[k]);
    EXPECT_LT(oracle::rel_error(w->grad()[k], fd_w), 1e-3) << probe;
  }
}

}  // namespace
}  // namespace adabit
