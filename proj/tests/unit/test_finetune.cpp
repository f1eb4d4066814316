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
#include <openssl/evp.h>

#include <cmath>
#include <random>

#include "adabit/calibration.hpp"
#include "adabit/error.hpp"
#include "adabit/finetune.hpp"
#include "adabit/quantizer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace adabit {
namespace {

std::string sha256(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Complexities of entries [first, first + count).
std::vector<ComplexityScore> slice(const CalibSet& calib, std::size_t first, std::size_t count) {
  const auto all = calib.complexities();
  return {all.begin() + static_cast<std::ptrdiff_t>(first), all.begin() + static_cast<std::ptrdiff_t>(first + count)};
}

struct Quantized {
  SrNetwork teacher;
  SrNetwork student;
  CalibSet calib;
};

Quantized prepare(std::size_t images = 8, int side = 8, std::uint64_t seed = 61) {
  Quantized q{fixture::tiny_net(seed), fixture::tiny_net(seed), fixture::synth_calib(images, side, seed + 1)};
  run_init_phase(q.student, q.calib, InitConfig{});
  return q;
}

// Quantization parameters and mapper, excluding the network weights.
std::vector<float> quant_state(const SrNetwork& net) {
  std::vector<float> v;
  for (const auto& q : net.quant()) {
    v.push_back(q.lower->item());
    v.push_back(q.upper->item());
    v.push_back(q.bound->item());
  }
  return v;
}

std::vector<float> mapper_state(const SrNetwork& net) {
  std::vector<float> v{net.mapper().i2b.lower->item(), net.mapper().i2b.upper->item()};
  for (const auto& f : net.mapper().l2b.factors) v.push_back(f->item());
  return v;
}

TEST(LossPix, Examples) {
  auto a = make_tensor({1, 3, 4, 4}, 0.2f);
  EXPECT_EQ(loss_pix(nullptr, a, a)->item(), 0.0f);
  auto b = make_tensor({1, 3, 4, 4}, 0.7f);
  EXPECT_FLOAT_EQ(loss_pix(nullptr, b, a)->item(), 0.5f * 48);
  auto q = make_tensor(Tensor({2, 1, 1, 2}, {1.0f, 1.0f, 2.0f, 2.0f}));
  auto f = make_tensor({2, 1, 1, 2}, 0.0f);
  EXPECT_FLOAT_EQ(loss_pix(nullptr, q, f)->item(), 3.0f);
}

TEST(LossSkt, Examples) {
  std::mt19937_64 rng(62);
  auto f = make_tensor(oracle::random_tensor({2, 3, 4, 4}, rng));
  std::vector<TensorPtr> fp{f};
  EXPECT_EQ(loss_skt(nullptr, fp, fp)->item(), 0.0f);
  auto scaled = make_tensor(*f);
  for (float& v : scaled->values()) v *= 3.5f;
  std::vector<TensorPtr> qs{scaled};
  EXPECT_NEAR(loss_skt(nullptr, qs, fp)->item(), 0.0f, 1e-6f);
  auto neg = make_tensor(*f);
  for (float& v : neg->values()) v = -v;
  std::vector<TensorPtr> qn{neg};
  EXPECT_NEAR(loss_skt(nullptr, qn, fp)->item(), 2.0f, 1e-6f);
}

TEST(LossSkt, ScaleInvariantAndGradCheck) {
  std::mt19937_64 rng(63);
  const Tensor av = oracle::random_tensor({2, 2, 3, 3}, rng);
  const Tensor bv = oracle::random_tensor({2, 2, 3, 3}, rng);
  Tape tape;
  auto a = make_tensor(av);
  a->set_requires_grad(true);
  std::vector<TensorPtr> qs{a}, fs{make_tensor(bv)};
  auto loss = loss_skt(&tape, qs, fs);
  auto big = make_tensor(av);
  for (float& v : big->values()) v *= 7.0f;
  std::vector<TensorPtr> qb{big};
  EXPECT_NEAR(loss_skt(nullptr, qb, fs)->item(), loss->item(), 1e-6f);
  tape.backward(loss);
  auto f = [&](const std::vector<double>& x) {
    double total = 0.0;
    const std::size_t sample = 18;
    for (int i = 0; i < 2; ++i) {
      double na = 0, nb = 0;
      for (std::size_t j = 0; j < sample; ++j) {
        na += x[i * sample + j] * x[i * sample + j];
        nb += static_cast<double>(bv.data()[i * sample + j]) * bv.data()[i * sample + j];
      }
      double d = 0.0;
      for (std::size_t j = 0; j < sample; ++j) {
        const double t = x[i * sample + j] / std::sqrt(na) - bv.data()[i * sample + j] / std::sqrt(nb);
        d += t * t;
      }
      total += std::sqrt(d);
    }
    return total / 2.0;
  };
  for (std::size_t i = 0; i < av.numel(); ++i) {
    auto x = oracle::to_double(av);
    const double fd = oracle::central_difference([&](double v) { x[i] = v; return f(x); }, x[i]);
    EXPECT_LT(oracle::rel_error(a->grad()[i], fd), 1e-3) << i;
  }
}

TEST(LossBit, Examples) {
  EXPECT_EQ(loss_bit({{4, 4}}, 4), 0.0);
  EXPECT_DOUBLE_EQ(loss_bit({{4, 5}}, 4), 0.5);
  EXPECT_EQ(loss_bit({{3, 3, 3, 4, 3}}, 4), 0.0);
  std::vector<TensorPtr> carriers{make_tensor(Tensor({2, 1, 1, 1}, {4.0f, 5.0f}))};
  EXPECT_FLOAT_EQ(loss_bit(nullptr, carriers, 4)->item(), 0.5f);
}

TEST(FinetuneConfig, ListsEveryProblem) {
  FinetuneConfig c;
  c.batch_size = 0;
  c.lr_act = -1.0f;
  c.lr_decay = 0.0f;
  c.b_tar = 12;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 4u);
  }
}

TEST(Finetune, IterationCount) {
  Quantized q = prepare(100, 6, 64);
  FinetuneConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 2;
  std::vector<LogRecord> records;
  const FinetuneLog log = run_finetune(q.calib, q.teacher, q.student, cfg, {}, [&](const LogRecord& r) { records.push_back(r); });
  EXPECT_EQ(log.iterations, 500);
  EXPECT_EQ(records.size(), 1500u);
  ASSERT_EQ(log.epochs.size(), 10u);
  for (const auto& r : records) {
    if (r.epoch == 5 && r.sub_step == 2) EXPECT_NEAR(r.lr, 0.01 * std::pow(0.9, 4), 1e-8);
  }
}

TEST(Finetune, ZeroLearningRatesChangeNothing) {
  Quantized q = prepare();
  const auto before = serialize_checkpoint(q.student);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.lr_act = cfg.lr_wgt = cfg.lr_bitfactor = cfg.lr_i2b = 0.0f;
  run_finetune(q.calib, q.teacher, q.student, cfg);
  EXPECT_EQ(serialize_checkpoint(q.student), before);
}

TEST(Finetune, WeightsNeverChangeAndTeacherHasNoGrad) {
  Quantized q = prepare();
  const std::string before = sha256(q.student.weight_bytes());
  FinetuneConfig cfg;
  cfg.epochs = 2;
  run_finetune(q.calib, q.teacher, q.student, cfg);
  EXPECT_EQ(sha256(q.student.weight_bytes()), before);
  EXPECT_EQ(sha256(q.teacher.weight_bytes()), before);
  for (const auto& p : q.teacher.parameters()) EXPECT_FALSE(p->has_grad());
}

TEST(Finetune, FreezeContract) {
  // Only the mapping group may move when the range learning rates are zero,
  // and only the ranges when the mapping learning rates are zero.
  {
    Quantized q = prepare(8, 8, 65);
    FinetuneConfig cfg;
    cfg.lr_act = cfg.lr_wgt = 0.0f;
    cfg.lr_i2b = 5.0f;
    cfg.lr_bitfactor = 0.5f;
    Finetuner ft(q.teacher, q.student, cfg);
    const auto ranges = quant_state(q.student);
    for (int i = 0; i < 4; ++i) ft.step(q.calib.batch(2 * i, 2), slice(q.calib, 2 * i, 2));
    EXPECT_EQ(quant_state(q.student), ranges);
  }
  {
    Quantized q = prepare(8, 8, 66);
    FinetuneConfig cfg;
    cfg.lr_i2b = cfg.lr_bitfactor = 0.0f;
    Finetuner ft(q.teacher, q.student, cfg);
    const auto mapping = mapper_state(q.student);
    const auto ranges = quant_state(q.student);
    for (int i = 0; i < 4; ++i) ft.step(q.calib.batch(2 * i, 2), slice(q.calib, 2 * i, 2));
    EXPECT_EQ(mapper_state(q.student), mapping);
    EXPECT_NE(quant_state(q.student), ranges);
  }
}

TEST(Finetune, ThresholdOrderingAfterEveryStep) {
  Quantized q = prepare(12, 8, 67);
  FinetuneConfig cfg;
  cfg.lr_i2b = 20.0f;
  Finetuner ft(q.teacher, q.student, cfg);
  const auto cs = q.calib.complexities();
  for (int i = 0; i < 6; ++i) {
    ft.step(q.calib.batch(2 * i, 2), std::span(cs).subspan(2 * i, 2));
    EXPECT_LE(q.student.mapper().i2b.lower->item(), q.student.mapper().i2b.upper->item());
    for (const auto& lq : q.student.quant()) {
      EXPECT_LT(lq.lower->item(), lq.upper->item());
      EXPECT_GT(lq.bound->item(), 0.0f);
    }
  }
}

TEST(Finetune, HugeBitPenaltyLowersFab) {
  Quantized q = prepare(16, 8, 68);
  FinetuneConfig cfg;
  cfg.lambda_bit = 1e6f;
  cfg.b_tar = 3;
  cfg.lr_bitfactor = 0.2f;
  Finetuner ft(q.teacher, q.student, cfg);
  const auto cs = q.calib.complexities();
  double previous = fab(compose_bits(4, cs, q.student.mapper()).bits);
  ASSERT_GT(previous, 3.0);
  const double initial = previous;
  for (int i = 0; i < 8; ++i) {
    ft.step(q.calib.batch(2 * i, 2), std::span(cs).subspan(2 * i, 2));
    const double now = fab(compose_bits(4, cs, q.student.mapper()).bits);
    EXPECT_LE(now, previous) << "step " << i;
    previous = now;
  }
  EXPECT_LT(previous, initial);
}

TEST(Finetune, Deterministic) {
  std::vector<std::uint8_t> first;
  std::vector<std::string> first_log;
  for (int run = 0; run < 2; ++run) {
    Quantized q = prepare(10, 8, 69);
    FinetuneConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 5;
    std::vector<std::string> log;
    run_finetune(q.calib, q.teacher, q.student, cfg, {}, [&](const LogRecord& r) { log.push_back(r.json()); });
    if (run == 0) {
      first = serialize_checkpoint(q.student);
      first_log = log;
    } else {
      EXPECT_EQ(serialize_checkpoint(q.student), first);
      EXPECT_EQ(log, first_log);
    }
  }
}

TEST(Finetune, NonFiniteLossNamesSubStep) {
  Quantized q = prepare(4, 8, 70);
  q.student.convs()[1].weight->data()[0] = std::nanf("");
  FinetuneConfig cfg;
  Finetuner ft(q.teacher, q.student, cfg);
  try {
    ft.step(q.calib.batch(0, 2), slice(q.calib, 0, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("sub-step 1"), std::string::npos) << e.what();
  }
}

TEST(LogRecord, JsonKeys) {
  LogRecord r{3, 17, 2, 0.5, 0.25, 0.0, 4.0, 0.01};
  const std::string j = r.json();
  EXPECT_EQ(j.find('\n'), std::string::npos);
  const char* keys[] = {"\"epoch\"", "\"iter\"", "\"sub_step\"", "\"L_pix\"", "\"L_skt\"", "\"L_bit\"", "\"FAB\"", "\"lr\""};
  std::size_t pos = 0;
  for (const char* k : keys) {
    const std::size_t at = j.find(k);
    ASSERT_NE(at, std::string::npos) << k;
    EXPECT_GE(at, pos);
    pos = at;
  }
}

TEST(Adam, SkipsParametersWithoutGradient) {
  Adam adam;
  auto a = make_parameter(1.0f);
  auto b = make_parameter(1.0f);
  adam.add_group({a, b}, 0.1f);
  a->ensure_grad()[0] = 2.0f;
  adam.step(0);
  EXPECT_NEAR(a->item(), 0.9f, 1e-6f);
  EXPECT_EQ(b->item(), 1.0f);
}

// Quantized 2-layer mini-net: act-quant -> conv (weight-quant) -> relu ->
// act-quant -> conv (weight-quant), linear read-out. The surrogate forward
// replaces every rounding by the identity plus the rounding residual frozen
// at the probe point, so it equals the real forward there and its central
// differences give the straight-through derivatives.
TEST(GradCheck, MiniNetEndToEnd) {
  std::mt19937_64 rng(71);
  const Shape xs{2, 2, 5, 5};
  const Shape w1s{3, 2, 3, 3};
  const Shape w2s{2, 3, 3, 3};
  const Tensor xv = oracle::random_tensor(xs, rng, -1.0f, 1.0f);
  const Tensor w1v = oracle::random_tensor(w1s, rng, -0.6f, 0.6f);
  const Tensor w2v = oracle::random_tensor(w2s, rng, -0.6f, 0.6f);
  const Tensor r = oracle::random_tensor({2, 2, 5, 5}, rng);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  constexpr double kMargin = 2e-3;
  int checked = 0;
  for (int probe = 0; probe < 1000 && checked < 100; ++probe) {
    const std::vector<float> p = {-0.9f + 0.3f * d(rng), 0.5f + 0.4f * d(rng), 0.3f + 0.3f * d(rng),
                                  0.2f * d(rng),         0.8f + 0.8f * d(rng), 0.3f + 0.3f * d(rng)};
    const int bits = 3 + probe % 4;

    Tape tape;
    auto x = make_tensor(xv);
    auto w1 = make_tensor(w1v);
    auto w2 = make_tensor(w2v);
    std::vector<TensorPtr> ps;
    for (float v : p) ps.push_back(make_parameter(v));
    auto bt = make_tensor(Tensor::scalar(static_cast<float>(bits)));
    auto a1 = quantize_act(&tape, x, ps[0], ps[1], bt, false);
    auto qw1 = quantize_wgt(&tape, w1, ps[2], bits);
    auto pre = ops::conv2d(&tape, a1, qw1, nullptr, 1, 1);
    auto h = ops::relu(&tape, pre);
    auto a2 = quantize_act(&tape, h, ps[3], ps[4], bt, false);
    auto qw2 = quantize_wgt(&tape, w2, ps[5], bits);
    auto y = ops::conv2d(&tape, a2, qw2, nullptr, 1, 1);
    auto prod = make_tensor(y->shape());
    for (std::size_t i = 0; i < y->numel(); ++i) prod->data()[i] = y->data()[i] * r.data()[i];
    prod->set_requires_grad(true);
    tape.record("mul_const", [y, prod, r]() {
      auto g = y->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += prod->grad()[i] * r.data()[i];
    });
    tape.backward(ops::sum(&tape, prod));

    auto residual = [](const Tensor& q, const Tensor& in, double lo, double hi) {
      std::vector<double> out(q.numel());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.data()[i] - std::clamp<double>(in.data()[i], lo, hi);
      return out;
    };
    const auto r1 = residual(*a1, xv, p[0], p[1]);
    const auto rw1 = residual(*qw1, w1v, -p[2], p[2]);
    const auto r2 = residual(*a2, *h, p[3], p[4]);
    const auto rw2 = residual(*qw2, w2v, -p[5], p[5]);

    bool near_kink = false;
    auto guard = [&](double v, double edge) { near_kink = near_kink || std::abs(v - edge) < kMargin; };
    for (float v : xv.values()) { guard(v, p[0]); guard(v, p[1]); }
    for (float v : w1v.values()) { guard(std::abs(v), p[2]); }
    for (float v : w2v.values()) { guard(std::abs(v), p[5]); }
    for (float v : pre->values()) { guard(v, 0.0); guard(v, p[3]); guard(v, p[4]); }
    if (near_kink) continue;

    auto surrogate = [&](const std::vector<double>& q) {
      std::vector<double> a = oracle::to_double(xv), wa = oracle::to_double(w1v), wb = oracle::to_double(w2v);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = oracle::act_clip_surrogate(a[i], q[0], q[1]) + r1[i];
      for (std::size_t i = 0; i < wa.size(); ++i) wa[i] = std::clamp(wa[i], -q[2], q[2]) + rw1[i];
      Shape hs;
      auto hv = oracle::conv2d(a, xs, wa, w1s, nullptr, 1, 1, &hs);
      for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = oracle::act_clip_surrogate(std::max(hv[i], 0.0), q[3], q[4]) + r2[i];
      for (std::size_t i = 0; i < wb.size(); ++i) wb[i] = std::clamp(wb[i], -q[5], q[5]) + rw2[i];
      Shape ys;
      const auto yv = oracle::conv2d(hv, hs, wb, w2s, nullptr, 1, 1, &ys);
      double acc = 0.0;
      for (std::size_t i = 0; i < yv.size(); ++i) acc += r.data()[i] * yv[i];
      return acc;
    };
    for (std::size_t k = 0; k < p.size(); ++k) {
      std::vector<double> q(p.begin(), p.end());
      const double fd = oracle::central_difference([&](double v) { q[k] = v; return surrogate(q); }, p[k], 1e-4);
      const double analytic = ps[k]->has_grad() ? ps[k]->grad()[0] : 0.0;
      EXPECT_LT(oracle::rel_error(analytic, fd, 1e-1), 1e-3) << "probe " << probe << " param " << k;
    }
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

}  // namespace
}  // namespace adabit
