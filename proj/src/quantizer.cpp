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

#include "adabit/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adabit/error.hpp"

namespace adabit {

namespace {

void check_range(float lower, float upper) {
  if (!(lower < upper)) {
    throw Error(ErrorKind::kDegenerateRange, "activation range [" + std::to_string(lower) + ", " +
                                                 std::to_string(upper) + "] is empty");
  }
}

void check_bound(float bound) {
  if (!(bound > 0.0f)) {
    throw Error(ErrorKind::kDegenerateRange,
                "weight bound must be positive, got " + std::to_string(bound));
  }
}

}  // namespace

int effective_bits(float cont, int min_bits, int max_bits) noexcept {
  const float r = std::nearbyint(cont);
  if (!(r >= static_cast<float>(min_bits))) return min_bits;
  if (r > static_cast<float>(max_bits)) return max_bits;
  return static_cast<int>(r);
}

int BitValue::effective() const noexcept { return effective_bits(cont, min, max); }

float quantize_act_value(float x, float lower, float upper, int bits) noexcept {
  const float s = act_step(lower, upper, bits);
  const float c = std::min(std::max(x, lower), upper);
  const float q = std::nearbyint((c - lower) / s) * s + lower;
  return std::min(std::max(q, lower), upper);
}

float quantize_wgt_value(float w, float bound, int bits) noexcept {
  const float s = wgt_step(bound, bits);
  const float c = std::min(std::max(w, -bound), bound);
  const float q = std::nearbyint(c / s) * s;
  return std::min(std::max(q, -bound), bound);
}

double act_step_bit_derivative(double lower, double upper, double bits) noexcept {
  const double p = std::exp2(bits);
  return -(upper - lower) * p * std::log(2.0) / ((p - 1.0) * (p - 1.0));
}

Tensor quantize_act(const Tensor& x, ActQuant q, BitValue b) {
  check_range(q.lower, q.upper);
  const int bits = b.effective();
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_act_value(src[i], q.lower, q.upper, bits);
  return out;
}

Tensor quantize_wgt(const Tensor& w, WgtQuant q, BitValue b) {
  check_bound(q.bound);
  const int bits = b.effective();
  Tensor out(w.shape());
  auto src = w.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_wgt_value(src[i], q.bound, bits);
  return out;
}

TensorPtr quantize_act(Tape* tape, const TensorPtr& x, const TensorPtr& lower,
                       const TensorPtr& upper, const TensorPtr& bits, bool bit_grad) {
  const float l = lower->item();
  const float u = upper->item();
  check_range(l, u);
  const Shape s = x->shape();
  const std::size_t per_bits = bits->numel();
  if (per_bits != 1 && per_bits != static_cast<std::size_t>(s.n)) {
    throw Error(ErrorKind::kShape, "bit carrier " + bits->shape().str() +
                                       " matches neither one value nor batch of " + s.str());
  }
  auto bit_of = [bits, per_bits](int n) {
    return effective_bits(bits->data()[per_bits == 1 ? 0 : static_cast<std::size_t>(n)]);
  };

  const bool grad = needs_grad(tape, {&x, &lower, &upper}) || (bit_grad && needs_grad(tape, {&bits}));
  auto out = make_tensor(s);
  out->set_requires_grad(grad);
  const std::size_t sample = s.sample();
  for (int n = 0; n < s.n; ++n) {
    const int b = bit_of(n);
    const float* src = x->data().data() + n * sample;
    float* dst = out->data().data() + n * sample;
    for (std::size_t i = 0; i < sample; ++i) dst[i] = quantize_act_value(src[i], l, u, b);
  }

  if (grad) {
    tape->record("quantize_act", [x, lower, upper, bits, out, bit_grad, bit_of, per_bits]() {
      if (!out->has_grad()) return;
      const float l = lower->item();
      const float u = upper->item();
      const Shape s = x->shape();
      const std::size_t sample = s.sample();
      auto gy = out->grad();
      auto xv = x->data();
      std::span<float> gx = x->requires_grad() ? x->ensure_grad() : std::span<float>{};
      const bool want_bits = bit_grad && bits->requires_grad();
      double gl = 0.0;
      double gu = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const int b = bit_of(n);
        const float step = act_step(l, u, b);
        const double ds_db = act_step_bit_derivative(l, u, b);
        double gb = 0.0;
        for (std::size_t i = n * sample; i < (n + 1) * sample; ++i) {
          const float v = xv[i];
          if (v < l) {
            gl += gy[i];
          } else if (v > u) {
            gu += gy[i];
          } else {
            if (!gx.empty()) gx[i] += gy[i];
            if (want_bits) {
              const float t = (v - l) / step;
              gb += static_cast<double>(gy[i]) * (std::nearbyint(t) - t) * ds_db;
            }
          }
        }
        if (want_bits) bits->ensure_grad()[per_bits == 1 ? 0 : static_cast<std::size_t>(n)] += static_cast<float>(gb);
      }
      if (lower->requires_grad()) lower->ensure_grad()[0] += static_cast<float>(gl);
      if (upper->requires_grad()) upper->ensure_grad()[0] += static_cast<float>(gu);
    });
  }
  return out;
}

TensorPtr quantize_wgt(Tape* tape, const TensorPtr& w, const TensorPtr& bound, int bits) {
  const float u = bound->item();
  check_bound(u);
  const bool grad = needs_grad(tape, {&w, &bound});
  auto out = make_tensor(w->shape());
  out->set_requires_grad(grad);
  auto src = w->data();
  auto dst = out->data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_wgt_value(src[i], u, bits);
  if (grad) {
    tape->record("quantize_wgt", [w, bound, out]() {
      if (!out->has_grad()) return;
      const float u = bound->item();
      auto gy = out->grad();
      auto wv = w->data();
      std::span<float> gw = w->requires_grad() ? w->ensure_grad() : std::span<float>{};
      double gu = 0.0;
      for (std::size_t i = 0; i < wv.size(); ++i) {
        if (wv[i] > u) {
          gu += gy[i];
        } else if (wv[i] < -u) {
          gu -= gy[i];
        } else if (!gw.empty()) {
          gw[i] += gy[i];
        }
      }
      if (bound->requires_grad()) bound->ensure_grad()[0] += static_cast<float>(gu);
    });
  }
  return out;
}

std::pair<double, double> ste_grad_check(SteKind kind, double point) {
  constexpr double kH = 1e-3;
  constexpr int kBits = 4;
  Tape tape;
  auto x = make_tensor(Tensor::scalar(static_cast<float>(point)));
  auto clip = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
  if (kind == SteKind::kWgtBound) {
    auto u = make_parameter(1.0f);
    auto y = quantize_wgt(&tape, x, u, kBits);
    tape.backward(ops::sum(&tape, y));
    const double fd = (clip(point, -(1.0 + kH), 1.0 + kH) - clip(point, -(1.0 - kH), 1.0 - kH)) / (2 * kH);
    return {u->grad()[0], fd};
  }
  auto l = make_parameter(-1.0f);
  auto u = make_parameter(1.0f);
  auto b = make_tensor(Tensor::scalar(static_cast<float>(kBits)));
  auto y = quantize_act(&tape, x, l, u, b);
  tape.backward(ops::sum(&tape, y));
  if (kind == SteKind::kActLower) {
    const double fd = (clip(point, -1.0 + kH, 1.0) - clip(point, -1.0 - kH, 1.0)) / (2 * kH);
    return {l->grad()[0], fd};
  }
  const double fd = (clip(point, -1.0, 1.0 + kH) - clip(point, -1.0, 1.0 - kH)) / (2 * kH);
  return {u->grad()[0], fd};
}

}  // namespace adabit
