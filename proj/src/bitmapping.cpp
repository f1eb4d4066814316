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

#include "adabit/bitmapping.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adabit/error.hpp"
#include "adabit/quantizer.hpp"

namespace adabit {

namespace {

void check_percent(double p, const char* what) {
  if (!(p > 0.0 && p <= 50.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string(what) + " must lie in (0, 50], got " + std::to_string(p));
  }
}

// Slope of m * tanh(L c - (L u + L l) / 2) with respect to either threshold
// expressed in intensity levels (L = kComplexityLevels).
double surrogate_slope(double c, double lower, double upper, int magnitude) {
  const double t = std::tanh(kComplexityLevels * (c - 0.5 * (upper + lower)));
  return -0.5 * magnitude * (1.0 - t * t);
}

}  // namespace

double percentile_nearest_rank(std::vector<double> values, double percent) {
  if (values.empty()) throw Error(ErrorKind::kEmptyInput, "percentile of an empty list");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<long>(values.size());
  long rank = static_cast<long>(std::ceil(percent * static_cast<double>(n) / 100.0));
  rank = std::clamp(rank, 1L, n);
  return values[static_cast<std::size_t>(rank - 1)];
}

I2BMapper::I2BMapper() : I2BMapper(0.0f, 0.0f, 1) {}

I2BMapper::I2BMapper(float lower_value, float upper_value, int magnitude_value)
    : lower(make_parameter(lower_value)),
      upper(make_parameter(upper_value)),
      magnitude(magnitude_value) {}

I2BMapper I2BMapper::clone() const {
  return I2BMapper(lower->item(), upper->item(), magnitude);
}

void I2BMapper::project() {
  float& l = lower->data()[0];
  l = std::min(l, upper->item());
}

L2BMapper L2BMapper::clone() const {
  L2BMapper out;
  out.lower = lower;
  out.upper = upper;
  out.magnitude = magnitude;
  for (const auto& f : factors) out.factors.push_back(make_parameter(f->item()));
  return out;
}

int L2BMapper::effective(std::size_t k) const {
  const int r = static_cast<int>(std::nearbyint(factors.at(k)->item()));
  return std::clamp(r, -magnitude, magnitude);
}

std::vector<int> L2BMapper::effective_all() const {
  std::vector<int> out(factors.size());
  for (std::size_t k = 0; k < factors.size(); ++k) out[k] = effective(k);
  return out;
}

void L2BMapper::project() {
  const auto m = static_cast<float>(magnitude);
  for (auto& f : factors) f->data()[0] = std::clamp(f->data()[0], -m, m);
}

I2BMapper init_i2b(std::span<const ComplexityScore> complexities, double p_image, int magnitude) {
  if (complexities.empty()) throw Error(ErrorKind::kEmptyInput, "init_i2b needs at least one complexity score");
  check_percent(p_image, "p_I");
  std::vector<double> v;
  v.reserve(complexities.size());
  for (const auto& c : complexities) v.push_back(c.value);
  const double lo = percentile_nearest_rank(v, p_image);
  const double hi = percentile_nearest_rank(v, 100.0 - p_image);
  return I2BMapper(static_cast<float>(lo), static_cast<float>(hi), magnitude);
}

int map_image(const I2BMapper& mapper, ComplexityScore c) {
  // Thresholds are float carriers; compare at their precision.
  const auto v = static_cast<float>(c.value);
  if (v < mapper.lower->item()) return -mapper.magnitude;
  if (v > mapper.upper->item()) return mapper.magnitude;
  return 0;
}

L2BMapper init_l2b(const SensitivityScore& sensitivity, double p_layer, int magnitude) {
  if (sensitivity.values.empty()) throw Error(ErrorKind::kEmptyInput, "init_l2b needs at least one layer");
  check_percent(p_layer, "p_L");
  L2BMapper out;
  out.lower = static_cast<float>(percentile_nearest_rank(sensitivity.values, p_layer));
  out.upper = static_cast<float>(percentile_nearest_rank(sensitivity.values, 100.0 - p_layer));
  out.magnitude = magnitude;
  for (double value : sensitivity.values) {
    const auto s = static_cast<float>(value);
    int f = 0;
    if (s < out.lower) f = -magnitude;
    else if (s > out.upper) f = magnitude;
    out.factors.push_back(make_parameter(static_cast<float>(f)));
  }
  return out;
}

BitDecision compose_bits(int b_base, int image_factor, const L2BMapper& l2b) {
  if (b_base < kBitMin || b_base > kBitMax) {
    throw Error(ErrorKind::kInvalidArgument, "b_base " + std::to_string(b_base) + " outside [" +
                                                 std::to_string(kBitMin) + ", " + std::to_string(kBitMax) + "]");
  }
  BitDecision d;
  d.image_factors.push_back(image_factor);
  std::vector<int> row(l2b.factors.size());
  for (std::size_t k = 0; k < row.size(); ++k) {
    row[k] = std::clamp(b_base + image_factor + l2b.effective(k), kBitMin, kBitMax);
  }
  d.bits.push_back(std::move(row));
  return d;
}

BitDecision compose_bits(int b_base, std::span<const ComplexityScore> complexities,
                         const BitMapper& mapper) {
  BitDecision d;
  for (const auto& c : complexities) {
    BitDecision one = compose_bits(b_base, map_image(mapper.i2b, c), mapper.l2b);
    d.image_factors.push_back(one.image_factors.front());
    d.bits.push_back(std::move(one.bits.front()));
  }
  return d;
}

std::pair<double, double> i2b_surrogate_grad(const I2BMapper& mapper, ComplexityScore c) {
  const double g = surrogate_slope(c.value, mapper.lower->item(), mapper.upper->item(), 1);
  return {g, g};
}

TensorPtr image_factors(Tape* tape, const I2BMapper& mapper, std::span<const ComplexityScore> complexities) {
  const int n = static_cast<int>(complexities.size());
  const bool grad = needs_grad(tape, {&mapper.lower, &mapper.upper});
  auto out = make_tensor({n, 1, 1, 1});
  out->set_requires_grad(grad);
  for (int j = 0; j < n; ++j) out->data()[j] = static_cast<float>(map_image(mapper, complexities[j]));
  if (grad) {
    std::vector<double> cs;
    for (const auto& c : complexities) cs.push_back(c.value);
    tape->record("image_factors", [lower = mapper.lower, upper = mapper.upper, m = mapper.magnitude, cs, out]() {
      if (!out->has_grad()) return;
      auto gy = out->grad();
      double g = 0.0;
      for (std::size_t j = 0; j < cs.size(); ++j) {
        g += gy[j] * surrogate_slope(cs[j], lower->item(), upper->item(), m);
      }
      // The carriers hold thresholds in complexity units.
      g *= kComplexityLevels;
      if (lower->requires_grad()) lower->ensure_grad()[0] += static_cast<float>(g);
      if (upper->requires_grad()) upper->ensure_grad()[0] += static_cast<float>(g);
    });
  }
  return out;
}

TensorPtr layer_bits(Tape* tape, int b_base, const TensorPtr& image_factors,
                     const TensorPtr& layer_factor, int magnitude) {
  const int n = static_cast<int>(image_factors->numel());
  const bool grad = needs_grad(tape, {&image_factors, &layer_factor});
  auto out = make_tensor({n, 1, 1, 1});
  out->set_requires_grad(grad);
  const int lf = std::clamp(static_cast<int>(std::nearbyint(layer_factor->item())), -magnitude, magnitude);
  for (int j = 0; j < n; ++j) {
    const int bi = static_cast<int>(std::nearbyint(image_factors->data()[j]));
    out->data()[j] = static_cast<float>(std::clamp(b_base + bi + lf, kBitMin, kBitMax));
  }
  if (grad) {
    tape->record("layer_bits", [image_factors, layer_factor, out]() {
      if (!out->has_grad()) return;
      auto gy = out->grad();
      if (image_factors->requires_grad()) {
        auto gi = image_factors->ensure_grad();
        for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += gy[j];
      }
      if (layer_factor->requires_grad()) {
        double acc = 0.0;
        for (float v : gy) acc += v;
        layer_factor->ensure_grad()[0] += static_cast<float>(acc);
      }
    });
  }
  return out;
}

}  // namespace adabit
