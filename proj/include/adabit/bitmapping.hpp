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

#ifndef ADABIT_BITMAPPING_HPP_
#define ADABIT_BITMAPPING_HPP_

#include <span>
#include <utility>
#include <vector>

#include "adabit/tensor.hpp"

namespace adabit {

/// Mean forward-difference gradient magnitude of an image's luminance.
struct ComplexityScore {
  double value = 0.0;
};

/// Per-layer mean standard deviation of the layer's input activations.
struct SensitivityScore {
  std::vector<double> values;
};

/// Intensity levels per unit of image value. The tanh surrogate and the
/// threshold learning rate act on complexity measured in 8-bit levels.
inline constexpr double kComplexityLevels = 255.0;

/// Nearest-rank percentile: element ceil(p * n / 100) (1-based) of the
/// sorted values, clamped to [1, n].
double percentile_nearest_rank(std::vector<double> values, double percent);

/// Maps image complexity to a bit factor in {-m, 0, +m}.
struct I2BMapper {
  TensorPtr lower;
  TensorPtr upper;
  int magnitude = 1;

  I2BMapper();
  I2BMapper(float lower_value, float upper_value, int magnitude_value = 1);
  I2BMapper clone() const;

  /// Restores lower <= upper after an optimizer update.
  void project();
};

/// Layer bit factors with the sensitivity thresholds used to initialize them.
struct L2BMapper {
  float lower = 0.0f;
  float upper = 0.0f;
  int magnitude = 1;
  /// Continuous learnable carriers, one per adaptive layer.
  std::vector<TensorPtr> factors;

  L2BMapper clone() const;
  /// Rounded factor of layer k, clamped to [-magnitude, magnitude].
  int effective(std::size_t k) const;
  std::vector<int> effective_all() const;
  /// Keeps every carrier inside [-magnitude, magnitude].
  void project();
};

struct BitMapper {
  I2BMapper i2b;
  L2BMapper l2b;

  BitMapper clone() const { return {i2b.clone(), l2b.clone()}; }
};

/// Per-image factors and the resulting per-(image, layer) effective bits.
struct BitDecision {
  std::vector<int> image_factors;
  std::vector<std::vector<int>> bits;
};

I2BMapper init_i2b(std::span<const ComplexityScore> complexities, double p_image, int magnitude = 1);
int map_image(const I2BMapper& mapper, ComplexityScore c);

L2BMapper init_l2b(const SensitivityScore& sensitivity, double p_layer, int magnitude = 1);

/// Bits of one image: clamp(b_base + b_I + factor_k, kBitMin, kBitMax) per layer.
BitDecision compose_bits(int b_base, int image_factor, const L2BMapper& l2b);
/// Bits for a batch of images with the given complexities.
BitDecision compose_bits(int b_base, std::span<const ComplexityScore> complexities,
                         const BitMapper& mapper);

/// Tanh surrogate gradient of the image factor w.r.t. (upper, lower), with
/// c, u and l all in intensity levels (value * kComplexityLevels).
/// Both equal -0.5 * (1 - tanh^2(c - (u + l) / 2)).
std::pair<double, double> i2b_surrogate_grad(const I2BMapper& mapper, ComplexityScore c);

/// Differentiable image factors (N,1,1,1): hard thresholds forward, tanh
/// surrogate backward into mapper.lower / mapper.upper (chain rule through
/// the level scaling, so gradients are per complexity unit).
TensorPtr image_factors(Tape* tape, const I2BMapper& mapper, std::span<const ComplexityScore> complexities);

/// Differentiable bit carriers (N,1,1,1) of one adaptive layer. The value is
/// the effective integer bit-width; backward is straight-through to both the
/// image factors and the layer factor.
TensorPtr layer_bits(Tape* tape, int b_base, const TensorPtr& image_factors,
                     const TensorPtr& layer_factor, int magnitude);

}  // namespace adabit

#endif  // ADABIT_BITMAPPING_HPP_
