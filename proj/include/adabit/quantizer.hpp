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

#ifndef ADABIT_QUANTIZER_HPP_
#define ADABIT_QUANTIZER_HPP_

#include <span>
#include <utility>

#include "adabit/tensor.hpp"

namespace adabit {

inline constexpr int kBitMin = 2;
inline constexpr int kBitMax = 8;

/// Continuous bit carrier; the forward pass always uses `effective()`.
struct BitValue {
  float cont = 4.0f;
  int min = kBitMin;
  int max = kBitMax;

  int effective() const noexcept;
};

/// Rounds then clamps a continuous bit-width to [min_bits, max_bits].
int effective_bits(float cont, int min_bits = kBitMin, int max_bits = kBitMax) noexcept;

/// Asymmetric activation clipping range.
struct ActQuant {
  float lower = 0.0f;
  float upper = 1.0f;
};

/// Symmetric weight clipping bound.
struct WgtQuant {
  float bound = 1.0f;
};

// Scalar kernels shared by every quantizer entry point. Kept inline so the
// sweeps in calibration evaluate bit-for-bit the same arithmetic.

/// Step size (u - l) / (2^bits - 1) of the asymmetric grid.
inline float act_step(float lower, float upper, int bits) noexcept {
  return (upper - lower) / static_cast<float>((1 << bits) - 1);
}

/// Step size of the symmetric grid with 2^bits - 1 levels centred on zero.
inline float wgt_step(float bound, int bits) noexcept {
  return 2.0f * bound / static_cast<float>((1 << bits) - 2);
}

float quantize_act_value(float x, float lower, float upper, int bits) noexcept;
float quantize_wgt_value(float w, float bound, int bits) noexcept;

/// Value-level activation quantizer: round((clip(x) - l) / S) * S + l.
/// Throws kDegenerateRange when lower >= upper.
Tensor quantize_act(const Tensor& x, ActQuant q, BitValue b);
/// Value-level symmetric weight quantizer. Throws when bound <= 0.
Tensor quantize_wgt(const Tensor& w, WgtQuant q, BitValue b);

/// Differentiable activation quantizer.
///
/// `lower` and `upper` are scalar tensors. `bits` holds one continuous carrier
/// per sample (shape (N,1,1,1)) or a single shared carrier. Backward rules:
///   d/dx     = 1 inside [l, u], 0 outside (rounding is identity)
///   d/dl     = 1 where x < l, else 0
///   d/du     = 1 where x > u, else 0
///   d/dbits  = (round(t) - t) * dS/db inside [l, u], with t = (x - l) / S
/// The bit path is skipped when `bit_grad` is false.
TensorPtr quantize_act(Tape* tape, const TensorPtr& x, const TensorPtr& lower,
                       const TensorPtr& upper, const TensorPtr& bits, bool bit_grad = true);

/// Differentiable weight quantizer at a static bit-width. d/dw is 1 inside
/// [-u, u]; d/du is sign(w) where |w| > u and 0 inside.
TensorPtr quantize_wgt(Tape* tape, const TensorPtr& w, const TensorPtr& bound, int bits);

/// Derivative of the activation step size with respect to the bit-width,
/// evaluated at a real-valued bit count.
double act_step_bit_derivative(double lower, double upper, double bits) noexcept;

enum class SteKind { kActLower, kActUpper, kWgtBound };

/// Compares the analytic STE gradient of one quantizer parameter at input
/// `point` against a central difference (h = 1e-3) of the clip-only
/// surrogate forward. Reference parameters: l = -1, u = 1 for activations
/// and u_w = 1 for weights, 4 bits. Returns (analytic, finite difference).
std::pair<double, double> ste_grad_check(SteKind kind, double point);

}  // namespace adabit

#endif  // ADABIT_QUANTIZER_HPP_
