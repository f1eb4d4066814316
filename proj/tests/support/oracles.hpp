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

// Independent reference implementations used by the unit and acceptance
// tests. Everything here is written with plain loops in double precision and
// shares no code with the library beyond the Tensor container.

#ifndef ADABIT_TESTS_ORACLES_HPP_
#define ADABIT_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "adabit/tensor.hpp"

namespace oracle {

using adabit::Shape;
using adabit::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  Tensor t(shape);
  for (float& v : t.values()) v = d(rng);
  return t;
}

// Uniform [0, 1] image-like tensor from a seed.
inline Tensor image_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor(shape, rng, 0.0f, 1.0f);
}

inline Tensor normal_tensor(Shape shape, std::mt19937_64& rng, float sigma = 1.0f) {
  std::normal_distribution<float> d(0.0f, sigma);
  Tensor t(shape);
  for (float& v : t.values()) v = d(rng);
  return t;
}

inline std::vector<double> to_double(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Direct six-loop cross-correlation with zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, Shape xs, const std::vector<double>& w, Shape ws,
                                  const std::vector<double>* bias, int stride, int pad, Shape* out_shape) {
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  *out_shape = {xs.n, ws.n, oh, ow};
  std::vector<double> y(out_shape->numel(), 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int c = 0; c < xs.c; ++c)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                const int yi = i * stride + ki - pad;
                const int xj = j * stride + kj - pad;
                if (yi < 0 || yi >= xs.h || xj < 0 || xj >= xs.w) continue;
                acc += x[((static_cast<std::size_t>(n) * xs.c + c) * xs.h + yi) * xs.w + xj] *
                       w[((static_cast<std::size_t>(o) * ws.c + c) * ws.h + ki) * ws.w + kj];
              }
          y[((static_cast<std::size_t>(n) * ws.n + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

inline std::vector<double> pixel_shuffle(const std::vector<double>& x, Shape xs, int r) {
  const int c_out = xs.c / (r * r);
  std::vector<double> y(x.size());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < c_out; ++c)
      for (int i = 0; i < xs.h * r; ++i)
        for (int j = 0; j < xs.w * r; ++j) {
          const int src_c = c * r * r + (i % r) * r + (j % r);
          y[((static_cast<std::size_t>(n) * c_out + c) * xs.h * r + i) * xs.w * r + j] =
              x[((static_cast<std::size_t>(n) * xs.c + src_c) * xs.h + i / r) * xs.w + j / r];
        }
  return y;
}

// Central difference of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x0, double h = 1e-3) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

// |a - b| relative to the larger magnitude, with an absolute floor so that
// near-zero gradients are judged on an absolute scale.
inline double rel_error(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Quantizers by exhaustive level enumeration.

inline std::vector<double> act_levels(float l, float u, int bits) {
  const float s = (u - l) / static_cast<float>((1 << bits) - 1);
  std::vector<double> levels;
  for (int i = 0; i < (1 << bits); ++i) levels.push_back(std::min(i * s + l, u));
  return levels;
}

inline std::vector<double> wgt_levels(float bound, int bits) {
  const float s = 2.0f * bound / static_cast<float>((1 << bits) - 2);
  const int half = (1 << (bits - 1)) - 1;
  std::vector<double> levels;
  for (int i = -half; i <= half; ++i) levels.push_back(std::clamp(i * s, -bound, bound));
  return levels;
}

// True when q is one of `levels` and no level is closer to x by more than
// `slack` (float rounding of the step division can flip exact midpoints).
inline bool is_nearest_level(const std::vector<double>& levels, double x, double q, double slack) {
  bool member = false;
  double best = std::numeric_limits<double>::infinity();
  for (double v : levels) {
    member = member || v == q;
    best = std::min(best, std::abs(v - x));
  }
  return member && std::abs(q - x) <= best + slack;
}

// Brute-force sweeps written independently of the library's versions. They
// reproduce the float arithmetic of the quantizer definition on purpose so
// that exact equality of the chosen grid point is meaningful.

inline float q_act(float x, float l, float u, int bits) {
  const float s = (u - l) / static_cast<float>((1 << bits) - 1);
  float c = x;
  if (c < l) c = l;
  if (c > u) c = u;
  float q = std::nearbyint((c - l) / s) * s + l;
  if (q < l) q = l;
  if (q > u) q = u;
  return q;
}

inline float q_wgt(float w, float bound, int bits) {
  const float s = 2.0f * bound / static_cast<float>((1 << bits) - 2);
  float c = w;
  if (c < -bound) c = -bound;
  if (c > bound) c = bound;
  float q = std::nearbyint(c / s) * s;
  if (q < -bound) q = -bound;
  if (q > bound) q = bound;
  return q;
}

inline float naive_omse(const std::vector<float>& w, int bits) {
  float max_abs = 0.0f;
  for (float v : w) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0f) return 1e-4f;
  float best = 0.0f;
  double best_err = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 100; ++i) {
    // Candidate grid: i/100 of max|w| evaluated in double, rounded once.
    const float cand = static_cast<float>(static_cast<double>(max_abs) * i / 100.0);
    double err = 0.0;
    for (float v : w) {
      const double d = static_cast<double>(v) - q_wgt(v, cand, bits);
      err += d * d;
    }
    if (err <= best_err) {
      best_err = err;
      best = cand;
    }
  }
  return best;
}

inline float naive_bit_aware_clip(const std::vector<float>& x, float lower, float upper, int bits) {
  float best = 1.0f;
  double best_err = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    const double eps = (100 - i) / 100.0;
    const float l = static_cast<float>(eps * lower);
    const float u = static_cast<float>(eps * upper);
    if (!(l < u)) continue;
    double err = 0.0;
    for (float v : x) {
      const double d = static_cast<double>(v) - q_act(v, l, u, bits);
      err += d * d;
    }
    if (err < best_err) {
      best_err = err;
      best = static_cast<float>(eps);
    }
  }
  return best;
}

// Surrogate forwards in double precision.

// Clip-only activation surrogate (rounding as identity).
inline double act_clip_surrogate(double x, double l, double u) { return std::min(std::max(x, l), u); }

// Bit path: with the level index n of the unperturbed point held fixed, the
// output n * S(b) + (t(b) - t0) * S(b) + l has slope (n - t) * dS/db.
inline double act_bit_surrogate(double x, double l, double u, double bits, double n, double t0) {
  const double s = (u - l) / (std::exp2(bits) - 1.0);
  const double t = (x - l) / s;
  return (n + t - t0) * s + l;
}

// Image-factor surrogate: m * tanh(levels * c - (U + L) / 2) with thresholds
// U, L in intensity levels.
inline double i2b_surrogate(double c_levels, double upper_levels, double lower_levels, int m = 1) {
  return m * std::tanh(c_levels - 0.5 * (upper_levels + lower_levels));
}

// Percentile by nearest rank written from the definition.
inline double nearest_rank(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  long rank = static_cast<long>(std::ceil(p * n / 100.0));
  if (rank < 1) rank = 1;
  if (rank > static_cast<long>(v.size())) rank = static_cast<long>(v.size());
  return v[static_cast<std::size_t>(rank - 1)];
}

// Population standard deviation.
inline double stddev(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace oracle

#endif  // ADABIT_TESTS_ORACLES_HPP_
