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

#ifndef ADABIT_METRICS_HPP_
#define ADABIT_METRICS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "adabit/bitmapping.hpp"
#include "adabit/tensor.hpp"

namespace adabit {

class SrNetwork;
struct CalibSet;

/// Luminance of a single image: 0.299 R + 0.587 G + 0.114 B for 3 channels,
/// the channel itself for 1. Returns an (H * W) plane.
std::vector<double> luminance(const Tensor& image);

/// (mean |dx| + mean |dy|) / 2 over forward differences of the luminance.
/// An axis with no valid differences contributes 0.
ComplexityScore complexity(const Tensor& image);

/// Population standard deviation of every quantized layer's input,
/// averaged over calibration images.
SensitivityScore layer_sensitivity(const SrNetwork& net, const CalibSet& calib);

/// Mean effective bit-width over all (image, layer) entries.
double fab(const std::vector<std::vector<int>>& bit_log);

/// Returned for identical inputs.
inline constexpr double kPsnrCap = 100.0;

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(1 / MSE) over all channels, capped at kPsnrCap.
double psnr(const Tensor& a, const Tensor& b);
/// Gaussian-window SSIM (11x11, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2) on the
/// luminance channel, averaged over valid windows and over the batch.
double ssim(const Tensor& a, const Tensor& b);

struct SeparabilityReport {
  /// errors[i][k]: MSE between the probe-bit quantized and floating input of
  /// layer k for image i.
  std::vector<std::vector<double>> errors;
  std::vector<std::vector<double>> image_similarity;  // N x N
  std::vector<std::vector<double>> layer_similarity;  // K x K
  double mean_image_similarity = 0.0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);
/// Pairwise cosine similarities of the rows of `rows`.
std::vector<std::vector<double>> cosine_matrix(const std::vector<std::vector<double>>& rows);
double mean_off_diagonal(const std::vector<std::vector<double>>& matrix);

/// Quantizes each layer's floating input with a static MinMax range at
/// `probe_bits` and compares layer-wise errors across images.
SeparabilityReport separability_report(const SrNetwork& net, const CalibSet& calib, int probe_bits);

/// Mean off-diagonal image similarity after independently permuting every
/// image's layer vector, averaged over `resamples` draws.
double shuffle_control(const std::vector<std::vector<double>>& errors, int resamples, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace adabit

#endif  // ADABIT_METRICS_HPP_
