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

#ifndef ADABIT_CALIBRATION_HPP_
#define ADABIT_CALIBRATION_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adabit/bitmapping.hpp"
#include "adabit/datapipe.hpp"
#include "adabit/quantizer.hpp"
#include "adabit/srnet.hpp"

namespace adabit {

/// Width added to a constant activation range before use.
inline constexpr float kDegenerateWidening = 1e-4f;

/// Exponential moving average of per-layer minima and maxima. The first
/// observation is taken as is.
class RangeObserver {
 public:
  RangeObserver(std::size_t layers, float momentum);

  void observe(std::size_t layer, float batch_min, float batch_max);
  float running_min(std::size_t layer) const { return min_.at(layer); }
  float running_max(std::size_t layer) const { return max_.at(layer); }
  std::size_t observation_count(std::size_t layer) const { return count_.at(layer); }
  float momentum() const noexcept { return momentum_; }
  std::size_t layers() const noexcept { return min_.size(); }

 private:
  float momentum_;
  std::vector<float> min_;
  std::vector<float> max_;
  std::vector<std::size_t> count_;
};

struct ObservedRange {
  float lower = 0.0f;
  float upper = 0.0f;
  bool degenerate = false;
};

/// One pass over the calibration set in batches of `batch`; returns the
/// final running (min, max) of every quantized layer's input.
std::vector<ObservedRange> observe_minmax(const SrNetwork& net, const CalibSet& calib,
                                          float momentum, int batch = 16);

/// Widens a constant range by kDegenerateWidening.
ObservedRange widen_if_degenerate(ObservedRange r);

/// Weight bound minimizing the L2 error of the symmetric quantizer over the
/// grid max|w| * i / 100, i = 1..100. Ties go to the larger bound. An all-zero
/// tensor returns kDegenerateWidening.
float omse_weight_range(std::span<const float> w, BitValue b);
float omse_weight_range(const Tensor& w, BitValue b);

/// Range scale eps in {1.00, 0.99, ..., 0.01} minimizing the L2 error of the
/// activation quantizer on [eps * lower, eps * upper]. Ties go to the larger eps.
float bit_aware_clip(std::span<const float> samples, float lower, float upper, BitValue b);
float bit_aware_clip(const Tensor& samples, float lower, float upper, BitValue b);

/// Seeded uniform subsample (reservoir) of every quantized layer's floating
/// input over the calibration set, capped per layer.
std::vector<std::vector<float>> collect_activation_samples(const SrNetwork& net, const CalibSet& calib,
                                                           std::size_t cap, std::uint64_t seed,
                                                           int batch = 16);

enum class RangeInit { kMinMax, kPercentile };
enum class WeightInit { kOmse, kMaxAbs, kPercentile };

struct InitConfig {
  double p_image = 10.0;
  double p_layer = 30.0;
  float momentum = 0.9f;
  /// Bit factor magnitude; 0 disables adaptation altogether.
  int magnitude = 1;
  int batch = 16;
  std::size_t sample_cap = std::size_t{1} << 20;
  std::uint64_t seed = 0;
  RangeInit range_init = RangeInit::kMinMax;
  WeightInit weight_init = WeightInit::kOmse;
  bool bit_aware_clipping = true;
  /// Lower/upper percentiles for RangeInit::kPercentile / WeightInit::kPercentile.
  double low_percentile = 1.0;
  double high_percentile = 99.0;
};

struct LayerReport {
  std::string name;
  double sensitivity = 0.0;
  int layer_factor = 0;
  int bits = 0;
  float lower = 0.0f;
  float upper = 0.0f;
  float eps = 1.0f;
  float weight_bound = 0.0f;
  bool degenerate = false;
};

struct InitReport {
  std::vector<ComplexityScore> complexities;
  SensitivityScore sensitivity;
  std::vector<LayerReport> layers;
};

/// Initialization phase: complexities, sensitivities, I2B and L2B thresholds,
/// layer factors, weight bounds, MinMax ranges and bit-aware clipping at each
/// layer's bit (b_base + b_L, image factor 0). Installs the quantizer state and
/// mapper on `net`.
InitReport run_init_phase(SrNetwork& net, const CalibSet& calib, const InitConfig& config);

/// CSV with columns layer,sensitivity,b_L,bits,l_a,u_a,eps,u_w.
std::string calibration_csv(const InitReport& report);

}  // namespace adabit

#endif  // ADABIT_CALIBRATION_HPP_
