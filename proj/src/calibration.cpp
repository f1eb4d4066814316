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

#include "adabit/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "adabit/error.hpp"
#include "adabit/metrics.hpp"

namespace adabit {

RangeObserver::RangeObserver(std::size_t layers, float momentum)
    : momentum_(momentum), min_(layers, 0.0f), max_(layers, 0.0f), count_(layers, 0) {
  if (!(momentum >= 0.0f && momentum < 1.0f)) {
    throw Error(ErrorKind::kInvalidArgument, "momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
}

void RangeObserver::observe(std::size_t layer, float batch_min, float batch_max) {
  if (batch_min > batch_max) throw Error(ErrorKind::kInvalidArgument, "observed min exceeds max");
  if (count_.at(layer) == 0) {
    min_[layer] = batch_min;
    max_[layer] = batch_max;
  } else {
    min_[layer] = momentum_ * min_[layer] + (1.0f - momentum_) * batch_min;
    max_[layer] = momentum_ * max_[layer] + (1.0f - momentum_) * batch_max;
  }
  ++count_[layer];
}

std::vector<ObservedRange> observe_minmax(const SrNetwork& net, const CalibSet& calib, float momentum,
                                          int batch) {
  if (calib.empty()) throw Error(ErrorKind::kEmptyInput, "observe_minmax needs calibration images");
  if (batch < 1) throw Error(ErrorKind::kInvalidArgument, "batch must be >= 1");
  const auto k = static_cast<std::size_t>(net.num_quantized());
  RangeObserver observer(k, momentum);
  for (std::size_t first = 0; first < calib.size(); first += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch), calib.size() - first);
    const auto r = net.forward(calib.batch(first, count), ForwardMode::kFloat, nullptr);
    for (std::size_t layer = 0; layer < k; ++layer) {
      const auto [lo, hi] = std::minmax_element(r.layer_inputs[layer]->values().begin(),
                                                r.layer_inputs[layer]->values().end());
      observer.observe(layer, *lo, *hi);
    }
  }
  std::vector<ObservedRange> out(k);
  for (std::size_t layer = 0; layer < k; ++layer) {
    out[layer].lower = observer.running_min(layer);
    out[layer].upper = observer.running_max(layer);
    out[layer].degenerate = !(out[layer].lower < out[layer].upper);
  }
  return out;
}

ObservedRange widen_if_degenerate(ObservedRange r) {
  if (r.lower < r.upper) return r;
  r.degenerate = true;
  r.upper = r.lower + kDegenerateWidening;
  return r;
}

float omse_weight_range(std::span<const float> w, BitValue b) {
  if (w.empty()) throw Error(ErrorKind::kEmptyInput, "omse_weight_range of an empty tensor");
  float max_abs = 0.0f;
  for (float v : w) max_abs = std::max(max_abs, std::fabs(v));
  if (max_abs == 0.0f) {
    warn("all-zero weight tensor; weight bound set to 1e-4");
    return kDegenerateWidening;
  }
  const int bits = b.effective();
  float best_bound = max_abs;
  double best_err = 0.0;
  bool first = true;
  for (int i = 1; i <= 100; ++i) {
    const auto bound = static_cast<float>(static_cast<double>(max_abs) * i / 100.0);
    double err = 0.0;
    for (float v : w) {
      const double d = static_cast<double>(quantize_wgt_value(v, bound, bits)) - v;
      err += d * d;
    }
    if (first || err <= best_err) {
      best_err = err;
      best_bound = bound;
      first = false;
    }
  }
  return best_bound;
}

float omse_weight_range(const Tensor& w, BitValue b) { return omse_weight_range(w.data(), b); }

float bit_aware_clip(std::span<const float> samples, float lower, float upper, BitValue b) {
  if (!(lower < upper)) {
    throw Error(ErrorKind::kDegenerateRange, "bit_aware_clip needs lower < upper, got [" + std::to_string(lower) +
                                                 ", " + std::to_string(upper) + "]");
  }
  if (samples.empty()) throw Error(ErrorKind::kEmptyInput, "bit_aware_clip of an empty sample");
  const int bits = b.effective();
  float best_eps = 1.0f;
  double best_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double eps = (100 - i) / 100.0;
    const auto l = static_cast<float>(eps * lower);
    const auto u = static_cast<float>(eps * upper);
    double err = 0.0;
    for (float v : samples) {
      const double d = static_cast<double>(quantize_act_value(v, l, u, bits)) - v;
      err += d * d;
    }
    if (i == 0 || err < best_err) {
      best_err = err;
      best_eps = static_cast<float>(eps);
    }
  }
  return best_eps;
}

float bit_aware_clip(const Tensor& samples, float lower, float upper, BitValue b) {
  return bit_aware_clip(samples.data(), lower, upper, b);
}

std::vector<std::vector<float>> collect_activation_samples(const SrNetwork& net, const CalibSet& calib,
                                                           std::size_t cap, std::uint64_t seed, int batch) {
  if (calib.empty()) throw Error(ErrorKind::kEmptyInput, "collect_activation_samples needs calibration images");
  if (cap == 0) throw Error(ErrorKind::kInvalidArgument, "sample cap must be > 0");
  if (batch < 1) throw Error(ErrorKind::kInvalidArgument, "batch must be >= 1");
  const auto k = static_cast<std::size_t>(net.num_quantized());
  std::vector<std::vector<float>> samples(k);
  std::vector<std::uint64_t> seen(k, 0);
  std::mt19937_64 rng(seed);
  for (std::size_t first = 0; first < calib.size(); first += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch), calib.size() - first);
    const auto r = net.forward(calib.batch(first, count), ForwardMode::kFloat, nullptr);
    for (std::size_t layer = 0; layer < k; ++layer) {
      auto& pool = samples[layer];
      for (float v : r.layer_inputs[layer]->data()) {
        const std::uint64_t n = seen[layer]++;
        if (pool.size() < cap) {
          pool.push_back(v);
        } else {
          const std::uint64_t j = std::uniform_int_distribution<std::uint64_t>(0, n)(rng);
          if (j < cap) pool[static_cast<std::size_t>(j)] = v;
        }
      }
    }
  }
  return samples;
}

namespace {

float percentile_of(std::span<const float> v, double percent) {
  return static_cast<float>(percentile_nearest_rank(std::vector<double>(v.begin(), v.end()), percent));
}

}  // namespace

InitReport run_init_phase(SrNetwork& net, const CalibSet& calib, const InitConfig& config) {
  if (calib.empty()) throw Error(ErrorKind::kEmptyInput, "initialization needs calibration images");
  if (config.magnitude < 0) throw Error(ErrorKind::kInvalidArgument, "bit factor magnitude must be >= 0");
  InitReport report;
  report.complexities = calib.complexities();
  report.sensitivity = layer_sensitivity(net, calib);

  net.reset_quant();
  const auto& adaptive = net.adaptive_layers();
  SensitivityScore adaptive_sens;
  for (int k : adaptive) adaptive_sens.values.push_back(report.sensitivity.values[static_cast<std::size_t>(k)]);
  BitMapper& mapper = net.mapper();
  mapper.i2b = init_i2b(report.complexities, config.p_image, config.magnitude);
  mapper.l2b = init_l2b(adaptive_sens, config.p_layer, config.magnitude);

  const auto k_count = static_cast<std::size_t>(net.num_quantized());
  std::vector<int> layer_factor(k_count, 0);
  for (std::size_t a = 0; a < adaptive.size(); ++a) {
    layer_factor[static_cast<std::size_t>(adaptive[a])] = mapper.l2b.effective(a);
  }

  const bool need_samples = config.bit_aware_clipping || config.range_init == RangeInit::kPercentile;
  std::vector<std::vector<float>> samples;
  if (need_samples) samples = collect_activation_samples(net, calib, config.sample_cap, config.seed, config.batch);
  std::vector<ObservedRange> ranges;
  if (config.range_init == RangeInit::kMinMax) {
    ranges = observe_minmax(net, calib, config.momentum, config.batch);
  } else {
    for (const auto& s : samples) {
      ObservedRange r{percentile_of(s, config.low_percentile), percentile_of(s, config.high_percentile), false};
      r.degenerate = !(r.lower < r.upper);
      ranges.push_back(r);
    }
  }

  for (std::size_t k = 0; k < k_count; ++k) {
    LayerQuant& q = net.quant()[k];
    const ConvLayer& conv = net.convs()[static_cast<std::size_t>(net.conv_index(static_cast<int>(k)))];
    LayerReport layer;
    layer.name = conv.name;
    layer.sensitivity = report.sensitivity.values[k];
    layer.layer_factor = layer_factor[k];
    layer.bits = q.adaptive ? std::clamp(q.base_bits + layer_factor[k], kBitMin, kBitMax) : q.base_bits;

    const BitValue weight_bits{static_cast<float>(q.base_bits)};
    switch (config.weight_init) {
      case WeightInit::kOmse:
        layer.weight_bound = omse_weight_range(*conv.weight, weight_bits);
        break;
      case WeightInit::kMaxAbs:
      case WeightInit::kPercentile: {
        std::vector<float> mags(conv.weight->numel());
        std::transform(conv.weight->values().begin(), conv.weight->values().end(), mags.begin(),
                       [](float v) { return std::fabs(v); });
        layer.weight_bound = config.weight_init == WeightInit::kMaxAbs
                                 ? *std::max_element(mags.begin(), mags.end())
                                 : percentile_of(mags, config.high_percentile);
        if (!(layer.weight_bound > 0.0f)) {
          warn("layer " + conv.name + " has an all-zero weight tensor; weight bound set to 1e-4");
          layer.weight_bound = kDegenerateWidening;
        }
        break;
      }
    }

    const ObservedRange range = widen_if_degenerate(ranges[k]);
    layer.degenerate = range.degenerate;
    layer.eps = 1.0f;
    if (config.bit_aware_clipping) {
      layer.eps = bit_aware_clip(samples[k], range.lower, range.upper, BitValue{static_cast<float>(layer.bits)});
    }
    // Same arithmetic as the sweep: eps is a whole number of hundredths.
    const double eps = std::round(static_cast<double>(layer.eps) * 100.0) / 100.0;
    layer.lower = static_cast<float>(eps * range.lower);
    layer.upper = static_cast<float>(eps * range.upper);
    if (!(layer.lower < layer.upper)) layer.upper = layer.lower + kDegenerateWidening;

    q.lower->data()[0] = layer.lower;
    q.upper->data()[0] = layer.upper;
    q.bound->data()[0] = layer.weight_bound;
    report.layers.push_back(layer);
  }
  return report;
}

std::string calibration_csv(const InitReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "layer,sensitivity,b_L,bits,l_a,u_a,eps,u_w\n";
  for (const auto& l : report.layers) {
    out << l.name << ',' << l.sensitivity << ',' << l.layer_factor << ',' << l.bits << ',' << l.lower << ','
        << l.upper << ',' << l.eps << ',' << l.weight_bound << '\n';
  }
  return out.str();
}

}  // namespace adabit
