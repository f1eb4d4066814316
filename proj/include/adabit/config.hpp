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

#ifndef ADABIT_CONFIG_HPP_
#define ADABIT_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "adabit/calibration.hpp"
#include "adabit/datapipe.hpp"
#include "adabit/finetune.hpp"
#include "adabit/srnet.hpp"

namespace adabit {

enum class QuantMode { kAdaptive, kMinMax, kMinMaxFt, kPercentile, kPercentileFt };

std::string_view mode_name(QuantMode mode);
QuantMode parse_mode(std::string_view name);

struct DataConfig {
  /// Directory of LR calibration PNGs; empty means synthetic.
  std::string calib_dir;
  /// Directory of HR test PNGs; empty means synthetic.
  std::string test_dir;
  /// Synthetic calibration pool size and LR image side.
  int pool_size = 100;
  int lr_size = 48;
  SamplingConfig sampling;
  /// Calibration patch side (LR pixels).
  int patch = 48;
  /// Patch side used when evaluating and inferring (LR pixels).
  int eval_patch = 96;
  int test_count = 20;
  /// Synthetic HR test image side.
  int test_size = 96;
  int probe_count = 10;
};

struct CalibOptions {
  double p_image = 10.0;
  double p_layer = 30.0;
  float momentum = 0.9f;
  int magnitude = 1;
  int batch = 16;
  std::size_t sample_cap = std::size_t{1} << 20;
};

struct RunConfig {
  SrNetConfig net;
  PretrainConfig pretrain;
  DataConfig data;
  CalibOptions calib;
  FinetuneConfig finetune;
  QuantMode mode = QuantMode::kAdaptive;
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  /// Every problem found, as "section.key: reason".
  std::vector<std::string> problems() const;
  void validate() const;
};

/// Parses an INI file with sections [net] [pretrain] [data] [calib]
/// [finetune] [run]. Missing keys keep their defaults; unknown sections or
/// keys and malformed values are all reported in one ConfigError.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// Independent stream seeds derived from the run seed.
enum class SeedStream : std::uint64_t {
  kNetInit = 1,
  kPretrainData,
  kCalibPool,
  kCalibSampling,
  kTestSet,
  kProbeSet,
  kActivationSamples,
  kFinetune,
};
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

}  // namespace adabit

#endif  // ADABIT_CONFIG_HPP_
