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

#ifndef ADABIT_PIPELINE_HPP_
#define ADABIT_PIPELINE_HPP_

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adabit/calibration.hpp"
#include "adabit/config.hpp"
#include "adabit/datapipe.hpp"
#include "adabit/finetune.hpp"
#include "adabit/metrics.hpp"
#include "adabit/srnet.hpp"

namespace adabit {

/// git-describe style version baked in at build time.
std::string version_string();

/// Overrides `config.out` with ADABIT_OUT_DIR when set.
void apply_env_overrides(RunConfig& config);

/// Loads an INI config or the config embedded in a run manifest (.json).
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes manifest_<subcommand>.json (version, command, seed and the
/// canonical config). The subcommand is the first word of `command`.
void write_manifest(const std::filesystem::path& dir, const RunConfig& config, const std::string& command);

// Data.

/// LR calibration pool: PNGs from data.calib_dir, or synthetic HR images of
/// side lr_size * scale box-downsampled by the scale.
std::vector<PoolImage> calibration_pool(const RunConfig& config);
CalibSet build_calib_set(const RunConfig& config);

struct ImageSet {
  std::vector<std::string> ids;
  std::vector<Tensor> hr;
  std::vector<Tensor> lr;
};

/// HR test images (PNGs from `dir`, or synthetic when empty), cropped to the
/// scale and box-downsampled.
ImageSet load_test_set(const RunConfig& config, const std::string& dir);
/// Constant, low-texture and high-texture probes.
ImageSet probe_set(const RunConfig& config);
/// Calibration-style set built from LR images (one entry per image).
CalibSet calib_from_images(const ImageSet& images);

// Phases.

SrNetwork pretrain_network(const RunConfig& config, PretrainReport* report = nullptr);

InitConfig init_config_for(const RunConfig& config);
FinetuneConfig finetune_config_for(const RunConfig& config);
bool mode_finetunes(QuantMode mode);

struct QuantizeResult {
  SrNetwork net;
  InitReport init;
  FinetuneLog log;
  double init_seconds = 0.0;
  double finetune_seconds = 0.0;
};

/// Initialization then (for fine-tuned modes) fine-tuning of a copy of `fp`.
QuantizeResult quantize_network(const SrNetwork& fp, const CalibSet& calib, const RunConfig& config,
                                const ProbeSet& probe = {},
                                const std::function<void(const LogRecord&)>& on_record = {});

// Evaluation.

struct EvalRow {
  std::string image;
  double complexity = 0.0;
  /// Mean image factor over the image's tiles.
  double image_factor = 0.0;
  double fab = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Tile-wise super-resolution of one LR image. Also returns the bit decision
/// of every tile when the network is quantized.
Tensor super_resolve(const SrNetwork& net, const Tensor& lr, int tile, std::vector<BitDecision>* decisions = nullptr);

std::vector<EvalRow> evaluate(const SrNetwork& net, const ImageSet& images, int tile);
EvalRow mean_row(const std::vector<EvalRow>& rows);
/// Columns image,complexity,b_I,FAB,PSNR,SSIM; a final "mean" row.
std::string eval_csv(const std::vector<EvalRow>& rows);

/// Per-image layer error vectors followed by summary lines.
std::string separability_csv(const SeparabilityReport& report, double shuffle_mean);

std::string epoch_csv(const FinetuneLog& log);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace adabit

#endif  // ADABIT_PIPELINE_HPP_
