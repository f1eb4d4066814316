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

// adabit: pretrain, quantize, eval, infer and diagnose the toy SR network.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "adabit/config.hpp"
#include "adabit/error.hpp"
#include "adabit/metrics.hpp"
#include "adabit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace adabit;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "INI config or run manifest (.json)");
  cmd->add_option("--seed", common.seed, "Overrides run.seed");
  cmd->add_option("--out", common.out, "Output directory (overrides ADABIT_OUT_DIR and run.out)");
}

RunConfig resolve(const Common& common) {
  RunConfig config = common.config_path.empty() ? RunConfig{} : load_run_config(common.config_path);
  apply_env_overrides(config);
  if (!common.out.empty()) config.out = common.out;
  if (common.seed) config.seed = *common.seed;
  config.validate();
  return config;
}

std::string joined_args(int argc, char** argv) {
  std::string out;
  for (int i = 1; i < argc; ++i) {
    if (!out.empty()) out += ' ';
    out += argv[i];
  }
  return out;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void run_pretrain(const RunConfig& config, const std::string& command) {
  const fs::path out = config.out;
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  PretrainReport report;
  SrNetwork net = pretrain_network(config, &report);
  save_checkpoint(net, out / "fp.adbm");
  std::ostringstream csv;
  csv << std::setprecision(9) << "step,L1\n";
  for (std::size_t i = 0; i < report.losses.size(); ++i) csv << i + 1 << ',' << report.losses[i] << '\n';
  write_text(out / "pretrain_loss.csv", csv.str());
  write_manifest(out, config, command);
  std::cout << "pretrain: " << report.losses.size() << " steps in " << std::fixed << std::setprecision(1)
            << elapsed(start) << " s, final L1 " << std::setprecision(5)
            << (report.losses.empty() ? 0.0 : report.losses.back()) << "\n";
  std::cout << "wrote " << (out / "fp.adbm").string() << "\n";
}

void run_quantize(const RunConfig& config, const std::string& checkpoint, const std::string& command) {
  const fs::path out = config.out;
  const fs::path in = checkpoint.empty() ? out / "fp.adbm" : fs::path(checkpoint);
  SrNetwork fp = load_checkpoint(in, &config.net);
  CalibSet calib = build_calib_set(config);
  ImageSet probes = probe_set(config);
  ProbeSet probe{probes.lr, probes.hr};

  fs::create_directories(out);
  std::ofstream log(out / "finetune_log.jsonl", std::ios::binary);
  if (!log) throw Error(ErrorKind::kIo, "cannot write '" + (out / "finetune_log.jsonl").string() + "'");
  QuantizeResult result =
      quantize_network(fp, calib, config, probe, [&log](const LogRecord& r) { log << r.json() << '\n'; });
  log.close();

  save_checkpoint(result.net, out / "quant.adbm");
  write_text(out / "calibration.csv", calibration_csv(result.init));
  write_text(out / "finetune_epochs.csv", epoch_csv(result.log));
  write_manifest(out, config, command);

  const BitDecision d = compose_bits(config.net.b_base, calib.complexities(), result.net.mapper());
  std::cout << "mode: " << mode_name(config.mode) << ", calibration patches: " << calib.size() << "\n";
  std::cout << std::fixed << std::setprecision(2) << "init phase: " << result.init_seconds << " s\n";
  std::cout << "finetune phase: " << result.finetune_seconds << " s (" << result.log.iterations
            << " iterations)\n";
  std::cout << std::setprecision(4) << "FAB (calibration set): " << fab(d.bits) << "\n";
  std::cout << "wrote " << (out / "quant.adbm").string() << "\n";
}

void run_eval(const RunConfig& config, const std::string& checkpoint, const std::string& images,
              const std::string& command) {
  const fs::path out = config.out;
  const fs::path in = checkpoint.empty() ? out / "quant.adbm" : fs::path(checkpoint);
  SrNetwork net = load_checkpoint(in, &config.net);
  const ImageSet set = load_test_set(config, images.empty() ? config.data.test_dir : images);
  const auto rows = evaluate(net, set, config.data.eval_patch);
  write_text(out / "eval.csv", eval_csv(rows));
  write_manifest(out, config, command);
  const EvalRow m = mean_row(rows);
  std::cout << std::fixed << std::setprecision(4) << "images: " << rows.size() << "  PSNR " << m.psnr
            << " dB  SSIM " << m.ssim << "  FAB " << m.fab << "\n";
  std::cout << "wrote " << (out / "eval.csv").string() << "\n";
}

void run_infer(const RunConfig& config, const std::string& checkpoint, const std::string& input,
               const std::string& output) {
  const fs::path in = checkpoint.empty() ? fs::path(config.out) / "quant.adbm" : fs::path(checkpoint);
  SrNetwork net = load_checkpoint(in, &config.net);
  const Tensor lr = load_png(input);
  save_png(super_resolve(net, lr, config.data.eval_patch), output);
  std::cout << "wrote " << output << "\n";
}

void run_diagnose(const RunConfig& config, const std::string& checkpoint, int probe_bits, int resamples,
                  const std::string& command) {
  const fs::path out = config.out;
  const fs::path in = checkpoint.empty() ? out / "fp.adbm" : fs::path(checkpoint);
  SrNetwork net = load_checkpoint(in, &config.net);
  net.clear_quant();
  const CalibSet probes = calib_from_images(load_test_set(config, config.data.test_dir));
  const SeparabilityReport report = separability_report(net, probes, probe_bits);
  const double control = shuffle_control(report.errors, resamples, derive_seed(config.seed, SeedStream::kProbeSet));
  write_text(out / "separability.csv", separability_csv(report, control));
  write_manifest(out, config, command);
  std::cout << std::setprecision(6) << "mean image similarity " << report.mean_image_similarity
            << ", shuffle control " << control << ", gap " << report.mean_image_similarity - control << "\n";
  std::cout << "wrote " << (out / "separability.csv").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive bit-mapping quantization of a toy super-resolution network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  Common common;
  std::string checkpoint;
  std::string images;
  std::string input;
  std::string output;
  std::string mode;
  int probe_bits = 4;
  int resamples = 100;

  auto* pretrain = app.add_subcommand("pretrain", "Train the floating-point network on synthetic pairs");
  add_common(pretrain, common);

  auto* quantize = app.add_subcommand("quantize", "Calibrate and fine-tune quantization parameters");
  add_common(quantize, common);
  quantize->add_option("--checkpoint", checkpoint, "Floating-point checkpoint (default <out>/fp.adbm)");
  quantize->add_option("--mode", mode, "adaptive, minmax, minmax_ft, percentile or percentile_ft");

  auto* eval = app.add_subcommand("eval", "PSNR, SSIM and FAB per image");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/quant.adbm)");
  eval->add_option("--images", images, "Directory of HR PNGs (default data.test_dir or synthetic)");

  auto* infer = app.add_subcommand("infer", "Super-resolve one PNG");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/quant.adbm)");
  infer->add_option("--input", input, "LR PNG")->required();
  infer->add_option("--output", output, "SR PNG")->required();

  auto* diagnose = app.add_subcommand("diagnose", "Layer-error separability across images");
  add_common(diagnose, common);
  diagnose->add_option("--checkpoint", checkpoint, "Floating-point checkpoint (default <out>/fp.adbm)");
  diagnose->add_option("--probe-bits", probe_bits, "Bit-width of the probe quantizer");
  diagnose->add_option("--resamples", resamples, "Shuffle-control draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string command = joined_args(argc, argv);
  try {
    RunConfig config = resolve(common);
    if (pretrain->parsed()) {
      run_pretrain(config, command);
    } else if (quantize->parsed()) {
      if (!mode.empty()) config.mode = parse_mode(mode);
      run_quantize(config, checkpoint, command);
    } else if (eval->parsed()) {
      run_eval(config, checkpoint, images, command);
    } else if (infer->parsed()) {
      run_infer(config, checkpoint, input, output);
    } else if (diagnose->parsed()) {
      run_diagnose(config, checkpoint, probe_bits, resamples, command);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
