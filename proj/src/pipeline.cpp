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

#include "adabit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>

#include <json.hpp>

#include "adabit/error.hpp"

#ifndef ADABIT_VERSION
#define ADABIT_VERSION "unknown"
#endif

namespace adabit {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ImageSet from_hr(std::vector<std::string> ids, std::vector<Tensor> hr, int scale) {
  ImageSet set;
  set.ids = std::move(ids);
  for (auto& h : hr) {
    Tensor cropped = crop_to_multiple(h, scale);
    set.lr.push_back(box_downsample(cropped, scale));
    set.hr.push_back(std::move(cropped));
  }
  return set;
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t count) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream s;
    s << prefix << std::setw(3) << std::setfill('0') << i;
    ids.push_back(s.str());
  }
  return ids;
}

}  // namespace

std::string version_string() { return ADABIT_VERSION; }

void apply_env_overrides(RunConfig& config) {
  if (const char* dir = std::getenv("ADABIT_OUT_DIR"); dir != nullptr && *dir != '\0') config.out = dir;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (path.extension() != ".json") return load_config(path);
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest", e.what());
  }
  if (!j.contains("config") || !j["config"].is_string()) throw FormatError("manifest", "missing config text");
  return parse_config(j["config"].get<std::string>());
}

void write_manifest(const std::filesystem::path& dir, const RunConfig& config, const std::string& command) {
  nlohmann::ordered_json j;
  j["version"] = version_string();
  j["command"] = command;
  j["seed"] = config.seed;
  j["config"] = to_ini(config);
  const std::string name = command.substr(0, command.find(' '));
  write_text(dir / ("manifest_" + name + ".json"), j.dump(2) + "\n");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

std::vector<PoolImage> calibration_pool(const RunConfig& config) {
  std::vector<PoolImage> pool;
  if (!config.data.calib_dir.empty()) {
    for (const auto& path : list_png(config.data.calib_dir)) {
      pool.push_back({load_png(path), path.filename().string()});
    }
    if (pool.empty()) throw Error(ErrorKind::kEmptyInput, "no PNG files in '" + config.data.calib_dir + "'");
    return pool;
  }
  const int side = config.data.lr_size * config.net.scale;
  auto images = synth_pool(static_cast<std::size_t>(config.data.pool_size), side, side,
                           derive_seed(config.seed, SeedStream::kCalibPool));
  const auto ids = numbered("calib", images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    pool.push_back({box_downsample(images[i], config.net.scale), ids[i]});
  }
  return pool;
}

CalibSet build_calib_set(const RunConfig& config) {
  const auto pool = calibration_pool(config);
  return sample_calib(pool, config.data.sampling, derive_seed(config.seed, SeedStream::kCalibSampling),
                      config.data.patch);
}

ImageSet load_test_set(const RunConfig& config, const std::string& dir) {
  if (!dir.empty()) {
    std::vector<std::string> ids;
    std::vector<Tensor> hr;
    for (const auto& path : list_png(dir)) {
      ids.push_back(path.filename().string());
      hr.push_back(load_png(path));
    }
    if (hr.empty()) throw Error(ErrorKind::kEmptyInput, "no PNG files in '" + dir + "'");
    return from_hr(std::move(ids), std::move(hr), config.net.scale);
  }
  auto hr = synth_pool(static_cast<std::size_t>(config.data.test_count), config.data.test_size,
                       config.data.test_size, derive_seed(config.seed, SeedStream::kTestSet));
  auto ids = numbered("test", hr.size());
  return from_hr(std::move(ids), std::move(hr), config.net.scale);
}

ImageSet probe_set(const RunConfig& config) {
  auto hr = synth_probe_set(static_cast<std::size_t>(config.data.probe_count), config.data.test_size,
                            config.data.test_size, derive_seed(config.seed, SeedStream::kProbeSet));
  auto ids = numbered("probe", hr.size());
  return from_hr(std::move(ids), std::move(hr), config.net.scale);
}

CalibSet calib_from_images(const ImageSet& images) {
  CalibSet set;
  for (std::size_t i = 0; i < images.lr.size(); ++i) {
    set.entries.push_back({images.lr[i], complexity(images.lr[i]), images.ids[i]});
  }
  return set;
}

SrNetwork pretrain_network(const RunConfig& config, PretrainReport* report) {
  SrNetwork net(config.net, derive_seed(config.seed, SeedStream::kNetInit));
  PretrainReport r = pretrain_fp(net, config.pretrain, derive_seed(config.seed, SeedStream::kPretrainData));
  if (report != nullptr) *report = std::move(r);
  return net;
}

bool mode_finetunes(QuantMode mode) {
  return mode == QuantMode::kAdaptive || mode == QuantMode::kMinMaxFt || mode == QuantMode::kPercentileFt;
}

InitConfig init_config_for(const RunConfig& config) {
  InitConfig ic;
  ic.p_image = config.calib.p_image;
  ic.p_layer = config.calib.p_layer;
  ic.momentum = config.calib.momentum;
  ic.magnitude = config.calib.magnitude;
  ic.batch = config.calib.batch;
  ic.sample_cap = config.calib.sample_cap;
  ic.seed = derive_seed(config.seed, SeedStream::kActivationSamples);
  switch (config.mode) {
    case QuantMode::kAdaptive:
      break;
    case QuantMode::kMinMax:
    case QuantMode::kMinMaxFt:
      ic.magnitude = 0;
      ic.weight_init = WeightInit::kMaxAbs;
      ic.bit_aware_clipping = false;
      break;
    case QuantMode::kPercentile:
    case QuantMode::kPercentileFt:
      ic.magnitude = 0;
      ic.range_init = RangeInit::kPercentile;
      ic.weight_init = WeightInit::kPercentile;
      ic.bit_aware_clipping = false;
      break;
  }
  return ic;
}

FinetuneConfig finetune_config_for(const RunConfig& config) {
  FinetuneConfig fc = config.finetune;
  fc.seed = derive_seed(config.seed, SeedStream::kFinetune);
  fc.update_mapping = config.mode == QuantMode::kAdaptive;
  return fc;
}

QuantizeResult quantize_network(const SrNetwork& fp, const CalibSet& calib, const RunConfig& config,
                                const ProbeSet& probe, const std::function<void(const LogRecord&)>& on_record) {
  QuantizeResult result{fp.clone(), {}, {}, 0.0, 0.0};
  result.net.set_frozen(true);
  auto start = std::chrono::steady_clock::now();
  result.init = run_init_phase(result.net, calib, init_config_for(config));
  result.init_seconds = seconds_since(start);
  if (mode_finetunes(config.mode)) {
    start = std::chrono::steady_clock::now();
    result.log = run_finetune(calib, fp, result.net, finetune_config_for(config), probe, on_record);
    result.finetune_seconds = seconds_since(start);
  }
  return result;
}

namespace {

// Top-left h x w window of a tile.
Tensor crop(const Tensor& t, int h, int w) {
  const Shape s = t.shape();
  Tensor out({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = t.at(n, c, y, x);
      }
    }
  }
  return out;
}

}  // namespace

Tensor super_resolve(const SrNetwork& net, const Tensor& lr, int tile, std::vector<BitDecision>* decisions) {
  const Shape s = lr.shape();
  if (s.n != 1) throw Error(ErrorKind::kShape, "super_resolve expects one image, got " + s.str());
  const int scale = net.config().scale;
  const int cols = (s.w + tile - 1) / tile;
  const auto tiles = extract_patches(lr, tile);
  std::vector<Tensor> outputs;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Tensor& patch = tiles[i];
    if (net.has_quant()) {
      // The bit decision sees only real pixels, not the replicated padding.
      const int r = static_cast<int>(i) / cols;
      const int c = static_cast<int>(i) % cols;
      const int h = std::min(tile, s.h - r * tile);
      const int w = std::min(tile, s.w - c * tile);
      const ComplexityScore cx = complexity(h == tile && w == tile ? patch : crop(patch, h, w));
      BitDecision d = compose_bits(net.config().b_base, std::span(&cx, 1), net.mapper());
      outputs.push_back(*net.forward(patch, ForwardMode::kQuantized, &d).output);
      if (decisions != nullptr) decisions->push_back(std::move(d));
    } else {
      outputs.push_back(*net.forward(patch, ForwardMode::kFloat, nullptr).output);
    }
  }
  return stitch_patches(outputs, s.h * scale, s.w * scale, tile * scale);
}

std::vector<EvalRow> evaluate(const SrNetwork& net, const ImageSet& images, int tile) {
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < images.lr.size(); ++i) {
    EvalRow row;
    row.image = images.ids[i];
    row.complexity = complexity(images.lr[i]).value;
    std::vector<BitDecision> decisions;
    Tensor sr = super_resolve(net, images.lr[i], tile, &decisions);
    if (decisions.empty()) {
      row.fab = 32.0;
    } else {
      std::vector<std::vector<int>> log;
      double factors = 0.0;
      for (const auto& d : decisions) {
        factors += d.image_factors.at(0);
        log.push_back(d.bits.at(0));
      }
      row.image_factor = factors / static_cast<double>(decisions.size());
      row.fab = fab(log);
    }
    row.psnr = psnr(sr, images.hr[i]);
    row.ssim = ssim(sr, images.hr[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

EvalRow mean_row(const std::vector<EvalRow>& rows) {
  EvalRow m;
  m.image = "mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.complexity += r.complexity;
    m.image_factor += r.image_factor;
    m.fab += r.fab;
    m.psnr += r.psnr;
    m.ssim += r.ssim;
  }
  const double n = static_cast<double>(rows.size());
  m.complexity /= n;
  m.image_factor /= n;
  m.fab /= n;
  m.psnr /= n;
  m.ssim /= n;
  return m;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "image,complexity,b_I,FAB,PSNR,SSIM\n";
  auto line = [&out](const EvalRow& r) {
    out << r.image << ',' << r.complexity << ',' << r.image_factor << ',' << r.fab << ',' << r.psnr << ','
        << r.ssim << '\n';
  };
  for (const auto& r : rows) line(r);
  line(mean_row(rows));
  return out.str();
}

std::string separability_csv(const SeparabilityReport& report, double shuffle_mean) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "image";
  const std::size_t layers = report.errors.empty() ? 0 : report.errors.front().size();
  for (std::size_t k = 0; k < layers; ++k) out << ",mse_" << k;
  out << '\n';
  for (std::size_t i = 0; i < report.errors.size(); ++i) {
    out << i;
    for (double e : report.errors[i]) out << ',' << e;
    out << '\n';
  }
  out << "# mean_image_similarity," << report.mean_image_similarity << '\n';
  out << "# shuffle_control," << shuffle_mean << '\n';
  out << "# mean_layer_similarity," << mean_off_diagonal(report.layer_similarity) << '\n';
  return out.str();
}

std::string epoch_csv(const FinetuneLog& log) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "epoch,mean_L_pix,FAB,probe_PSNR\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << e.mean_l_pix << ',' << e.fab << ',' << e.probe_psnr << '\n';
  }
  return out.str();
}

}  // namespace adabit
