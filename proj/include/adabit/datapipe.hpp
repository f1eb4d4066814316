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

#ifndef ADABIT_DATAPIPE_HPP_
#define ADABIT_DATAPIPE_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adabit/bitmapping.hpp"
#include "adabit/tensor.hpp"

namespace adabit {

struct CalibEntry {
  Tensor patch;  // (1, C, H, W)
  ComplexityScore complexity;
  std::string source_id;
};

/// Ordered calibration patches sharing one spatial size.
struct CalibSet {
  std::vector<CalibEntry> entries;
  std::uint64_t sampling_seed = 0;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  /// Stacks entries [first, first + count) into one batch.
  Tensor batch(std::size_t first, std::size_t count) const;
  std::vector<ComplexityScore> complexities() const;
};

/// Non-overlapping patch x patch tiles in row-major order; right and bottom
/// remainders are padded by edge replication.
std::vector<Tensor> extract_patches(const Tensor& image, int patch = 96);

/// Reassembles tiles produced by extract_patches (after optional upscaling by
/// `scale`) and crops to height x width.
Tensor stitch_patches(std::span<const Tensor> tiles, int height, int width, int patch);

enum class SamplingStrategy { kRandom, kStratified };

struct SamplingConfig {
  std::size_t count = 100;
  SamplingStrategy strategy = SamplingStrategy::kRandom;
  int groups = 4;
};

struct PoolImage {
  Tensor image;  // (1, C, H, W)
  std::string source_id;
};

/// Selects `count` images from the pool. Random: seeded uniform sample without
/// replacement. Stratified: sort by complexity, split into `groups` equal-count
/// groups, take ceil(count/groups) from each and trim to `count`.
/// Throws when the pool holds fewer than `count` images.
std::vector<std::size_t> sample_indices(std::span<const ComplexityScore> complexities,
                                        const SamplingConfig& config, std::uint64_t seed);

/// Samples whole images and splits each into patches of `patch` pixels.
CalibSet sample_calib(std::span<const PoolImage> pool, const SamplingConfig& config,
                      std::uint64_t seed, int patch);

// Procedural imagery.

enum class SynthKind { kConstant, kGrating, kPolygons, kSmoothNoise, kMixture };

/// One RGB image in [0, 1] of shape (1, 3, height, width).
Tensor synth_image(int height, int width, SynthKind kind, std::mt19937_64& rng);
/// Texture mixture drawn per image from gratings, polygons and smooth noise.
std::vector<Tensor> synth_pool(std::size_t count, int height, int width, std::uint64_t seed);
/// Probe images spanning constant, low-texture and high-texture content.
std::vector<Tensor> synth_probe_set(std::size_t count, int height, int width, std::uint64_t seed);

/// Block-average downsampling by an integer factor; H and W must divide.
Tensor box_downsample(const Tensor& image, int factor);
Tensor nearest_upsample(const Tensor& image, int factor);
/// Crops H and W down to multiples of `factor`.
Tensor crop_to_multiple(const Tensor& image, int factor);

// PNG I/O (8-bit gray or RGB; alpha is dropped).

Tensor load_png(const std::filesystem::path& path);
void save_png(const Tensor& image, const std::filesystem::path& path);
/// PNG files in `dir`, sorted lexicographically by filename.
std::vector<std::filesystem::path> list_png(const std::filesystem::path& dir);

}  // namespace adabit

#endif  // ADABIT_DATAPIPE_HPP_
