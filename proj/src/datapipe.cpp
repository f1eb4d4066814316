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

#include "adabit/datapipe.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "adabit/error.hpp"
#include "adabit/metrics.hpp"

namespace adabit {

Tensor CalibSet::batch(std::size_t first, std::size_t count) const {
  if (first + count > entries.size() || count == 0) {
    throw Error(ErrorKind::kInvalidArgument, "calibration batch out of range");
  }
  std::vector<Tensor> parts;
  parts.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) parts.push_back(entries[i].patch);
  return stack_batch(parts);
}

std::vector<ComplexityScore> CalibSet::complexities() const {
  std::vector<ComplexityScore> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.complexity);
  return out;
}

std::vector<Tensor> extract_patches(const Tensor& image, int patch) {
  const Shape s = image.shape();
  if (s.n != 1 || s.h < 1 || s.w < 1) {
    throw Error(ErrorKind::kShape, "extract_patches needs one nonempty image, got " + s.str());
  }
  if (patch < 1) throw Error(ErrorKind::kInvalidArgument, "patch size must be positive");
  const int rows = (s.h + patch - 1) / patch;
  const int cols = (s.w + patch - 1) / patch;
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Tensor tile({1, s.c, patch, patch});
      for (int ch = 0; ch < s.c; ++ch)
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) {
            const int sy = std::min(r * patch + y, s.h - 1);
            const int sx = std::min(c * patch + x, s.w - 1);
            tile.at(0, ch, y, x) = image.at(0, ch, sy, sx);
          }
      out.push_back(std::move(tile));
    }
  }
  return out;
}

Tensor stitch_patches(std::span<const Tensor> tiles, int height, int width, int patch) {
  if (tiles.empty()) throw Error(ErrorKind::kEmptyInput, "stitch_patches of zero tiles");
  const int rows = (height + patch - 1) / patch;
  const int cols = (width + patch - 1) / patch;
  if (tiles.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorKind::kShape, "expected " + std::to_string(rows * cols) + " tiles, got " +
                                       std::to_string(tiles.size()));
  }
  const int channels = tiles.front().shape().c;
  Tensor out({1, channels, height, width});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Tensor& tile = tiles[static_cast<std::size_t>(r * cols + c)];
      if (tile.shape().h != patch || tile.shape().w != patch || tile.shape().c != channels) {
        throw Error(ErrorKind::kShape, "tile " + tile.shape().str() + " does not match patch " + std::to_string(patch));
      }
      for (int ch = 0; ch < channels; ++ch)
        for (int y = 0; y < patch && r * patch + y < height; ++y)
          for (int x = 0; x < patch && c * patch + x < width; ++x)
            out.at(0, ch, r * patch + y, c * patch + x) = tile.at(0, ch, y, x);
    }
  return out;
}

std::vector<std::size_t> sample_indices(std::span<const ComplexityScore> complexities,
                                        const SamplingConfig& config, std::uint64_t seed) {
  const std::size_t pool = complexities.size();
  const std::size_t n = config.count;
  if (pool < n) {
    throw Error(ErrorKind::kInvalidArgument, "pool of " + std::to_string(pool) +
                                                 " images is smaller than the requested " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  if (config.strategy == SamplingStrategy::kRandom) {
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n);
    return order;
  }

  if (config.groups < 1) throw Error(ErrorKind::kInvalidArgument, "stratified sampling needs >= 1 group");
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return complexities[a].value < complexities[b].value;
  });
  const auto groups = static_cast<std::size_t>(config.groups);
  const std::size_t quota = (n + groups - 1) / groups;
  std::vector<std::size_t> picked;
  std::vector<std::size_t> rest;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(g * pool / groups),
                                     order.begin() + static_cast<std::ptrdiff_t>((g + 1) * pool / groups));
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take = std::min(quota, members.size());
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  if (picked.size() > n) {
    // Drop the surplus at uniformly random positions, keeping group order.
    std::vector<std::size_t> positions(picked.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    positions.resize(n);
    std::sort(positions.begin(), positions.end());
    std::vector<std::size_t> kept;
    for (std::size_t p : positions) kept.push_back(picked[p]);
    picked = std::move(kept);
  } else if (picked.size() < n) {
    std::shuffle(rest.begin(), rest.end(), rng);
    picked.insert(picked.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n - picked.size()));
  }
  return picked;
}

CalibSet sample_calib(std::span<const PoolImage> pool, const SamplingConfig& config,
                      std::uint64_t seed, int patch) {
  std::vector<ComplexityScore> cs;
  cs.reserve(pool.size());
  for (const auto& p : pool) cs.push_back(complexity(p.image));
  CalibSet out;
  out.sampling_seed = seed;
  for (std::size_t idx : sample_indices(cs, config, seed)) {
    const auto tiles = extract_patches(pool[idx].image, patch);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      std::string id = pool[idx].source_id;
      if (tiles.size() > 1) id += "#" + std::to_string(t);
      out.entries.push_back({tiles[t], complexity(tiles[t]), std::move(id)});
    }
  }
  return out;
}

// Procedural imagery.

namespace {

using Color = std::array<float, 3>;

Color random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  return {u(rng), u(rng), u(rng)};
}

void fill_constant(Tensor& img, const Color& c) {
  const Shape s = img.shape();
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) img.at(0, ch, y, x) = c[static_cast<std::size_t>(ch)];
}

// Blends two colors by a per-pixel weight in [0, 1].
void paint_blend(Tensor& img, const std::vector<float>& weight, const Color& a, const Color& b) {
  const Shape s = img.shape();
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const float t = weight[static_cast<std::size_t>(y) * s.w + x];
        const auto c = static_cast<std::size_t>(ch);
        img.at(0, ch, y, x) = a[c] * (1.0f - t) + b[c] * t;
      }
}

std::vector<float> grating_weight(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(0.03, 0.35);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> count(1, 3);
  const int waves = count(rng);
  std::vector<double> fx, fy, ph;
  for (int i = 0; i < waves; ++i) {
    const double f = freq(rng);
    const double a = angle(rng);
    fx.push_back(f * std::cos(a));
    fy.push_back(f * std::sin(a));
    ph.push_back(phase(rng));
  }
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (int i = 0; i < waves; ++i) v += std::sin(2.0 * std::numbers::pi * (fx[i] * x + fy[i] * y) + ph[i]);
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(0.5 + 0.5 * v / waves);
    }
  return out;
}

bool inside_polygon(const std::vector<std::pair<double, double>>& poly, double px, double py) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

void paint_polygons(Tensor& img, std::mt19937_64& rng) {
  const Shape s = img.shape();
  fill_constant(img, random_color(rng));
  std::uniform_int_distribution<int> shapes(3, 12);
  std::uniform_int_distribution<int> vertices(3, 7);
  std::uniform_real_distribution<double> ux(0.0, s.w);
  std::uniform_real_distribution<double> uy(0.0, s.h);
  std::uniform_real_distribution<double> radius(0.05 * std::min(s.h, s.w), 0.4 * std::min(s.h, s.w));
  std::uniform_real_distribution<double> jitter(0.5, 1.0);
  const int count = shapes(rng);
  for (int p = 0; p < count; ++p) {
    const double cx = ux(rng);
    const double cy = uy(rng);
    const double r = radius(rng);
    const int nv = vertices(rng);
    std::vector<std::pair<double, double>> poly;
    for (int v = 0; v < nv; ++v) {
      const double a = 2.0 * std::numbers::pi * v / nv;
      const double rr = r * jitter(rng);
      poly.emplace_back(cx + rr * std::cos(a), cy + rr * std::sin(a));
    }
    const Color c = random_color(rng);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!inside_polygon(poly, x + 0.5, y + 0.5)) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(0, ch, y, x) = c[static_cast<std::size_t>(ch)];
      }
  }
}

std::vector<float> smooth_noise_weight(int h, int w, std::mt19937_64& rng, double sigma_min = 0.5,
                                       double sigma_max = 3.0) {
  std::uniform_real_distribution<double> sigma_dist(sigma_min, sigma_max);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  const double sigma = sigma_dist(rng);
  std::vector<float> field(static_cast<std::size_t>(h) * w);
  for (float& v : field) v = noise(rng);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= norm;
  auto blur = [&](bool horizontal) {
    std::vector<float> out(field.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = horizontal ? y : std::clamp(y + i, 0, h - 1);
          const int xx = horizontal ? std::clamp(x + i, 0, w - 1) : x;
          acc += kernel[static_cast<std::size_t>(i + radius)] * field[static_cast<std::size_t>(yy) * w + xx];
        }
        out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
      }
    field = std::move(out);
  };
  blur(true);
  blur(false);
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const float span = std::max(*hi - *lo, 1e-6f);
  const float base = *lo;
  for (float& v : field) v = (v - base) / span;
  return field;
}

// Pulls every pixel toward the image mean by `contrast` in (0, 1].
void apply_contrast(Tensor& img, float contrast) {
  const Shape s = img.shape();
  for (int ch = 0; ch < s.c; ++ch) {
    double mean = 0.0;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) mean += img.at(0, ch, y, x);
    mean /= static_cast<double>(s.plane());
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        float& v = img.at(0, ch, y, x);
        v = static_cast<float>(mean + contrast * (v - mean));
      }
  }
}

// Adds fine grain of log-uniform amplitude so texture density varies
// smoothly from nearly flat to busy.
void add_detail(Tensor& img, std::mt19937_64& rng) {
  const Shape s = img.shape();
  std::uniform_real_distribution<double> log_amp(std::log(0.02), std::log(0.8));
  const auto amp = static_cast<float>(std::exp(log_amp(rng)));
  const auto grain = smooth_noise_weight(s.h, s.w, rng, 0.4, 1.2);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        float& v = img.at(0, ch, y, x);
        v = std::clamp(v + amp * (grain[static_cast<std::size_t>(y) * s.w + x] - 0.5f), 0.0f, 1.0f);
      }
}

}  // namespace

Tensor synth_image(int height, int width, SynthKind kind, std::mt19937_64& rng) {
  Tensor img({1, 3, height, width});
  switch (kind) {
    case SynthKind::kConstant:
      fill_constant(img, random_color(rng));
      break;
    case SynthKind::kGrating: {
      const Color a = random_color(rng);
      const Color b = random_color(rng);
      paint_blend(img, grating_weight(height, width, rng), a, b);
      break;
    }
    case SynthKind::kPolygons:
      paint_polygons(img, rng);
      break;
    case SynthKind::kSmoothNoise: {
      const Color a = random_color(rng);
      const Color b = random_color(rng);
      paint_blend(img, smooth_noise_weight(height, width, rng), a, b);
      break;
    }
    case SynthKind::kMixture: {
      std::uniform_int_distribution<int> pick(0, 2);
      const int k = pick(rng);
      const SynthKind sub = k == 0 ? SynthKind::kGrating : (k == 1 ? SynthKind::kPolygons : SynthKind::kSmoothNoise);
      img = synth_image(height, width, sub, rng);
      add_detail(img, rng);
      std::uniform_real_distribution<float> contrast(0.15f, 1.0f);
      apply_contrast(img, contrast(rng));
      break;
    }
  }
  return img;
}

std::vector<Tensor> synth_pool(std::size_t count, int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_image(height, width, SynthKind::kMixture, rng));
  return out;
}

std::vector<Tensor> synth_probe_set(std::size_t count, int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (i % 3) {
      case 0:
        out.push_back(synth_image(height, width, SynthKind::kConstant, rng));
        break;
      case 1: {
        Tensor img = synth_image(height, width, SynthKind::kSmoothNoise, rng);
        apply_contrast(img, 0.2f);
        out.push_back(std::move(img));
        break;
      }
      default:
        out.push_back(synth_image(height, width, (i / 3) % 2 == 0 ? SynthKind::kGrating : SynthKind::kPolygons, rng));
        break;
    }
  }
  return out;
}

Tensor box_downsample(const Tensor& image, int factor) {
  const Shape s = image.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw Error(ErrorKind::kShape, "box_downsample: " + s.str() + " not divisible by " + std::to_string(factor));
  }
  Tensor out({s.n, s.c, s.h / factor, s.w / factor});
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / factor; ++y)
        for (int x = 0; x < s.w / factor; ++x) {
          float acc = 0.0f;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += image.at(n, c, y * factor + dy, x * factor + dx);
          out.at(n, c, y, x) = acc * inv;
        }
  return out;
}

Tensor nearest_upsample(const Tensor& image, int factor) {
  const Shape s = image.shape();
  Tensor out({s.n, s.c, s.h * factor, s.w * factor});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h * factor; ++y)
        for (int x = 0; x < s.w * factor; ++x) out.at(n, c, y, x) = image.at(n, c, y / factor, x / factor);
  return out;
}

Tensor crop_to_multiple(const Tensor& image, int factor) {
  const Shape s = image.shape();
  const int h = s.h - s.h % factor;
  const int w = s.w - s.w % factor;
  if (h == s.h && w == s.w) return image;
  Tensor out({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, y, x);
  return out;
}

Tensor load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorKind::kFormat, "cannot read PNG '" + path.string() + "': " + img.message);
  }
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw Error(ErrorKind::kFormat, "unsupported PNG format in '" + path.string() + "': only 8-bit images are accepted");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    throw Error(ErrorKind::kFormat, "cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  Tensor out({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(0, c, y, x) = static_cast<float>(buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return out;
}

void save_png(const Tensor& image, const std::filesystem::path& path) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw Error(ErrorKind::kShape, "save_png needs one 1- or 3-channel image, got " + s.str());
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(s.w);
  img.height = static_cast<png_uint_32>(s.h);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, s.c == 1 ? 0 : c, y, x), 0.0f, 1.0f);
        buffer[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorKind::kIo, "cannot write PNG '" + path.string() + "': " + img.message);
  }
}

std::vector<std::filesystem::path> list_png(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::kIo, "'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

}  // namespace adabit
