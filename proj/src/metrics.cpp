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

#include "adabit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adabit/calibration.hpp"
#include "adabit/datapipe.hpp"
#include "adabit/error.hpp"
#include "adabit/quantizer.hpp"
#include "adabit/srnet.hpp"

namespace adabit {

std::vector<double> luminance(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1) throw Error(ErrorKind::kShape, "luminance expects a single image, got " + s.str());
  if (s.c != 1 && s.c != 3) throw Error(ErrorKind::kShape, "luminance expects 1 or 3 channels, got " + s.str());
  std::vector<double> y(s.plane());
  for (int r = 0; r < s.h; ++r)
    for (int c = 0; c < s.w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * s.w + c;
      y[i] = s.c == 1 ? image.at(0, 0, r, c)
                      : 0.299 * image.at(0, 0, r, c) + 0.587 * image.at(0, 1, r, c) + 0.114 * image.at(0, 2, r, c);
    }
  return y;
}

ComplexityScore complexity(const Tensor& image) {
  const Shape s = image.shape();
  if (s.numel() == 0) throw Error(ErrorKind::kEmptyInput, "complexity of an empty image");
  const auto y = luminance(image);
  double gx = 0.0;
  double gy = 0.0;
  for (int r = 0; r < s.h; ++r)
    for (int c = 0; c < s.w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * s.w + c;
      if (c + 1 < s.w) gx += std::fabs(y[i + 1] - y[i]);
      if (r + 1 < s.h) gy += std::fabs(y[i + static_cast<std::size_t>(s.w)] - y[i]);
    }
  const double nx = static_cast<double>(s.h) * (s.w - 1);
  const double ny = static_cast<double>(s.h - 1) * s.w;
  const double mx = nx > 0 ? gx / nx : 0.0;
  const double my = ny > 0 ? gy / ny : 0.0;
  return {0.5 * (mx + my)};
}

SensitivityScore layer_sensitivity(const SrNetwork& net, const CalibSet& calib) {
  if (calib.empty()) throw Error(ErrorKind::kEmptyInput, "layer_sensitivity needs calibration images");
  const auto k = static_cast<std::size_t>(net.num_quantized());
  std::vector<double> acc(k, 0.0);
  constexpr std::size_t kBatch = 16;
  for (std::size_t first = 0; first < calib.size(); first += kBatch) {
    const std::size_t count = std::min(kBatch, calib.size() - first);
    const auto r = net.forward(calib.batch(first, count), ForwardMode::kFloat, nullptr);
    for (std::size_t layer = 0; layer < k; ++layer) {
      const Tensor& x = *r.layer_inputs[layer];
      const std::size_t sample = x.shape().sample();
      for (int n = 0; n < x.shape().n; ++n) {
        const float* p = x.data().data() + n * sample;
        double mean = 0.0;
        for (std::size_t i = 0; i < sample; ++i) mean += p[i];
        mean /= static_cast<double>(sample);
        double var = 0.0;
        for (std::size_t i = 0; i < sample; ++i) var += (p[i] - mean) * (p[i] - mean);
        acc[layer] += std::sqrt(var / static_cast<double>(sample));
      }
    }
  }
  for (double& v : acc) v /= static_cast<double>(calib.size());
  return {acc};
}

double fab(const std::vector<std::vector<int>>& bit_log) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& row : bit_log) {
    for (int b : row) {
      sum += b;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::kEmptyInput, "fab of an empty bit log");
  return sum / static_cast<double>(count);
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShape, "metric inputs differ: " + a.shape().str() + " vs " + b.shape().str());
  }
  if (a.numel() == 0) throw Error(ErrorKind::kEmptyInput, "metric of empty tensors");
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double norm = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    norm += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= norm;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  int size = std::min({11, h, w});
  if (size % 2 == 0) --size;
  const auto g = gaussian_window(size, 1.5);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, g);
  const auto mu_b = filter_valid(b, h, w, g);
  const auto s_aa = filter_valid(aa, h, w, g);
  const auto s_bb = filter_valid(bb, h, w, g);
  const auto s_ab = filter_valid(ab, h, w, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i];
    const double vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + kC1) * (2 * cov + kC2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShape, "metric inputs differ: " + a.shape().str() + " vs " + b.shape().str());
  }
  if (a.numel() == 0) throw Error(ErrorKind::kEmptyInput, "metric of empty tensors");
  const Shape s = a.shape();
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    total += ssim_plane(luminance(a.slice_batch(n)), luminance(b.slice_batch(n)), s.h, s.w);
  }
  return total / s.n;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kShape, "cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<std::vector<double>> cosine_matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = cosine_similarity(rows[i], rows[j]);
  return m;
}

double mean_off_diagonal(const std::vector<std::vector<double>>& matrix) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < matrix.size(); ++i)
    for (std::size_t j = 0; j < matrix.size(); ++j) {
      if (i == j) continue;
      sum += matrix[i][j];
      ++count;
    }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

SeparabilityReport separability_report(const SrNetwork& net, const CalibSet& calib, int probe_bits) {
  if (calib.size() < 2 || net.num_quantized() < 2) {
    throw Error(ErrorKind::kInvalidArgument, "separability needs at least 2 images and 2 layers");
  }
  const auto ranges = observe_minmax(net, calib, 0.9f);
  const auto k = static_cast<std::size_t>(net.num_quantized());
  SeparabilityReport report;
  for (std::size_t i = 0; i < calib.size(); ++i) {
    const auto r = net.forward(calib.entries[i].patch, ForwardMode::kFloat, nullptr);
    std::vector<double> row(k);
    for (std::size_t layer = 0; layer < k; ++layer) {
      const ObservedRange range = widen_if_degenerate(ranges[layer]);
      double acc = 0.0;
      auto x = r.layer_inputs[layer]->data();
      for (float v : x) {
        const double d = quantize_act_value(v, range.lower, range.upper, probe_bits) - static_cast<double>(v);
        acc += d * d;
      }
      row[layer] = acc / static_cast<double>(x.size());
    }
    report.errors.push_back(std::move(row));
  }
  report.image_similarity = cosine_matrix(report.errors);
  std::vector<std::vector<double>> by_layer(k, std::vector<double>(calib.size()));
  for (std::size_t i = 0; i < calib.size(); ++i)
    for (std::size_t layer = 0; layer < k; ++layer) by_layer[layer][i] = report.errors[i][layer];
  report.layer_similarity = cosine_matrix(by_layer);
  report.mean_image_similarity = mean_off_diagonal(report.image_similarity);
  return report;
}

double shuffle_control(const std::vector<std::vector<double>>& errors, int resamples, std::uint64_t seed) {
  if (resamples < 1) throw Error(ErrorKind::kInvalidArgument, "shuffle_control needs >= 1 resample");
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int r = 0; r < resamples; ++r) {
    auto shuffled = errors;
    for (auto& row : shuffled) std::shuffle(row.begin(), row.end(), rng);
    total += mean_off_diagonal(cosine_matrix(shuffled));
  }
  return total / resamples;
}

namespace {
std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorKind::kInvalidArgument, "spearman needs two equally long series of length >= 2");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace adabit
