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

#include "adabit/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "adabit/error.hpp"

namespace adabit {

namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

struct ConvGeometry {
  int cin, h, w, kh, kw, stride, pad, hout, wout;
  int rows() const { return cin * kh * kw; }
  int cols() const { return hout * wout; }
};

// Output columns [lo, hi) whose input column for kernel offset kx is in bounds.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  int lo = 0;
  while (lo < g.wout && lo * g.stride - g.pad + kx < 0) ++lo;
  int hi = g.wout;
  while (hi > lo && (hi - 1) * g.stride - g.pad + kx >= g.w) --hi;
  return {lo, hi};
}

// Unfolds one sample (Cin, H, W) into a (Cin*kh*kw, Hout*Wout) matrix.
void im2col(const float* src, const ConvGeometry& g, float* cols) {
  const int out_plane = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    const float* plane = src + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * out_plane;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* dst = row + static_cast<std::size_t>(oy) * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wout, 0.0f);
            continue;
          }
          const float* line = plane + static_cast<std::size_t>(iy) * g.w;
          const auto [lo, hi] = valid_columns(g, kx);
          std::fill(dst, dst + lo, 0.0f);
          if (g.stride == 1) {
            std::copy(line + lo - g.pad + kx, line + hi - g.pad + kx, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox * g.stride - g.pad + kx];
          }
          std::fill(dst + hi, dst + g.wout, 0.0f);
        }
      }
    }
  }
}

void col2im_accumulate(const float* cols, const ConvGeometry& g, float* dst) {
  const int out_plane = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    float* plane = dst + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * out_plane;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          float* line = plane + static_cast<std::size_t>(iy) * g.w;
          const float* src = row + static_cast<std::size_t>(oy) * g.wout;
          const auto [lo, hi] = valid_columns(g, kx);
          for (int ox = lo; ox < hi; ++ox) line[ox * g.stride - g.pad + kx] += src[ox];
        }
      }
    }
  }
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw Error(ErrorKind::kShape, "negative dimension in " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw Error(ErrorKind::kShape, "value count " + std::to_string(data_.size()) +
                                       " does not match shape " + shape.str());
  }
}

float Tensor::item() const {
  if (data_.empty()) throw Error(ErrorKind::kEmptyInput, "item() on empty tensor");
  return data_.front();
}

std::span<float> Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0f);
  return grad_;
}

void Tensor::zero_grad() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0f); }

Tensor Tensor::slice_batch(int index) const {
  if (index < 0 || index >= shape_.n) {
    throw Error(ErrorKind::kShape, "batch index " + std::to_string(index) + " out of " + shape_.str());
  }
  const std::size_t sz = shape_.sample();
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(sz * index);
  return Tensor({1, shape_.c, shape_.h, shape_.w}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(sz)));
}

TensorPtr make_parameter(float value) {
  auto p = std::make_shared<Tensor>(Tensor::scalar(value));
  p->set_requires_grad(true);
  return p;
}

Tensor stack_batch(std::span<const Tensor> samples) {
  if (samples.empty()) throw Error(ErrorKind::kEmptyInput, "stack_batch of zero samples");
  const Shape s0 = samples.front().shape();
  std::vector<float> out;
  int n = 0;
  for (const auto& s : samples) {
    const Shape si = s.shape();
    if (si.c != s0.c || si.h != s0.h || si.w != s0.w) {
      throw Error(ErrorKind::kShape, "stack_batch mixes " + s0.str() + " and " + si.str());
    }
    out.insert(out.end(), s.values().begin(), s.values().end());
    n += si.n;
  }
  return Tensor({n, s0.c, s0.h, s0.w}, std::move(out));
}

void Tape::record(std::string name, BackwardFn fn) {
  entries_.push_back({std::move(name), std::move(fn)});
}

void Tape::backward(const TensorPtr& loss,
                    const std::function<void(std::size_t, std::string_view)>& on_visit) {
  if (entries_.empty()) throw Error(ErrorKind::kState, "backward on empty tape");
  if (!loss || loss->numel() != 1) {
    throw Error(ErrorKind::kShape, "backward needs a scalar loss");
  }
  loss->ensure_grad()[0] += 1.0f;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (on_visit) on_visit(i, entries_[i].name);
    entries_[i].fn();
  }
}

void backward(const TensorPtr& loss, Tape& tape) { tape.backward(loss); }

bool needs_grad(const Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
  if (tape == nullptr) return false;
  for (const TensorPtr* p : inputs) {
    if (p != nullptr && *p && (*p)->requires_grad()) return true;
  }
  return false;
}

bool all_finite(std::span<const float> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

namespace ops {

namespace {
TensorPtr result_like(Shape shape, bool grad) {
  auto out = make_tensor(shape);
  out->set_requires_grad(grad);
  return out;
}
}  // namespace

TensorPtr conv2d(Tape* tape, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, int stride, int padding) {
  const Shape xs = input->shape();
  const Shape ws = weight->shape();
  if (ws.c != xs.c) {
    throw Error(ErrorKind::kShape,
                "conv2d input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (stride < 1 || padding < 0) {
    throw Error(ErrorKind::kInvalidArgument, "conv2d needs stride >= 1 and padding >= 0");
  }
  if (bias && bias->numel() != static_cast<std::size_t>(ws.n)) {
    throw Error(ErrorKind::kShape, "conv2d bias " + bias->shape().str() +
                                       " does not match weight " + ws.str());
  }
  const int hout = (xs.h + 2 * padding - ws.h) / stride + 1;
  const int wout = (xs.w + 2 * padding - ws.w) / stride + 1;
  if (hout <= 0 || wout <= 0) {
    throw Error(ErrorKind::kShape,
                "conv2d kernel " + ws.str() + " larger than padded input " + xs.str());
  }
  const ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding, hout, wout};
  const bool grad = needs_grad(tape, {&input, &weight, &bias});
  auto out = result_like({xs.n, ws.n, hout, wout}, grad);

  std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMap wmat(weight->data().data(), ws.n, g.rows());
  for (int n = 0; n < xs.n; ++n) {
    im2col(input->data().data() + n * xs.sample(), g, cols.data());
    ConstMap cmat(cols.data(), g.rows(), g.cols());
    MutMap ymat(out->data().data() + n * out->shape().sample(), ws.n, g.cols());
    ymat.noalias() = wmat * cmat;
    if (bias) {
      for (int o = 0; o < ws.n; ++o) ymat.row(o).array() += bias->data()[o];
    }
  }

  if (grad) {
    tape->record("conv2d", [input, weight, bias, out, g]() {
      if (!out->has_grad()) return;
      const Shape xs = input->shape();
      const Shape ws = weight->shape();
      const std::size_t out_sample = out->shape().sample();
      std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
      ConstMap wmat(weight->data().data(), ws.n, g.rows());
      for (int n = 0; n < xs.n; ++n) {
        ConstMap gy(out->grad().data() + n * out_sample, ws.n, g.cols());
        if (weight->requires_grad()) {
          im2col(input->data().data() + n * xs.sample(), g, cols.data());
          ConstMap cmat(cols.data(), g.rows(), g.cols());
          MutMap gw(weight->ensure_grad().data(), ws.n, g.rows());
          gw.noalias() += gy * cmat.transpose();
        }
        if (bias && bias->requires_grad()) {
          auto gb = bias->ensure_grad();
          // Plain loop: Eigen's vectorized sum peels by buffer alignment, which
          // varies between processes and breaks bit reproducibility.
          for (int o = 0; o < ws.n; ++o) {
            const float* row = gy.data() + static_cast<std::size_t>(o) * g.cols();
            float sum = 0.0f;
            for (int i = 0; i < g.cols(); ++i) sum += row[i];
            gb[o] += sum;
          }
        }
        if (input->requires_grad()) {
          MutMap gcols(cols.data(), g.rows(), g.cols());
          gcols.noalias() = wmat.transpose() * gy;
          col2im_accumulate(cols.data(), g, input->ensure_grad().data() + n * xs.sample());
        }
      }
    });
  }
  return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& input) {
  const bool grad = needs_grad(tape, {&input});
  auto out = result_like(input->shape(), grad);
  auto x = input->data();
  auto y = out->data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f || std::isnan(x[i]) ? x[i] : 0.0f;
  if (grad) {
    tape->record("relu", [input, out]() {
      if (!out->has_grad()) return;
      auto x = input->data();
      auto gy = out->grad();
      auto gx = input->ensure_grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0f) gx[i] += gy[i];
      }
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) {
    throw Error(ErrorKind::kShape, "add of " + a->shape().str() + " and " + b->shape().str());
  }
  const bool grad = needs_grad(tape, {&a, &b});
  auto out = result_like(a->shape(), grad);
  auto xa = a->data();
  auto xb = b->data();
  auto y = out->data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
  if (grad) {
    tape->record("add", [a, b, out]() {
      if (!out->has_grad()) return;
      auto gy = out->grad();
      for (const TensorPtr* t : {&a, &b}) {
        if (!(*t)->requires_grad()) continue;
        auto g = (*t)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

TensorPtr pixel_shuffle(Tape* tape, const TensorPtr& input, int scale) {
  const Shape s = input->shape();
  if (scale < 1 || s.c % (scale * scale) != 0) {
    throw Error(ErrorKind::kShape, "pixel_shuffle: channels of " + s.str() +
                                       " not divisible by scale^2 = " + std::to_string(scale * scale));
  }
  const int oc = s.c / (scale * scale);
  const Shape os{s.n, oc, s.h * scale, s.w * scale};
  const bool grad = needs_grad(tape, {&input});
  auto out = result_like(os, grad);
  // Visits every (input index, output index) pair of the rearrangement.
  auto for_each_pair = [s, os, oc, scale](auto&& fn) {
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < oc; ++c)
        for (int i = 0; i < scale; ++i)
          for (int j = 0; j < scale; ++j) {
            const int ic = c * scale * scale + i * scale + j;
            for (int y = 0; y < s.h; ++y)
              for (int x = 0; x < s.w; ++x) {
                const std::size_t src = ((static_cast<std::size_t>(n) * s.c + ic) * s.h + y) * s.w + x;
                const std::size_t dst =
                    ((static_cast<std::size_t>(n) * os.c + c) * os.h + y * scale + i) * os.w + x * scale + j;
                fn(src, dst);
              }
          }
  };
  auto xin = input->data();
  auto y = out->data();
  for_each_pair([&](std::size_t src, std::size_t dst) { y[dst] = xin[src]; });
  if (grad) {
    tape->record("pixel_shuffle", [input, out, for_each_pair]() {
      if (!out->has_grad()) return;
      auto gy = out->grad();
      auto gx = input->ensure_grad();
      for_each_pair([&](std::size_t src, std::size_t dst) { gx[src] += gy[dst]; });
    });
  }
  return out;
}

TensorPtr sum(Tape* tape, const TensorPtr& input) {
  const bool grad = needs_grad(tape, {&input});
  auto out = result_like({1, 1, 1, 1}, grad);
  double acc = 0.0;
  for (float v : input->data()) acc += v;
  out->data()[0] = static_cast<float>(acc);
  if (grad) {
    tape->record("sum", [input, out]() {
      if (!out->has_grad()) return;
      const float g = out->grad()[0];
      for (float& v : input->ensure_grad()) v += g;
    });
  }
  return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& input, float alpha) {
  const bool grad = needs_grad(tape, {&input});
  auto out = result_like(input->shape(), grad);
  auto x = input->data();
  auto y = out->data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = alpha * x[i];
  if (grad) {
    tape->record("scale", [input, out, alpha]() {
      if (!out->has_grad()) return;
      auto gy = out->grad();
      auto gx = input->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += alpha * gy[i];
    });
  }
  return out;
}

TensorPtr weighted_sum(Tape* tape, std::span<const TensorPtr> terms, std::span<const float> weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "weighted_sum needs matching, nonempty terms and weights");
  }
  bool grad = false;
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->numel() != 1) throw Error(ErrorKind::kShape, "weighted_sum terms must be scalars");
    grad = grad || needs_grad(tape, {&terms[i]});
    acc += static_cast<double>(weights[i]) * terms[i]->item();
  }
  auto out = result_like({1, 1, 1, 1}, grad);
  out->data()[0] = static_cast<float>(acc);
  if (grad) {
    std::vector<TensorPtr> kept(terms.begin(), terms.end());
    std::vector<float> w(weights.begin(), weights.end());
    tape->record("weighted_sum", [kept, w, out]() {
      if (!out->has_grad()) return;
      const float g = out->grad()[0];
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i]->requires_grad()) kept[i]->ensure_grad()[0] += w[i] * g;
      }
    });
  }
  return out;
}

TensorPtr l1_mean(Tape* tape, const TensorPtr& prediction, const TensorPtr& target) {
  if (prediction->shape() != target->shape()) {
    throw Error(ErrorKind::kShape, "l1_mean of " + prediction->shape().str() + " and " +
                                       target->shape().str());
  }
  const bool grad = needs_grad(tape, {&prediction});
  auto out = result_like({1, 1, 1, 1}, grad);
  auto p = prediction->data();
  auto t = target->data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(static_cast<double>(p[i]) - t[i]);
  const double count = static_cast<double>(std::max<std::size_t>(p.size(), 1));
  out->data()[0] = static_cast<float>(acc / count);
  if (grad) {
    tape->record("l1_mean", [prediction, target, out, count]() {
      if (!out->has_grad()) return;
      const float g = static_cast<float>(out->grad()[0] / count);
      auto p = prediction->data();
      auto t = target->data();
      auto gp = prediction->ensure_grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > t[i]) gp[i] += g;
        else if (p[i] < t[i]) gp[i] -= g;
      }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace adabit
