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

#ifndef ADABIT_TENSOR_HPP_
#define ADABIT_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adabit {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW float tensor with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor({1, 1, 1, 1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& at(int n, int c, int h, int w) noexcept {
    return data_[index(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  std::size_t index(int n, int c, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  /// First element; the tensor is expected to hold a single value.
  float item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<float> grad() noexcept { return grad_; }
  std::span<const float> grad() const noexcept { return grad_; }
  /// Allocates a zero gradient if none exists and returns it.
  std::span<float> ensure_grad();
  void zero_grad() noexcept;
  void drop_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

  /// Copy of sample `index` along the batch axis.
  Tensor slice_batch(int index) const;

 private:
  Shape shape_{};
  std::vector<float> data_;
  std::vector<float> grad_;
  bool requires_grad_ = false;
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, float fill = 0.0f) {
  return std::make_shared<Tensor>(shape, fill);
}
inline TensorPtr make_tensor(Tensor t) { return std::make_shared<Tensor>(std::move(t)); }
/// Learnable scalar leaf.
TensorPtr make_parameter(float value);

/// Stacks equally shaped single-sample tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> samples);

/// Ordered record of primitive operations for reverse-mode differentiation.
/// A tape belongs to one thread for the duration of a step.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string name, BackwardFn fn);
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  void clear() noexcept { entries_.clear(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }

  /// Seeds d(loss)/d(loss) = 1 and replays every entry in reverse order.
  /// `on_visit` observes (entry index, op name) as each entry runs.
  void backward(const TensorPtr& loss,
                const std::function<void(std::size_t, std::string_view)>& on_visit = {});

 private:
  struct Entry {
    std::string name;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Free-function form of `Tape::backward`.
void backward(const TensorPtr& loss, Tape& tape);

/// True when `tape` is recording and any input wants a gradient.
bool needs_grad(const Tape* tape, std::initializer_list<const TensorPtr*> inputs);

namespace ops {

/// 2-D cross-correlation with zero padding. `bias` may be null.
TensorPtr conv2d(Tape* tape, const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, int stride, int padding);
TensorPtr relu(Tape* tape, const TensorPtr& input);
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
/// (N, C*r*r, H, W) -> (N, C, H*r, W*r), sub-pixel layout.
TensorPtr pixel_shuffle(Tape* tape, const TensorPtr& input, int scale);
/// Sum of all elements as a 1x1x1x1 tensor.
TensorPtr sum(Tape* tape, const TensorPtr& input);
TensorPtr scale(Tape* tape, const TensorPtr& input, float alpha);
/// Weighted sum of scalar tensors: sum_i weights[i] * terms[i].
TensorPtr weighted_sum(Tape* tape, std::span<const TensorPtr> terms, std::span<const float> weights);
/// Mean absolute difference over all elements (pretraining objective).
TensorPtr l1_mean(Tape* tape, const TensorPtr& prediction, const TensorPtr& target);

}  // namespace ops

bool all_finite(std::span<const float> values) noexcept;

}  // namespace adabit

#endif  // ADABIT_TENSOR_HPP_
