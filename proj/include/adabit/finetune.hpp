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

#ifndef ADABIT_FINETUNE_HPP_
#define ADABIT_FINETUNE_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adabit/bitmapping.hpp"
#include "adabit/datapipe.hpp"
#include "adabit/srnet.hpp"
#include "adabit/tensor.hpp"

namespace adabit {

/// Adam over groups of tensors, each with its own learning rate.
class Adam {
 public:
  struct Group {
    std::vector<TensorPtr> params;
    float lr = 1e-3f;
  };

  Adam(float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

  /// Returns the group index.
  std::size_t add_group(std::vector<TensorPtr> params, float lr);
  Group& group(std::size_t i) { return groups_.at(i); }
  const Group& group(std::size_t i) const { return groups_.at(i); }
  std::size_t group_count() const noexcept { return groups_.size(); }

  /// Updates every parameter of group `i` that holds a gradient.
  void step(std::size_t i);
  void step_all();
  void zero_grad();
  void scale_lr(float factor);
  std::uint64_t steps(std::size_t i) const { return state_.at(i).step; }

 private:
  struct Moments {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t step = 0;
  };
  float beta1_;
  float beta2_;
  float eps_;
  std::vector<Group> groups_;
  std::vector<Moments> state_;
};

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 2;
  float lr_act = 0.01f;
  float lr_wgt = 0.01f;
  float lr_bitfactor = 0.01f;
  float lr_i2b = 0.1f;
  float lr_decay = 0.9f;
  float lambda_skt = 10.0f;
  float lambda_bit = 50.0f;
  /// Target mean bit-width; 0 means b_base.
  int b_tar = 0;
  std::uint64_t seed = 0;
  /// Sub-step 1 (bit mapping update). Off for the fixed-bit baselines.
  bool update_mapping = true;
  /// Let the reconstruction loss reach the bit carriers.
  bool bit_recon_grad = true;
  /// Let the bit loss reach the image thresholds through the image factors.
  bool bit_loss_image_grad = true;

  void validate() const;
};

/// (1/N) sum_i ||P_i - Q_i||_1 with element sums.
TensorPtr loss_pix(Tape* tape, const TensorPtr& out_q, const TensorPtr& out_fp);
/// (1/(N K)) sum_{i,k} || F_fp / ||F_fp|| - F_q / ||F_q|| ||_2 per image.
TensorPtr loss_skt(Tape* tape, std::span<const TensorPtr> feats_q, std::span<const TensorPtr> feats_fp);
/// max(mean(bits) - b_tar, 0) over all (image, adaptive layer) carriers.
TensorPtr loss_bit(Tape* tape, std::span<const TensorPtr> bits, int b_tar);
double loss_bit(const std::vector<std::vector<int>>& bit_log, int b_tar);

enum class SubStep { kMapping = 1, kWeightRange = 2, kActRange = 3 };

struct SubStepReport {
  SubStep sub_step = SubStep::kMapping;
  double l_pix = 0.0;
  double l_skt = 0.0;
  double l_bit = 0.0;
  double fab = 0.0;
};

struct StepReport {
  std::vector<SubStepReport> sub_steps;
  double fab = 0.0;
};

/// Optimizer state for the quantization parameters of one student network.
class Finetuner {
 public:
  Finetuner(const SrNetwork& teacher, SrNetwork& student, const FinetuneConfig& config);

  /// Three sub-steps on one batch: bit mapping (with the bit loss), weight
  /// bounds, activation ranges. Each re-runs its forward pass; everything
  /// outside the active group is frozen.
  StepReport step(const Tensor& batch, std::span<const ComplexityScore> complexities);

  /// Multiplies every learning rate by lr_decay.
  void end_epoch();
  float lr(SubStep which) const;
  Adam& optimizer() noexcept { return adam_; }

 private:
  SubStepReport run_sub_step(SubStep which, const TensorPtr& x, std::span<const ComplexityScore> cs,
                             const ForwardResult& teacher);
  void set_trainable(SubStep which);

  const SrNetwork& teacher_;
  SrNetwork& student_;
  FinetuneConfig config_;
  Adam adam_;
  std::size_t mapping_group_ = 0;
  std::size_t i2b_group_ = 0;
  std::size_t wgt_group_ = 0;
  std::size_t act_group_ = 0;
};

struct LogRecord {
  int epoch = 0;
  int iter = 0;
  int sub_step = 0;
  double l_pix = 0.0;
  double l_skt = 0.0;
  double l_bit = 0.0;
  double fab = 0.0;
  double lr = 0.0;

  /// One-line JSON object.
  std::string json() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_l_pix = 0.0;
  double fab = 0.0;
  double probe_psnr = 0.0;
};

struct FinetuneLog {
  std::vector<LogRecord> steps;
  std::vector<EpochRecord> epochs;
  int iterations = 0;
};

struct ProbeSet {
  std::vector<Tensor> lr;
  std::vector<Tensor> hr;
};

/// Fine-tuning phase over the calibration set. The per-epoch probe PSNR is
/// measured on `probe` when it is nonempty.
FinetuneLog run_finetune(const CalibSet& calib, const SrNetwork& teacher, SrNetwork& student,
                         const FinetuneConfig& config, const ProbeSet& probe = {},
                         const std::function<void(const LogRecord&)>& on_record = {});

}  // namespace adabit

#endif  // ADABIT_FINETUNE_HPP_
