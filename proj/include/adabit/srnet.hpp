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

#ifndef ADABIT_SRNET_HPP_
#define ADABIT_SRNET_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adabit/bitmapping.hpp"
#include "adabit/tensor.hpp"

namespace adabit {

enum class QuantScope { kBodyOnly, kFull };

std::string_view scope_name(QuantScope scope);
QuantScope parse_scope(std::string_view name);

struct SrNetConfig {
  int num_blocks = 4;
  int channels = 16;
  int scale = 2;
  QuantScope scope = QuantScope::kBodyOnly;
  int b_base = 4;

  void validate() const;
  bool operator==(const SrNetConfig&) const = default;
};

/// Bit-width used for the statically quantized head and tail in full scope.
inline constexpr int kEdgeLayerBits = 8;

struct ConvLayer {
  std::string name;
  TensorPtr weight;  // (Cout, Cin, 3, 3)
  TensorPtr bias;    // (1, Cout, 1, 1)
};

/// Quantizer state of one quantized convolution.
struct LayerQuant {
  TensorPtr lower;  // activation lower bound
  TensorPtr upper;  // activation upper bound
  TensorPtr bound;  // symmetric weight bound
  int base_bits = 4;
  /// Adaptive layers take part in image/layer bit adaptation; head and tail
  /// in full scope are fixed at kEdgeLayerBits.
  bool adaptive = true;

  LayerQuant clone() const;
};

enum class ForwardMode { kFloat, kQuantized };

struct ForwardOptions {
  /// Route reconstruction gradients into the bit carriers.
  bool bit_grad = true;
};

struct ForwardResult {
  TensorPtr output;
  /// Output of every quantized convolution (post-activation where one follows).
  std::vector<TensorPtr> taps;
  /// Floating input seen by every quantized convolution, before its quantizer.
  std::vector<TensorPtr> layer_inputs;
};

/// Scale applied to the He-initialized output conv weights.
inline constexpr float kOutputInitScale = 0.1f;

/// EDSR-style toy network: head conv, residual blocks (conv-relu-conv + skip)
/// with a global skip, then conv -> pixel shuffle -> output conv, added to a
/// nearest-neighbour upscale of the input.
class SrNetwork {
 public:
  SrNetwork(const SrNetConfig& config, std::uint64_t seed);

  const SrNetConfig& config() const noexcept { return config_; }

  std::vector<ConvLayer>& convs() noexcept { return convs_; }
  const std::vector<ConvLayer>& convs() const noexcept { return convs_; }

  /// Number of quantized layers K for the configured scope.
  int num_quantized() const noexcept { return static_cast<int>(quantized_.size()); }
  /// Conv index of quantized layer k.
  int conv_index(int k) const { return quantized_.at(static_cast<std::size_t>(k)); }
  /// Quantized-layer indices of the adaptive layers, in order.
  const std::vector<int>& adaptive_layers() const noexcept { return adaptive_; }

  bool has_quant() const noexcept { return !quant_.empty(); }
  std::vector<LayerQuant>& quant() noexcept { return quant_; }
  const std::vector<LayerQuant>& quant() const noexcept { return quant_; }
  BitMapper& mapper() noexcept { return mapper_; }
  const BitMapper& mapper() const noexcept { return mapper_; }
  /// Installs quantizer state with default ranges; sizes follow the scope.
  void reset_quant();
  void clear_quant() { quant_.clear(); }

  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool frozen) noexcept { frozen_ = frozen; }

  /// Deep copy (weights, quantizer state and mapper).
  SrNetwork clone() const;

  /// Every weight and bias tensor, layer-ordered.
  std::vector<TensorPtr> parameters() const;
  /// Weight and bias bytes, layer-ordered, for integrity checks.
  std::vector<std::uint8_t> weight_bytes() const;

  /// Floating-point or fake-quantized forward.
  /// Quantized mode needs `layer_bits` with one (N,1,1,1) carrier per
  /// quantized layer (see `bit_carriers`).
  ForwardResult forward(Tape* tape, const TensorPtr& x, ForwardMode mode,
                        std::span<const TensorPtr> layer_bits = {},
                        ForwardOptions options = {}) const;

  /// Quantized forward driven by a per-image bit decision. A null decision
  /// in quantized mode is an error.
  ForwardResult forward(const Tensor& x, ForwardMode mode, const BitDecision* decision) const;

  /// Constant (no-grad) bit carriers for a decision over N images; the rows
  /// of `decision.bits` index adaptive layers.
  std::vector<TensorPtr> bit_carriers(const BitDecision& decision) const;

 private:
  SrNetConfig config_;
  std::vector<ConvLayer> convs_;
  std::vector<int> quantized_;
  std::vector<int> adaptive_;
  std::vector<LayerQuant> quant_;
  BitMapper mapper_;
  bool frozen_ = false;
};

/// Bit decision for N images when every adaptive layer uses b_base.
BitDecision static_decision(const SrNetwork& net, int images);

/// Adaptive bit decision for a batch using the network's mapper.
BitDecision decide_bits(const SrNetwork& net, const Tensor& batch);

/// Quantized forward with per-image adaptive bits; returns output and the
/// decision used.
std::pair<ForwardResult, BitDecision> adaptive_forward(const SrNetwork& net, const Tensor& batch);

struct PretrainConfig {
  int steps = 2000;
  int batch = 8;
  int hr_patch = 48;
  float lr = 1e-3f;
};

struct PretrainReport {
  std::vector<float> losses;
};

/// Minimizes L1(net(LR), HR) on procedurally generated pairs with Adam and
/// freezes the network. Deterministic for a given seed.
PretrainReport pretrain_fp(SrNetwork& net, const PretrainConfig& config, std::uint64_t seed);

/// Binary checkpoint; see README for the layout.
void save_checkpoint(const SrNetwork& net, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const SrNetwork& net);
/// Loads a checkpoint. When `expected` is given, its architecture and scope
/// must match the stored config.
SrNetwork load_checkpoint(const std::filesystem::path& path, const SrNetConfig* expected = nullptr);
SrNetwork deserialize_checkpoint(std::span<const std::uint8_t> bytes, const SrNetConfig* expected = nullptr);

}  // namespace adabit

#endif  // ADABIT_SRNET_HPP_
