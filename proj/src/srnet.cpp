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

#include "adabit/srnet.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adabit/datapipe.hpp"
#include "adabit/error.hpp"
#include "adabit/finetune.hpp"
#include "adabit/metrics.hpp"
#include "adabit/quantizer.hpp"

namespace adabit {

std::string_view scope_name(QuantScope scope) {
  return scope == QuantScope::kBodyOnly ? "body_only" : "full";
}

QuantScope parse_scope(std::string_view name) {
  if (name == "body_only") return QuantScope::kBodyOnly;
  if (name == "full") return QuantScope::kFull;
  throw Error(ErrorKind::kInvalidArgument, "unknown quantize scope '" + std::string(name) + "'");
}

void SrNetConfig::validate() const {
  if (num_blocks < 1) throw Error(ErrorKind::kInvalidArgument, "num_blocks must be >= 1");
  if (channels < 1) throw Error(ErrorKind::kInvalidArgument, "channels must be >= 1");
  if (scale != 2 && scale != 4) throw Error(ErrorKind::kInvalidArgument, "scale must be 2 or 4");
  if (b_base < kBitMin || b_base > kBitMax) {
    throw Error(ErrorKind::kInvalidArgument, "b_base must lie in [2, 8]");
  }
}

LayerQuant LayerQuant::clone() const {
  LayerQuant out;
  out.lower = make_parameter(lower->item());
  out.upper = make_parameter(upper->item());
  out.bound = make_parameter(bound->item());
  out.base_bits = base_bits;
  out.adaptive = adaptive;
  return out;
}

namespace {

ConvLayer make_conv(std::string name, int cin, int cout, std::mt19937_64& rng) {
  ConvLayer layer;
  layer.name = std::move(name);
  layer.weight = make_tensor({cout, cin, 3, 3});
  layer.bias = make_tensor({1, cout, 1, 1});
  const double stddev = std::sqrt(2.0 / (cin * 9.0));
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : layer.weight->data()) v = static_cast<float>(dist(rng));
  return layer;
}

}  // namespace

SrNetwork::SrNetwork(const SrNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int c = config_.channels;
  const int r = config_.scale;
  convs_.push_back(make_conv("head", 3, c, rng));
  for (int b = 0; b < config_.num_blocks; ++b) {
    convs_.push_back(make_conv("body" + std::to_string(b) + ".conv1", c, c, rng));
    convs_.push_back(make_conv("body" + std::to_string(b) + ".conv2", c, c, rng));
  }
  convs_.push_back(make_conv("tail.upsample", c, c * r * r, rng));
  convs_.push_back(make_conv("tail.out", c, 3, rng));
  // The output conv starts small so the untrained network is close to the
  // nearest-neighbour skip path.
  for (float& v : convs_.back().weight->data()) v *= kOutputInitScale;

  const int last = static_cast<int>(convs_.size()) - 1;
  for (int i = 0; i <= last; ++i) {
    const bool body = i >= 1 && i <= 2 * config_.num_blocks;
    if (body || config_.scope == QuantScope::kFull) {
      if (body) adaptive_.push_back(static_cast<int>(quantized_.size()));
      quantized_.push_back(i);
    }
  }
}

void SrNetwork::reset_quant() {
  quant_.clear();
  for (int k = 0; k < num_quantized(); ++k) {
    const bool adaptive = std::find(adaptive_.begin(), adaptive_.end(), k) != adaptive_.end();
    LayerQuant q;
    q.lower = make_parameter(0.0f);
    q.upper = make_parameter(1.0f);
    q.bound = make_parameter(1.0f);
    q.adaptive = adaptive;
    q.base_bits = adaptive ? config_.b_base : kEdgeLayerBits;
    quant_.push_back(q);
  }
  mapper_ = BitMapper{};
  for (std::size_t k = 0; k < adaptive_.size(); ++k) mapper_.l2b.factors.push_back(make_parameter(0.0f));
}

SrNetwork SrNetwork::clone() const {
  SrNetwork out = *this;
  for (auto& layer : out.convs_) {
    layer.weight = make_tensor(Tensor(layer.weight->shape(), layer.weight->values()));
    layer.bias = make_tensor(Tensor(layer.bias->shape(), layer.bias->values()));
  }
  for (auto& q : out.quant_) q = q.clone();
  out.mapper_ = mapper_.clone();
  return out;
}

std::vector<TensorPtr> SrNetwork::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& layer : convs_) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

std::vector<std::uint8_t> SrNetwork::weight_bytes() const {
  std::vector<std::uint8_t> out;
  for (const auto& p : parameters()) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(p->data().data());
    out.insert(out.end(), b, b + p->numel() * sizeof(float));
  }
  return out;
}

ForwardResult SrNetwork::forward(Tape* tape, const TensorPtr& x, ForwardMode mode,
                                 std::span<const TensorPtr> layer_bits, ForwardOptions options) const {
  const bool quantized = mode == ForwardMode::kQuantized;
  if (quantized) {
    if (quant_.empty()) throw Error(ErrorKind::kState, "quantized forward on a network without quantizer state");
    if (layer_bits.size() != quantized_.size()) {
      throw Error(ErrorKind::kInvalidArgument, "quantized forward needs " + std::to_string(quantized_.size()) +
                                                   " bit carriers, got " + std::to_string(layer_bits.size()));
    }
  }
  if (x->shape().c != 3) throw Error(ErrorKind::kShape, "network input must have 3 channels, got " + x->shape().str());

  ForwardResult result;
  // Maps conv index -> quantized index, -1 when not quantized.
  auto quant_index = [this](int conv) {
    auto it = std::find(quantized_.begin(), quantized_.end(), conv);
    return it == quantized_.end() ? -1 : static_cast<int>(it - quantized_.begin());
  };
  auto apply = [&](int conv, const TensorPtr& in, bool relu_after) {
    const ConvLayer& layer = convs_[static_cast<std::size_t>(conv)];
    const int k = quant_index(conv);
    TensorPtr input = in;
    TensorPtr weight = layer.weight;
    if (k >= 0) result.layer_inputs.push_back(in);
    if (k >= 0 && quantized) {
      const LayerQuant& q = quant_[static_cast<std::size_t>(k)];
      input = quantize_act(tape, in, q.lower, q.upper, layer_bits[static_cast<std::size_t>(k)], options.bit_grad);
      weight = quantize_wgt(tape, layer.weight, q.bound, q.base_bits);
    }
    TensorPtr y = ops::conv2d(tape, input, weight, layer.bias, 1, 1);
    if (relu_after) y = ops::relu(tape, y);
    if (k >= 0) result.taps.push_back(y);
    return y;
  };

  TensorPtr h = apply(0, x, false);
  const TensorPtr skip = h;
  for (int b = 0; b < config_.num_blocks; ++b) {
    TensorPtr r = apply(1 + 2 * b, h, true);
    r = apply(2 + 2 * b, r, false);
    h = ops::add(tape, h, r);
  }
  h = ops::add(tape, h, skip);
  const int up = 1 + 2 * config_.num_blocks;
  TensorPtr t = apply(up, h, false);
  t = ops::pixel_shuffle(tape, t, config_.scale);
  TensorPtr conv_out = apply(up + 1, t, false);
  result.output = ops::add(tape, conv_out, make_tensor(nearest_upsample(*x, config_.scale)));
  return result;
}

std::vector<TensorPtr> SrNetwork::bit_carriers(const BitDecision& decision) const {
  const int n = static_cast<int>(decision.bits.size());
  std::vector<TensorPtr> out;
  std::size_t a = 0;
  for (std::size_t k = 0; k < quantized_.size(); ++k) {
    auto t = make_tensor({n, 1, 1, 1});
    const bool adaptive = a < adaptive_.size() && adaptive_[a] == static_cast<int>(k);
    for (int j = 0; j < n; ++j) {
      const auto& row = decision.bits[static_cast<std::size_t>(j)];
      if (adaptive && row.size() != adaptive_.size()) {
        throw Error(ErrorKind::kShape, "bit decision row has " + std::to_string(row.size()) +
                                           " layers, network has " + std::to_string(adaptive_.size()));
      }
      t->data()[static_cast<std::size_t>(j)] = static_cast<float>(adaptive ? row[a] : kEdgeLayerBits);
    }
    if (adaptive) ++a;
    out.push_back(t);
  }
  return out;
}

ForwardResult SrNetwork::forward(const Tensor& x, ForwardMode mode, const BitDecision* decision) const {
  auto input = make_tensor(x);
  if (mode == ForwardMode::kFloat) return forward(nullptr, input, mode);
  if (decision == nullptr) throw Error(ErrorKind::kInvalidArgument, "quantized forward needs a bit decision");
  if (decision->bits.size() != static_cast<std::size_t>(x.shape().n)) {
    throw Error(ErrorKind::kShape, "bit decision covers " + std::to_string(decision->bits.size()) +
                                       " images, batch has " + std::to_string(x.shape().n));
  }
  const auto carriers = bit_carriers(*decision);
  return forward(nullptr, input, mode, carriers);
}

BitDecision static_decision(const SrNetwork& net, int images) {
  BitDecision d;
  d.image_factors.assign(static_cast<std::size_t>(images), 0);
  d.bits.assign(static_cast<std::size_t>(images),
                std::vector<int>(net.adaptive_layers().size(), net.config().b_base));
  return d;
}

BitDecision decide_bits(const SrNetwork& net, const Tensor& batch) {
  std::vector<ComplexityScore> cs;
  for (int j = 0; j < batch.shape().n; ++j) cs.push_back(complexity(batch.slice_batch(j)));
  return compose_bits(net.config().b_base, cs, net.mapper());
}

std::pair<ForwardResult, BitDecision> adaptive_forward(const SrNetwork& net, const Tensor& batch) {
  BitDecision d = decide_bits(net, batch);
  ForwardResult r = net.forward(batch, ForwardMode::kQuantized, &d);
  return {std::move(r), std::move(d)};
}

PretrainReport pretrain_fp(SrNetwork& net, const PretrainConfig& config, std::uint64_t seed) {
  if (config.hr_patch % net.config().scale != 0) {
    throw Error(ErrorKind::kInvalidArgument, "hr_patch must be a multiple of the scale");
  }
  PretrainReport report;
  const auto params = net.parameters();
  for (const auto& p : params) p->set_requires_grad(true);
  Adam adam;
  adam.add_group(params, config.lr);
  std::mt19937_64 rng(seed);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Tensor> hr;
    std::vector<Tensor> lr;
    for (int i = 0; i < config.batch; ++i) {
      hr.push_back(synth_image(config.hr_patch, config.hr_patch, SynthKind::kMixture, rng));
      lr.push_back(box_downsample(hr.back(), net.config().scale));
    }
    auto x = make_tensor(stack_batch(lr));
    auto target = make_tensor(stack_batch(hr));
    Tape tape;
    auto out = net.forward(&tape, x, ForwardMode::kFloat).output;
    auto loss = ops::l1_mean(&tape, out, target);
    if (!std::isfinite(loss->item())) {
      throw Error(ErrorKind::kNonFinite, "pretraining loss diverged at step " + std::to_string(step));
    }
    adam.zero_grad();
    tape.backward(loss);
    adam.step_all();
    report.losses.push_back(loss->item());
  }
  for (const auto& p : params) {
    p->set_requires_grad(false);
    p->drop_grad();
  }
  net.set_frozen(true);
  return report;
}

// Checkpoint layout (little-endian):
//   "ADBM" | u16 version | config | flags u8 | weights | quant | mapper | u32 crc32
namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  void floats(std::span<const float> v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (float f : v) f32(f);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8(const char* field) {
    need(1, field);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* field) {
    need(2, field);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* field) {
    const std::uint32_t bits = u32(field);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void floats_into(Tensor& t, const char* field) {
    const std::uint32_t n = u32(field);
    if (n != t.numel()) {
      throw FormatError(field, "expected " + std::to_string(t.numel()) + " values, found " + std::to_string(n));
    }
    for (float& v : t.data()) v = f32(field);
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (pos_ + n > bytes_.size()) throw FormatError(field, "checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const SrNetwork& net) {
  Writer w;
  for (char c : std::string_view("ADBM")) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  const SrNetConfig& cfg = net.config();
  w.u32(static_cast<std::uint32_t>(cfg.num_blocks));
  w.u32(static_cast<std::uint32_t>(cfg.channels));
  w.u32(static_cast<std::uint32_t>(cfg.scale));
  w.u8(cfg.scope == QuantScope::kBodyOnly ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(cfg.b_base));
  w.u8(net.frozen() ? 1 : 0);

  w.u32(static_cast<std::uint32_t>(net.convs().size()));
  for (const auto& layer : net.convs()) {
    w.floats(layer.weight->data());
    w.floats(layer.bias->data());
  }

  w.u8(net.has_quant() ? 1 : 0);
  if (net.has_quant()) {
    w.u32(static_cast<std::uint32_t>(net.quant().size()));
    for (const auto& q : net.quant()) {
      w.f32(q.lower->item());
      w.f32(q.upper->item());
      w.f32(q.bound->item());
      w.u8(static_cast<std::uint8_t>(q.base_bits));
      w.u8(q.adaptive ? 1 : 0);
    }
    const BitMapper& m = net.mapper();
    w.f32(m.i2b.lower->item());
    w.f32(m.i2b.upper->item());
    w.u8(static_cast<std::uint8_t>(m.i2b.magnitude));
    w.f32(m.l2b.lower);
    w.f32(m.l2b.upper);
    w.u8(static_cast<std::uint8_t>(m.l2b.magnitude));
    w.u32(static_cast<std::uint32_t>(m.l2b.factors.size()));
    for (const auto& f : m.l2b.factors) w.f32(f->item());
  }
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

void save_checkpoint(const SrNetwork& net, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

SrNetwork deserialize_checkpoint(std::span<const std::uint8_t> bytes, const SrNetConfig* expected) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8("magic"));
  if (std::string_view(magic, 4) != "ADBM") throw FormatError("magic", "not an ADBM checkpoint");
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError("version", "unsupported version " + std::to_string(version));
  }
  if (bytes.size() < 4) throw FormatError("crc32", "checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);

  SrNetConfig cfg;
  cfg.num_blocks = static_cast<int>(r.u32("config.num_blocks"));
  cfg.channels = static_cast<int>(r.u32("config.channels"));
  cfg.scale = static_cast<int>(r.u32("config.scale"));
  const std::uint8_t scope = r.u8("config.scope");
  if (scope > 1) throw FormatError("config.scope", "unknown scope code " + std::to_string(scope));
  cfg.scope = scope == 0 ? QuantScope::kBodyOnly : QuantScope::kFull;
  cfg.b_base = static_cast<int>(r.u32("config.b_base"));
  const bool frozen = r.u8("config.flags") & 1;
  if (crc32_of(bytes.first(body)) != stored) throw FormatError("crc32", "checksum mismatch");
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw FormatError("config", e.message());
  }
  if (expected != nullptr) {
    if (expected->scope != cfg.scope) {
      throw FormatError("config.scope", "scope mismatch: checkpoint is " + std::string(scope_name(cfg.scope)) +
                                            ", config expects " + std::string(scope_name(expected->scope)));
    }
    if (expected->num_blocks != cfg.num_blocks || expected->channels != cfg.channels ||
        expected->scale != cfg.scale) {
      throw FormatError("config", "architecture mismatch between checkpoint and config");
    }
  }

  SrNetwork net(cfg, 0);
  net.set_frozen(frozen);
  const std::uint32_t convs = r.u32("weights.count");
  if (convs != net.convs().size()) throw FormatError("weights.count", "layer count mismatch");
  for (auto& layer : net.convs()) {
    r.floats_into(*layer.weight, "weights");
    r.floats_into(*layer.bias, "weights");
  }
  if (r.u8("quant.present") != 0) {
    net.reset_quant();
    const std::uint32_t k = r.u32("quant.count");
    if (k != net.quant().size()) throw FormatError("quant.count", "quantized layer count mismatch");
    for (auto& q : net.quant()) {
      q.lower->data()[0] = r.f32("quant.layer");
      q.upper->data()[0] = r.f32("quant.layer");
      q.bound->data()[0] = r.f32("quant.layer");
      q.base_bits = r.u8("quant.layer");
      q.adaptive = r.u8("quant.layer") != 0;
    }
    BitMapper& m = net.mapper();
    m.i2b.lower->data()[0] = r.f32("mapper.i2b");
    m.i2b.upper->data()[0] = r.f32("mapper.i2b");
    m.i2b.magnitude = r.u8("mapper.i2b");
    m.l2b.lower = r.f32("mapper.l2b");
    m.l2b.upper = r.f32("mapper.l2b");
    m.l2b.magnitude = r.u8("mapper.l2b");
    const std::uint32_t nf = r.u32("mapper.l2b.count");
    if (nf != m.l2b.factors.size()) throw FormatError("mapper.l2b.count", "layer factor count mismatch");
    for (auto& f : m.l2b.factors) f->data()[0] = r.f32("mapper.l2b.factors");
  }
  if (r.pos() != body) throw FormatError("crc32", "unexpected trailing bytes");
  return net;
}

SrNetwork load_checkpoint(const std::filesystem::path& path, const SrNetConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace adabit
