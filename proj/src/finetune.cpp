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

#include "adabit/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "adabit/error.hpp"
#include "adabit/metrics.hpp"
#include "adabit/quantizer.hpp"

namespace adabit {

Adam::Adam(float beta1, float beta2, float eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

std::size_t Adam::add_group(std::vector<TensorPtr> params, float lr) {
  Moments moments;
  for (const auto& p : params) {
    moments.m.emplace_back(p->numel(), 0.0f);
    moments.v.emplace_back(p->numel(), 0.0f);
  }
  groups_.push_back({std::move(params), lr});
  state_.push_back(std::move(moments));
  return groups_.size() - 1;
}

void Adam::step(std::size_t i) {
  Group& g = groups_.at(i);
  Moments& s = state_.at(i);
  ++s.step;
  const double c1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(s.step));
  for (std::size_t p = 0; p < g.params.size(); ++p) {
    Tensor& t = *g.params[p];
    if (!t.has_grad()) continue;
    auto data = t.data();
    auto grad = t.grad();
    auto& m = s.m[p];
    auto& v = s.v[p];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * grad[j] * grad[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      data[j] -= static_cast<float>(g.lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

void Adam::step_all() {
  for (std::size_t i = 0; i < groups_.size(); ++i) step(i);
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p->zero_grad();
}

void Adam::scale_lr(float factor) {
  for (auto& g : groups_) g.lr *= factor;
}

void FinetuneConfig::validate() const {
  std::vector<std::string> problems;
  if (epochs < 0) problems.push_back("epochs must be >= 0");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  const std::pair<const char*, float> rates[] = {
      {"lr_act", lr_act}, {"lr_wgt", lr_wgt}, {"lr_bitfactor", lr_bitfactor}, {"lr_i2b", lr_i2b}};
  for (const auto& [name, v] : rates) {
    if (!(v >= 0.0f) || !std::isfinite(v)) problems.push_back(std::string(name) + " must be a finite value >= 0");
  }
  if (!(lr_decay > 0.0f && lr_decay <= 1.0f)) problems.push_back("lr_decay must lie in (0, 1]");
  if (!(lambda_skt >= 0.0f)) problems.push_back("lambda_skt must be >= 0");
  if (!(lambda_bit >= 0.0f)) problems.push_back("lambda_bit must be >= 0");
  if (b_tar != 0 && (b_tar < kBitMin || b_tar > kBitMax)) problems.push_back("b_tar must be 0 or lie in [2, 8]");
  if (!problems.empty()) throw ConfigError(problems);
}

TensorPtr loss_pix(Tape* tape, const TensorPtr& out_q, const TensorPtr& out_fp) {
  if (out_q->shape() != out_fp->shape()) {
    throw Error(ErrorKind::kShape, "loss_pix inputs differ: " + out_q->shape().str() + " vs " + out_fp->shape().str());
  }
  const int n = out_q->shape().n;
  if (n == 0) throw Error(ErrorKind::kEmptyInput, "loss_pix of an empty batch");
  double acc = 0.0;
  auto q = out_q->data();
  auto f = out_fp->data();
  for (std::size_t i = 0; i < q.size(); ++i) acc += std::fabs(static_cast<double>(q[i]) - f[i]);
  auto out = make_tensor(Tensor::scalar(static_cast<float>(acc / n)));
  const bool grad = needs_grad(tape, {&out_q, &out_fp});
  out->set_requires_grad(grad);
  if (grad) {
    tape->record("loss_pix", [out_q, out_fp, out, n]() {
      if (!out->has_grad()) return;
      const float g = out->grad()[0] / static_cast<float>(n);
      auto q = out_q->data();
      auto f = out_fp->data();
      auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
      if (out_q->requires_grad()) {
        auto gq = out_q->ensure_grad();
        for (std::size_t i = 0; i < q.size(); ++i) gq[i] += g * sign(q[i] - f[i]);
      }
      if (out_fp->requires_grad()) {
        auto gf = out_fp->ensure_grad();
        for (std::size_t i = 0; i < q.size(); ++i) gf[i] -= g * sign(q[i] - f[i]);
      }
    });
  }
  return out;
}

namespace {

constexpr double kNormFloor = 1e-8;

double norm_of(const float* p, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]) * p[i];
  return std::sqrt(acc);
}

// Gradient of || a/max(|a|,floor) - b/max(|b|,floor) || with respect to a.
void normalized_distance_grad(const float* a, const float* b, std::size_t n, double scale, float* out) {
  const double na = std::max(norm_of(a, n), kNormFloor);
  const double nb = std::max(norm_of(b, n), kNormFloor);
  std::vector<double> diff(n);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a[i] / na - b[i] / nb;
    d2 += diff[i] * diff[i];
  }
  const double d = std::sqrt(d2);
  if (d == 0.0) return;
  // u = a / na; d/da of u is (I - u u^T) / na when the norm is above the floor.
  double proj = 0.0;
  const bool floored = norm_of(a, n) < kNormFloor;
  if (!floored) {
    for (std::size_t i = 0; i < n; ++i) proj += (a[i] / na) * diff[i] / d;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double gu = diff[i] / d - (floored ? 0.0 : (a[i] / na) * proj);
    out[i] += static_cast<float>(scale * gu / na);
  }
}

}  // namespace

TensorPtr loss_skt(Tape* tape, std::span<const TensorPtr> feats_q, std::span<const TensorPtr> feats_fp) {
  if (feats_q.size() != feats_fp.size()) {
    throw Error(ErrorKind::kShape, "loss_skt needs equally many student and teacher features");
  }
  if (feats_q.empty()) throw Error(ErrorKind::kEmptyInput, "loss_skt needs at least one feature pair");
  const int n = feats_q[0]->shape().n;
  const std::size_t k = feats_q.size();
  double total = 0.0;
  bool grad = false;
  for (std::size_t layer = 0; layer < k; ++layer) {
    const Tensor& q = *feats_q[layer];
    const Tensor& f = *feats_fp[layer];
    if (q.shape() != f.shape() || q.shape().n != n) {
      throw Error(ErrorKind::kShape, "loss_skt feature " + std::to_string(layer) + " differs: " + q.shape().str() +
                                         " vs " + f.shape().str());
    }
    const std::size_t sample = q.shape().sample();
    for (int i = 0; i < n; ++i) {
      const float* a = q.data().data() + i * sample;
      const float* b = f.data().data() + i * sample;
      const double na = std::max(norm_of(a, sample), kNormFloor);
      const double nb = std::max(norm_of(b, sample), kNormFloor);
      double d2 = 0.0;
      for (std::size_t j = 0; j < sample; ++j) {
        const double d = a[j] / na - b[j] / nb;
        d2 += d * d;
      }
      total += std::sqrt(d2);
    }
    grad = grad || needs_grad(tape, {&feats_q[layer], &feats_fp[layer]});
  }
  const double denom = static_cast<double>(n) * static_cast<double>(k);
  auto out = make_tensor(Tensor::scalar(static_cast<float>(total / denom)));
  out->set_requires_grad(grad);
  if (grad) {
    std::vector<TensorPtr> qs(feats_q.begin(), feats_q.end());
    std::vector<TensorPtr> fs(feats_fp.begin(), feats_fp.end());
    tape->record("loss_skt", [qs, fs, out, n, denom]() {
      if (!out->has_grad()) return;
      const double scale = out->grad()[0] / denom;
      for (std::size_t layer = 0; layer < qs.size(); ++layer) {
        const std::size_t sample = qs[layer]->shape().sample();
        for (int i = 0; i < n; ++i) {
          const float* a = qs[layer]->data().data() + i * sample;
          const float* b = fs[layer]->data().data() + i * sample;
          if (qs[layer]->requires_grad()) {
            normalized_distance_grad(a, b, sample, scale, qs[layer]->ensure_grad().data() + i * sample);
          }
          if (fs[layer]->requires_grad()) {
            normalized_distance_grad(b, a, sample, scale, fs[layer]->ensure_grad().data() + i * sample);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr loss_bit(Tape* tape, std::span<const TensorPtr> bits, int b_tar) {
  double sum = 0.0;
  std::size_t count = 0;
  bool grad = false;
  for (const auto& b : bits) {
    for (float v : b->data()) sum += v;
    count += b->numel();
    grad = grad || needs_grad(tape, {&b});
  }
  if (count == 0) throw Error(ErrorKind::kEmptyInput, "loss_bit of an empty bit log");
  const double mean = sum / static_cast<double>(count);
  const bool active = mean > b_tar;
  auto out = make_tensor(Tensor::scalar(static_cast<float>(active ? mean - b_tar : 0.0)));
  out->set_requires_grad(grad);
  if (grad && active) {
    std::vector<TensorPtr> carriers(bits.begin(), bits.end());
    tape->record("loss_bit", [carriers, out, count]() {
      if (!out->has_grad()) return;
      const float g = out->grad()[0] / static_cast<float>(count);
      for (const auto& b : carriers) {
        if (!b->requires_grad()) continue;
        for (float& v : b->ensure_grad()) v += g;
      }
    });
  }
  return out;
}

double loss_bit(const std::vector<std::vector<int>>& bit_log, int b_tar) {
  return std::max(fab(bit_log) - b_tar, 0.0);
}

namespace {

const char* sub_step_name(SubStep s) {
  switch (s) {
    case SubStep::kMapping: return "bit mapping";
    case SubStep::kWeightRange: return "weight range";
    case SubStep::kActRange: return "activation range";
  }
  return "?";
}

/// Smallest activation range width and weight bound kept after an update.
constexpr float kMinRange = 1e-4f;

}  // namespace

Finetuner::Finetuner(const SrNetwork& teacher, SrNetwork& student, const FinetuneConfig& config)
    : teacher_(teacher), student_(student), config_(config) {
  config_.validate();
  if (!student_.has_quant()) throw Error(ErrorKind::kState, "fine-tuning needs an initialized student");
  if (config_.b_tar == 0) config_.b_tar = student_.config().b_base;
  for (const auto& p : student_.parameters()) p->set_requires_grad(false);
  for (const auto& p : teacher_.parameters()) p->set_requires_grad(false);

  BitMapper& mapper = student_.mapper();
  mapping_group_ = adam_.add_group(mapper.l2b.factors, config_.lr_bitfactor);
  // lr_i2b is a step in intensity levels; the thresholds are stored in
  // complexity units.
  i2b_group_ = adam_.add_group({mapper.i2b.lower, mapper.i2b.upper},
                               config_.lr_i2b / static_cast<float>(kComplexityLevels));
  std::vector<TensorPtr> bounds;
  std::vector<TensorPtr> ranges;
  for (const auto& q : student_.quant()) {
    bounds.push_back(q.bound);
    ranges.push_back(q.lower);
    ranges.push_back(q.upper);
  }
  wgt_group_ = adam_.add_group(bounds, config_.lr_wgt);
  act_group_ = adam_.add_group(ranges, config_.lr_act);
  for (std::size_t g = 0; g < adam_.group_count(); ++g)
    for (const auto& p : adam_.group(g).params) p->set_requires_grad(false);
}

float Finetuner::lr(SubStep which) const {
  switch (which) {
    case SubStep::kMapping: return adam_.group(mapping_group_).lr;
    case SubStep::kWeightRange: return adam_.group(wgt_group_).lr;
    case SubStep::kActRange: return adam_.group(act_group_).lr;
  }
  return 0.0f;
}

void Finetuner::set_trainable(SubStep which) {
  for (std::size_t g = 0; g < adam_.group_count(); ++g) {
    bool on = false;
    switch (which) {
      case SubStep::kMapping: on = g == mapping_group_ || g == i2b_group_; break;
      case SubStep::kWeightRange: on = g == wgt_group_; break;
      case SubStep::kActRange: on = g == act_group_; break;
    }
    for (const auto& p : adam_.group(g).params) {
      p->set_requires_grad(on);
      p->drop_grad();
    }
  }
}

SubStepReport Finetuner::run_sub_step(SubStep which, const TensorPtr& x, std::span<const ComplexityScore> cs,
                                      const ForwardResult& teacher) {
  set_trainable(which);
  Tape tape;
  const BitMapper& mapper = student_.mapper();
  const int b_base = student_.config().b_base;
  const int n = x->shape().n;

  auto factors = image_factors(&tape, mapper.i2b, cs);
  TensorPtr detached = make_tensor(Tensor(factors->shape(), factors->values()));
  std::vector<TensorPtr> carriers;
  std::vector<TensorPtr> bit_terms;
  std::size_t a = 0;
  for (const auto& q : student_.quant()) {
    if (q.adaptive) {
      const TensorPtr& lf = mapper.l2b.factors[a++];
      carriers.push_back(layer_bits(&tape, b_base, factors, lf, mapper.l2b.magnitude));
      bit_terms.push_back(config_.bit_loss_image_grad
                              ? carriers.back()
                              : layer_bits(&tape, b_base, detached, lf, mapper.l2b.magnitude));
    } else {
      carriers.push_back(make_tensor({n, 1, 1, 1}, static_cast<float>(q.base_bits)));
    }
  }

  const auto student = student_.forward(&tape, x, ForwardMode::kQuantized, carriers,
                                        ForwardOptions{config_.bit_recon_grad});
  const auto l_pix = loss_pix(&tape, student.output, teacher.output);
  const auto l_skt = loss_skt(&tape, student.taps, teacher.taps);
  const auto l_bit = loss_bit(&tape, bit_terms, config_.b_tar);

  std::vector<TensorPtr> terms{l_pix, l_skt};
  std::vector<float> weights{1.0f, config_.lambda_skt};
  if (which == SubStep::kMapping) {
    terms.push_back(l_bit);
    weights.push_back(config_.lambda_bit);
  }
  const auto total = ops::weighted_sum(&tape, terms, weights);

  SubStepReport report;
  report.sub_step = which;
  report.l_pix = l_pix->item();
  report.l_skt = l_skt->item();
  report.l_bit = l_bit->item();
  double bit_sum = 0.0;
  std::size_t bit_count = 0;
  for (const auto& b : bit_terms) {
    for (float v : b->data()) bit_sum += v;
    bit_count += b->numel();
  }
  report.fab = bit_count == 0 ? static_cast<double>(b_base) : bit_sum / static_cast<double>(bit_count);

  if (!std::isfinite(total->item())) {
    throw Error(ErrorKind::kNonFinite, std::string("non-finite loss in sub-step ") +
                                           std::to_string(static_cast<int>(which)) + " (" + sub_step_name(which) +
                                           ")");
  }
  if (total->requires_grad()) tape.backward(total);

  switch (which) {
    case SubStep::kMapping:
      adam_.step(mapping_group_);
      adam_.step(i2b_group_);
      student_.mapper().i2b.project();
      student_.mapper().l2b.project();
      break;
    case SubStep::kWeightRange:
      adam_.step(wgt_group_);
      for (auto& q : student_.quant()) q.bound->data()[0] = std::max(q.bound->item(), kMinRange);
      break;
    case SubStep::kActRange:
      adam_.step(act_group_);
      for (auto& q : student_.quant()) {
        if (!(q.upper->item() - q.lower->item() >= kMinRange)) q.upper->data()[0] = q.lower->item() + kMinRange;
      }
      break;
  }
  for (std::size_t g = 0; g < adam_.group_count(); ++g) {
    for (const auto& p : adam_.group(g).params) {
      p->set_requires_grad(false);
      p->drop_grad();
    }
  }
  return report;
}

StepReport Finetuner::step(const Tensor& batch, std::span<const ComplexityScore> complexities) {
  if (complexities.size() != static_cast<std::size_t>(batch.shape().n)) {
    throw Error(ErrorKind::kShape, "batch of " + std::to_string(batch.shape().n) + " images with " +
                                       std::to_string(complexities.size()) + " complexity scores");
  }
  auto x = make_tensor(batch);
  const ForwardResult teacher = teacher_.forward(nullptr, x, ForwardMode::kFloat);
  StepReport report;
  if (config_.update_mapping) report.sub_steps.push_back(run_sub_step(SubStep::kMapping, x, complexities, teacher));
  report.sub_steps.push_back(run_sub_step(SubStep::kWeightRange, x, complexities, teacher));
  report.sub_steps.push_back(run_sub_step(SubStep::kActRange, x, complexities, teacher));
  const BitDecision d = compose_bits(student_.config().b_base, complexities, student_.mapper());
  report.fab = d.bits.empty() || d.bits.front().empty() ? student_.config().b_base : fab(d.bits);
  return report;
}

void Finetuner::end_epoch() { adam_.scale_lr(config_.lr_decay); }

std::string LogRecord::json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["iter"] = iter;
  j["sub_step"] = sub_step;
  j["L_pix"] = l_pix;
  j["L_skt"] = l_skt;
  j["L_bit"] = l_bit;
  j["FAB"] = fab;
  j["lr"] = lr;
  return j.dump();
}

FinetuneLog run_finetune(const CalibSet& calib, const SrNetwork& teacher, SrNetwork& student,
                         const FinetuneConfig& config, const ProbeSet& probe,
                         const std::function<void(const LogRecord&)>& on_record) {
  if (calib.empty()) throw Error(ErrorKind::kEmptyInput, "fine-tuning needs calibration images");
  if (probe.lr.size() != probe.hr.size()) throw Error(ErrorKind::kShape, "probe LR and HR counts differ");
  Finetuner tuner(teacher, student, config);
  FinetuneLog log;
  std::mt19937_64 rng(config.seed);
  const auto all_complexities = calib.complexities();
  std::vector<std::size_t> order(calib.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double pix_sum = 0.0;
    std::size_t pix_count = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min(static_cast<std::size_t>(config.batch_size), order.size() - first);
      std::vector<Tensor> images;
      std::vector<ComplexityScore> cs;
      for (std::size_t j = first; j < first + count; ++j) {
        images.push_back(calib.entries[order[j]].patch);
        cs.push_back(calib.entries[order[j]].complexity);
      }
      const StepReport step = tuner.step(stack_batch(images), cs);
      ++log.iterations;
      for (const auto& s : step.sub_steps) {
        LogRecord rec;
        rec.epoch = epoch;
        rec.iter = log.iterations;
        rec.sub_step = static_cast<int>(s.sub_step);
        rec.l_pix = s.l_pix;
        rec.l_skt = s.l_skt;
        rec.l_bit = s.l_bit;
        rec.fab = s.fab;
        rec.lr = tuner.lr(s.sub_step);
        if (on_record) on_record(rec);
        log.steps.push_back(rec);
        pix_sum += s.l_pix;
        ++pix_count;
      }
    }
    EpochRecord er;
    er.epoch = epoch;
    er.mean_l_pix = pix_count == 0 ? 0.0 : pix_sum / static_cast<double>(pix_count);
    const BitDecision d = compose_bits(student.config().b_base, all_complexities, student.mapper());
    er.fab = d.bits.front().empty() ? student.config().b_base : fab(d.bits);
    if (!probe.lr.empty()) {
      double total = 0.0;
      for (std::size_t i = 0; i < probe.lr.size(); ++i) {
        total += psnr(*adaptive_forward(student, probe.lr[i]).first.output, probe.hr[i]);
      }
      er.probe_psnr = total / static_cast<double>(probe.lr.size());
    }
    log.epochs.push_back(er);
    tuner.end_epoch();
  }
  return log;
}

}  // namespace adabit
