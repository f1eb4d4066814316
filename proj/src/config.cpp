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

#include "adabit/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "adabit/error.hpp"

namespace adabit {

std::string_view mode_name(QuantMode mode) {
  switch (mode) {
    case QuantMode::kAdaptive: return "adaptive";
    case QuantMode::kMinMax: return "minmax";
    case QuantMode::kMinMaxFt: return "minmax_ft";
    case QuantMode::kPercentile: return "percentile";
    case QuantMode::kPercentileFt: return "percentile_ft";
  }
  return "?";
}

QuantMode parse_mode(std::string_view name) {
  for (QuantMode m : {QuantMode::kAdaptive, QuantMode::kMinMax, QuantMode::kMinMaxFt, QuantMode::kPercentile,
                      QuantMode::kPercentileFt}) {
    if (mode_name(m) == name) return m;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown mode '" + std::string(name) +
                                               "' (expected adaptive, minmax, minmax_ft, percentile, percentile_ft)");
}

namespace {

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected a number, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string_view strategy_name(SamplingStrategy s) {
  return s == SamplingStrategy::kRandom ? "random" : "stratified";
}

SamplingStrategy parse_strategy(const std::string& text) {
  if (text == "random") return SamplingStrategy::kRandom;
  if (text == "stratified") return SamplingStrategy::kStratified;
  throw std::invalid_argument("expected random or stratified, got '" + text + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Member>
Field number(const char* section, const char* key, Member member) {
  return {section, key, [member](const RunConfig& c) { return format_number<T>(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_number<T>(v); }};
}

template <typename Member>
Field flag(const char* section, const char* key, Member member) {
  return {section, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); }};
}

template <typename Member>
Field text(const char* section, const char* key, Member member) {
  return {section, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number<int>("net", "num_blocks", [](RunConfig& c) -> int& { return c.net.num_blocks; }),
      number<int>("net", "channels", [](RunConfig& c) -> int& { return c.net.channels; }),
      number<int>("net", "scale", [](RunConfig& c) -> int& { return c.net.scale; }),
      {"net", "scope", [](const RunConfig& c) { return std::string(scope_name(c.net.scope)); },
       [](RunConfig& c, const std::string& v) {
         try {
           c.net.scope = parse_scope(v);
         } catch (const Error&) {
           throw std::invalid_argument("expected body_only or full, got '" + v + "'");
         }
       }},
      number<int>("net", "b_base", [](RunConfig& c) -> int& { return c.net.b_base; }),

      number<int>("pretrain", "steps", [](RunConfig& c) -> int& { return c.pretrain.steps; }),
      number<int>("pretrain", "batch", [](RunConfig& c) -> int& { return c.pretrain.batch; }),
      number<int>("pretrain", "hr_patch", [](RunConfig& c) -> int& { return c.pretrain.hr_patch; }),
      number<float>("pretrain", "lr", [](RunConfig& c) -> float& { return c.pretrain.lr; }),

      text("data", "calib_dir", [](RunConfig& c) -> std::string& { return c.data.calib_dir; }),
      text("data", "test_dir", [](RunConfig& c) -> std::string& { return c.data.test_dir; }),
      number<int>("data", "pool_size", [](RunConfig& c) -> int& { return c.data.pool_size; }),
      number<int>("data", "lr_size", [](RunConfig& c) -> int& { return c.data.lr_size; }),
      number<std::size_t>("data", "calib_count", [](RunConfig& c) -> std::size_t& { return c.data.sampling.count; }),
      {"data", "sampling", [](const RunConfig& c) { return std::string(strategy_name(c.data.sampling.strategy)); },
       [](RunConfig& c, const std::string& v) { c.data.sampling.strategy = parse_strategy(v); }},
      number<int>("data", "groups", [](RunConfig& c) -> int& { return c.data.sampling.groups; }),
      number<int>("data", "patch", [](RunConfig& c) -> int& { return c.data.patch; }),
      number<int>("data", "eval_patch", [](RunConfig& c) -> int& { return c.data.eval_patch; }),
      number<int>("data", "test_count", [](RunConfig& c) -> int& { return c.data.test_count; }),
      number<int>("data", "test_size", [](RunConfig& c) -> int& { return c.data.test_size; }),
      number<int>("data", "probe_count", [](RunConfig& c) -> int& { return c.data.probe_count; }),

      number<double>("calib", "p_image", [](RunConfig& c) -> double& { return c.calib.p_image; }),
      number<double>("calib", "p_layer", [](RunConfig& c) -> double& { return c.calib.p_layer; }),
      number<float>("calib", "momentum", [](RunConfig& c) -> float& { return c.calib.momentum; }),
      number<int>("calib", "magnitude", [](RunConfig& c) -> int& { return c.calib.magnitude; }),
      number<int>("calib", "batch", [](RunConfig& c) -> int& { return c.calib.batch; }),
      number<std::size_t>("calib", "sample_cap", [](RunConfig& c) -> std::size_t& { return c.calib.sample_cap; }),

      number<int>("finetune", "epochs", [](RunConfig& c) -> int& { return c.finetune.epochs; }),
      number<int>("finetune", "batch_size", [](RunConfig& c) -> int& { return c.finetune.batch_size; }),
      number<float>("finetune", "lr_act", [](RunConfig& c) -> float& { return c.finetune.lr_act; }),
      number<float>("finetune", "lr_wgt", [](RunConfig& c) -> float& { return c.finetune.lr_wgt; }),
      number<float>("finetune", "lr_bitfactor", [](RunConfig& c) -> float& { return c.finetune.lr_bitfactor; }),
      number<float>("finetune", "lr_i2b", [](RunConfig& c) -> float& { return c.finetune.lr_i2b; }),
      number<float>("finetune", "lr_decay", [](RunConfig& c) -> float& { return c.finetune.lr_decay; }),
      number<float>("finetune", "lambda_skt", [](RunConfig& c) -> float& { return c.finetune.lambda_skt; }),
      number<float>("finetune", "lambda_bit", [](RunConfig& c) -> float& { return c.finetune.lambda_bit; }),
      number<int>("finetune", "b_tar", [](RunConfig& c) -> int& { return c.finetune.b_tar; }),
      flag("finetune", "bit_recon_grad", [](RunConfig& c) -> bool& { return c.finetune.bit_recon_grad; }),
      flag("finetune", "bit_loss_image_grad", [](RunConfig& c) -> bool& { return c.finetune.bit_loss_image_grad; }),

      {"run", "mode", [](const RunConfig& c) { return std::string(mode_name(c.mode)); },
       [](RunConfig& c, const std::string& v) {
         try {
           c.mode = parse_mode(v);
         } catch (const Error& e) {
           throw std::invalid_argument(e.message());
         }
       }},
      number<std::uint64_t>("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }),
      text("run", "out", [](RunConfig& c) -> std::string& { return c.out; }),
  };
  return table;
}

}  // namespace

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  auto check = [&out](bool ok, const char* key, const std::string& reason) {
    if (!ok) out.push_back(std::string(key) + ": " + reason);
  };
  check(net.num_blocks >= 1, "net.num_blocks", "must be >= 1");
  check(net.channels >= 1, "net.channels", "must be >= 1");
  check(net.scale == 2 || net.scale == 4, "net.scale", "must be 2 or 4");
  check(net.b_base >= kBitMin && net.b_base <= kBitMax, "net.b_base", "must lie in [2, 8]");
  check(pretrain.steps >= 0, "pretrain.steps", "must be >= 0");
  check(pretrain.batch >= 1, "pretrain.batch", "must be >= 1");
  check(pretrain.hr_patch >= net.scale && pretrain.hr_patch % net.scale == 0, "pretrain.hr_patch",
        "must be a positive multiple of net.scale");
  check(pretrain.lr > 0.0f, "pretrain.lr", "must be > 0");
  check(data.pool_size >= 1, "data.pool_size", "must be >= 1");
  check(data.lr_size >= 1, "data.lr_size", "must be >= 1");
  check(data.sampling.count >= 1, "data.calib_count", "must be >= 1");
  check(!data.calib_dir.empty() || data.sampling.count <= static_cast<std::size_t>(data.pool_size),
        "data.calib_count", "must not exceed data.pool_size");
  check(data.sampling.groups >= 1, "data.groups", "must be >= 1");
  check(data.patch >= 1, "data.patch", "must be >= 1");
  check(data.eval_patch >= 1, "data.eval_patch", "must be >= 1");
  check(data.test_count >= 1, "data.test_count", "must be >= 1");
  check(data.test_size >= net.scale && data.test_size % net.scale == 0, "data.test_size",
        "must be a positive multiple of net.scale");
  check(data.probe_count >= 0, "data.probe_count", "must be >= 0");
  check(calib.p_image > 0.0 && calib.p_image <= 50.0, "calib.p_image", "must lie in (0, 50]");
  check(calib.p_layer > 0.0 && calib.p_layer <= 50.0, "calib.p_layer", "must lie in (0, 50]");
  check(calib.momentum >= 0.0f && calib.momentum < 1.0f, "calib.momentum", "must lie in [0, 1)");
  check(calib.magnitude >= 0 && calib.magnitude <= 3, "calib.magnitude", "must lie in [0, 3]");
  check(calib.batch >= 1, "calib.batch", "must be >= 1");
  check(calib.sample_cap >= 1, "calib.sample_cap", "must be >= 1");
  try {
    finetune.validate();
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) out.push_back("finetune." + p);
  }
  return out;
}

void RunConfig::validate() const {
  auto p = problems();
  if (!p.empty()) throw ConfigError(std::move(p));
}

RunConfig parse_config(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError({"syntax: line " + std::to_string(e.line()) + ": " + e.message()});
  }
  RunConfig config;
  std::vector<std::string> problems;
  std::set<std::string> known_sections;
  for (const auto& f : fields()) known_sections.insert(f.section);
  for (const auto& [section, body] : tree) {
    if (!known_sections.contains(section)) {
      problems.push_back(section + ": unknown section");
      continue;
    }
    if (body.empty() && !body.data().empty()) {
      problems.push_back(section + ": key outside any section");
      continue;
    }
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      auto it = std::find_if(fields().begin(), fields().end(),
                             [&](const Field& f) { return section == f.section && key == f.key; });
      if (it == fields().end()) {
        problems.push_back(name + ": unknown key");
        continue;
      }
      try {
        it->set(config, value.data());
      } catch (const std::invalid_argument& e) {
        problems.push_back(name + ": " + e.what());
      }
    }
  }
  for (auto& p : config.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finalizer over (seed, stream).
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace adabit
