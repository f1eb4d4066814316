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

#include "adabit/error.hpp"

#include <iostream>

namespace adabit {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kDegenerateRange: return "degenerate_range";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kEmptyInput: return "empty_input";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
      kind_(kind),
      message_(message) {}

FormatError::FormatError(std::string field, const std::string& message)
    : Error(ErrorKind::kFormat, "field '" + field + "': " + message), field_(std::move(field)) {}

namespace {
std::string join_problems(const std::vector<std::string>& problems) {
  std::string out;
  for (const auto& p : problems) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(ErrorKind::kConfig, join_problems(problems)), problems_(std::move(problems)) {}

namespace {
WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}
}  // namespace

void set_warning_sink(WarningSink sink) { warning_sink() = std::move(sink); }

void warn(std::string_view message) {
  if (warning_sink()) warning_sink()(message);
}

}  // namespace adabit
