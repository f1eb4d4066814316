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

#ifndef ADABIT_ERROR_HPP_
#define ADABIT_ERROR_HPP_

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adabit {

enum class ErrorKind {
  kShape,
  kDegenerateRange,
  kInvalidArgument,
  kEmptyInput,
  kFormat,
  kIo,
  kConfig,
  kNonFinite,
  kState,
};

std::string_view error_kind_name(ErrorKind kind);

/// Base of every error thrown by the library. `what()` is a single line of
/// the form "<kind>: <message>" so the CLI can print it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

/// Checkpoint / image decoding failure tied to a named field of the format.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& message);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Config validation failure; carries every offending key at once.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Non-fatal diagnostics go through one replaceable sink (stderr by default).
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace adabit

#endif  // ADABIT_ERROR_HPP_
