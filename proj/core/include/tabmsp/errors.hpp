// Copyright 2026 The tabmsp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace tabmsp {

// Base of every error thrown by the library. `kind()` is a stable
// machine-readable tag used by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Shapes or extents that cannot be combined.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

// Argument outside an operation's documented domain.
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& m) : Error("precondition", m) {}
};

// Input data that is malformed, non-finite or outside a codec.
class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error("data", m) {}
};

// Object used in the wrong lifecycle state (e.g. backward with no tape).
class StateError : public Error {
 public:
  explicit StateError(const std::string& m) : Error("state", m) {}
};

// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class PartitionError : public Error {
 public:
  explicit PartitionError(const std::string& m) : Error("partition", m) {}
};

class CoverageError : public Error {
 public:
  explicit CoverageError(const std::string& m) : Error("coverage", m) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error("schema", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error("training", m) {}
};

}  // namespace tabmsp
