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

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tabmsp {

// Preconditions: equal, non-zero lengths (PreconditionError otherwise).
double accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> truth);
// Per-class F1 weighted by true-class support.
double weighted_f1(std::span<const std::int64_t> preds, std::span<const std::int64_t> truth);

struct EvalRecord {
  std::string dataset;
  std::string model;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
};

// Ranks models per dataset by accuracy (1 = best, ties share the average
// rank) and averages over datasets. Every model must appear on every
// dataset; gaps throw CoverageError.
std::map<std::string, double> mean_rank(const std::vector<EvalRecord>& records);

}  // namespace tabmsp
