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

#include <cstddef>
#include <exception>
#include <ostream>
#include <string>
#include <vector>

#include "tabmsp/config.hpp"
#include "tabmsp/row_interaction.hpp"
#include "tabmsp/trainer.hpp"

namespace tabmsp::cli {

// Runs one command line (without the program name). Results go to `out`;
// failures are reported on `err` as a single JSON object and yield a
// nonzero exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Plain PBM ("P1") rendering: 1 marks an allowed pair, 0 a blocked one.
std::string render_mask(const SparseMask& mask);

// {"error": <kind>, "message": <text>}
std::string error_json(const std::exception& e);

// Rough peak memory of a pretraining run: parameters with gradients and
// Adam moments plus the largest episode's activations.
double estimate_training_bytes(const ModelConfig& model, const TrainerConfig& trainer);

}  // namespace tabmsp::cli
