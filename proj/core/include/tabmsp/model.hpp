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
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tabmsp/column_embedder.hpp"
#include "tabmsp/config.hpp"
#include "tabmsp/icl_predictor.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/perceiver_memory.hpp"
#include "tabmsp/row_interaction.hpp"
#include "tabmsp/task.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Intermediate values of one forward pass, for inspection and tests.
struct ForwardTrace {
  Tensor normalized;               // [n, m]
  std::vector<Tensor> inducing;    // per ISAB block, [m, k, d]
  Tensor embeddings;               // E [n, m + C, d]
  Tensor rows;                     // H [n, d_R]
  LatentMemory memory;
  Tensor refined;                  // R [n, d_R]
  Tensor injected;                 // [n, d_R]
  Tensor encoded;                  // [n, d_R]
  Tensor logits;                   // [n_test, C_max]
};

struct ForwardOptions {
  std::uint64_t mask_seed = 0;
  ForwardTrace* trace = nullptr;
};

struct Prediction {
  LabelCodec codec;
  Tensor probs;                        // [n_test, K]
  std::vector<std::int64_t> labels;    // original label values
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

  const ColumnEmbedder& column() const noexcept { return *col_; }
  const RowInteraction& row() const noexcept { return *row_; }
  const PerceiverMemory& memory() const noexcept { return *mem_; }
  const IclPredictor& icl() const noexcept { return *icl_; }

  // Raw X [n, m] plus class codes for the first codes.size() rows ->
  // decoder logits [n_test, C_max].
  Tensor logits(const Tensor& x, std::span<const std::size_t> codes,
                const ForwardOptions& opts = {}) const;

  // Class probabilities [n_test, K] over codes 0..K-1. Routes through the
  // hierarchical path when K > C_max, or always when force_groups > 0.
  Tensor predict_codes(const Tensor& x, std::span<const std::size_t> codes,
                       std::size_t num_classes, const ForwardOptions& opts = {},
                       std::size_t force_groups = 0) const;

  // Fits the label codec on the context labels and predicts the queries.
  Prediction predict(const Tensor& x, std::span<const std::int64_t> y_train,
                     const ForwardOptions& opts = {}, std::size_t force_groups = 0) const;

  // Mean cross-entropy over the task's test rows at the configured
  // temperature; requires K <= C_max.
  Tensor loss(const TabularTask& task, const ForwardOptions& opts = {}) const;

 private:
  Tensor hierarchical(const Tensor& x, std::span<const std::size_t> codes,
                      std::size_t num_classes, const ForwardOptions& opts,
                      std::size_t force_groups) const;

  ModelConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<ColumnEmbedder> col_;
  std::unique_ptr<RowInteraction> row_;
  std::unique_ptr<PerceiverMemory> mem_;
  std::unique_ptr<IclPredictor> icl_;
};

}  // namespace tabmsp
