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
#include <utility>
#include <vector>

#include "tabmsp/config.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Output of the column stage: E is [n, m + C, d], the first C slots along
// the feature axis being reserved for the row stage's special tokens.
struct EmbeddedTable {
  Tensor embeddings;
  std::size_t n_train = 0;
  std::size_t m_valid = 0;
};

// z-scores every column of X [n, m] with statistics of the first n_train
// rows only. Columns constant on the training rows become all zeros.
// Throws DataError on non-finite input.
Tensor normalize_columns(const Tensor& x, std::size_t n_train);

// Shared Set Transformer that turns each column into per-cell affine maps.
class ColumnEmbedder {
 public:
  struct IsabBlock {
    Tensor inducing;  // [k, d]
    MultiHeadAttention encode_attn;
    LayerNorm encode_norm;
    MultiHeadAttention decode_attn;
    LayerNorm decode_norm;
  };

  ColumnEmbedder(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

  // columns [..., n] -> [..., n, d]
  Tensor project_column(const Tensor& columns) const;

  // U [..., n, d] -> V [..., n, d]. Inducing summaries are built from the
  // first n_train rows only; all rows then query them. When `summaries` is
  // given it receives M for every stacked block.
  Tensor isab_forward(const Tensor& u, std::size_t n_train,
                      std::vector<Tensor>* summaries = nullptr) const;

  // V [..., n, d] -> (W, B), each [..., n, d].
  std::pair<Tensor, Tensor> generate_affine(const Tensor& v) const;

  // x is the normalized [n, m] table.
  EmbeddedTable embed_table(const Tensor& x, std::size_t n_train,
                            std::vector<Tensor>* summaries = nullptr) const;

  const std::vector<IsabBlock>& blocks() const noexcept { return blocks_; }
  const Linear& projection() const noexcept { return proj_; }
  const FeedForward& affine_generator() const noexcept { return affine_; }
  const Linear& skip() const noexcept { return skip_; }

 private:
  ModelConfig cfg_;
  Linear proj_;
  std::vector<IsabBlock> blocks_;
  FeedForward affine_;
  Linear skip_;
};

}  // namespace tabmsp
