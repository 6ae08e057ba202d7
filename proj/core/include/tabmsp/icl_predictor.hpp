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
#include <span>
#include <vector>

#include "tabmsp/attention_mask.hpp"
#include "tabmsp/config.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Order-preserving bijection between the distinct training labels and
// {0, ..., K-1}.
class LabelCodec {
 public:
  LabelCodec() = default;
  // Throws PreconditionError on empty input.
  static LabelCodec fit(std::span<const std::int64_t> labels);

  std::size_t num_classes() const noexcept { return labels_.size(); }
  const std::vector<std::int64_t>& labels() const noexcept { return labels_; }

  // Throws DataError for labels not seen by fit.
  std::size_t encode(std::int64_t label) const;
  std::vector<std::size_t> encode(std::span<const std::int64_t> labels) const;
  std::int64_t decode(std::size_t code) const;

 private:
  std::vector<std::int64_t> labels_;
};

// Train rows see train rows only; test rows see everything.
struct SplitMask {
  AttentionMask mask;
  std::size_t size = 0;
  std::size_t n_train = 0;
};

// Requires 1 <= n_train < n.
SplitMask build_split_mask(std::size_t n, std::size_t n_train);

// Contiguous balanced class groups. `groups` = 0 picks ceil(K / c_max).
// Throws PartitionError if a group would exceed c_max.
std::vector<std::vector<std::size_t>> partition_classes(std::size_t num_classes, std::size_t c_max,
                                                        std::size_t groups = 0);

// Lowest index wins ties.
std::size_t argmax_row(std::span<const double> row);

// Mean negative log-likelihood with clamping at 1e-12.
Tensor icl_loss(const Tensor& probs, std::span<const std::size_t> targets,
                std::size_t* clamped = nullptr);

class IclPredictor {
 public:
  IclPredictor(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

  // R[i] += W_y[y_i] for i < |codes|; later rows are returned untouched.
  Tensor inject_labels(const Tensor& r, std::span<const std::size_t> codes) const;
  // N_icl split-masked pre-norm blocks followed by LayerNorm.
  Tensor encode(const Tensor& r, const SplitMask& mask) const;
  // [n_test, d_R] -> [n_test, C_max]
  Tensor decode(const Tensor& h_test) const;
  // softmax(logits[:, :K] / tau)
  Tensor probabilities(const Tensor& logits, std::size_t num_classes, double temperature) const;

  const Tensor& label_embedding() const noexcept { return label_embed_; }
  const std::vector<TransformerBlock>& blocks() const noexcept { return blocks_; }
  const LayerNorm& output_norm() const noexcept { return out_norm_; }
  const FeedForward& decoder() const noexcept { return decoder_; }

 private:
  ModelConfig cfg_;
  Tensor label_embed_;  // [C_max, d_R]
  std::vector<TransformerBlock> blocks_;
  LayerNorm out_norm_;
  FeedForward decoder_;
};

}  // namespace tabmsp
