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
#include <utility>
#include <vector>

#include "tabmsp/attention_mask.hpp"
#include "tabmsp/column_embedder.hpp"
#include "tabmsp/config.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Window + special + random-link connectivity over L tokens, the first
// n_special of which are fully connected.
struct SparseMask {
  AttentionMask mask;
  std::size_t size = 0;
  std::size_t n_special = 0;
  std::size_t window = 0;
  std::size_t random_links = 0;
  std::uint64_t seed = 0;
  // links[f] lists the sampled targets of feature token n_special + f.
  std::vector<std::vector<std::uint32_t>> links;
};

// Random links are sampled per feature row, uniformly without replacement
// from the other feature tokens. Throws PreconditionError if r exceeds
// L - n_special - 1 or if n_special > L.
SparseMask build_block_sparse_mask(std::size_t length, std::size_t n_special, std::size_t window,
                                   std::size_t random_links, std::uint64_t seed);

std::size_t count_allowed(const SparseMask& mask);

struct RowOptions {
  std::uint64_t mask_seed = 0;
  // Per scale, the mask used on the last call (optional).
  std::vector<SparseMask>* masks_out = nullptr;
};

class RowInteraction {
 public:
  struct Scale {
    std::size_t factor = 1;
    Tensor seeds;      // [ceil(max_features / s), d]
    Linear key, value;
    Tensor cls;        // [n_cls, d]
    Tensor global;     // [n_global, d]
    std::vector<TransformerBlock> blocks;
  };

  RowInteraction(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

  static std::size_t group_count(std::size_t m, std::size_t s) { return (m + s - 1) / s; }

  // features [n, m, d] -> [n, K, d]; columns >= m_valid are masked out.
  Tensor group_features(const Tensor& features, std::size_t scale_index, std::size_t k,
                        std::size_t m_valid) const;

  // Sequence of [CLS, GLOBAL, groups] for one scale; `reserved` is the
  // [n, C, d] reserved block of E, added onto the special tokens.
  Tensor assemble(const Tensor& reserved, const Tensor& groups, std::size_t scale_index) const;

  Tensor encode_scale(const Tensor& x, const SparseMask& mask, std::size_t scale_index,
                      std::vector<Tensor>* weights_out = nullptr) const;

  // E -> H [n, n_cls * d].
  Tensor forward(const EmbeddedTable& table, const RowOptions& opts = {}) const;

  const std::vector<Scale>& scales() const noexcept { return scales_; }
  const LayerNorm& output_norm() const noexcept { return out_norm_; }

 private:
  ModelConfig cfg_;
  std::vector<Scale> scales_;
  LayerNorm out_norm_;
};

}  // namespace tabmsp
