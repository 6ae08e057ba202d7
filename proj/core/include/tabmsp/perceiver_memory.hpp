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
#include <string>
#include <vector>

#include "tabmsp/config.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Pre-norm cross-attention block:
//   Z = Q + MHA(LN_q(Q), LN_kv(KV)); out = Z + FFN(LN(Z))
class CrossAttnBlock {
 public:
  CrossAttnBlock() = default;
  CrossAttnBlock(ParameterStore& store, const std::string& name, std::size_t dim,
                 std::size_t heads, std::size_t ff_width, double eps, Rng& rng);

  Tensor operator()(const Tensor& query, const Tensor& kv) const;

  const MultiHeadAttention& attention() const noexcept { return attn_; }
  const LayerNorm& query_norm() const noexcept { return ln_q_; }
  const LayerNorm& kv_norm() const noexcept { return ln_kv_; }
  const LayerNorm& ff_norm() const noexcept { return ln_ff_; }
  const FeedForward& ff() const noexcept { return ff_; }

 private:
  LayerNorm ln_q_, ln_kv_, ln_ff_;
  MultiHeadAttention attn_;
  FeedForward ff_;
};

// Encoded per-dataset memory. `state` is empty until written.
struct LatentMemory {
  Tensor state;  // [P, d_R]
  bool encoded = false;
};

class PerceiverMemory {
 public:
  PerceiverMemory(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

  bool enabled() const noexcept { return slots_ > 0; }

  // Memory queries the first n_train rows of H only.
  LatentMemory write(const Tensor& h, std::size_t n_train) const;
  // Every row of H queries the memory; rows never see each other.
  Tensor read(const Tensor& h, const LatentMemory& mem) const;
  // write then read; identity when the memory has zero slots.
  Tensor refine(const Tensor& h, std::size_t n_train, LatentMemory* state_out = nullptr) const;

  const Tensor& base() const noexcept { return base_; }
  const std::vector<CrossAttnBlock>& write_blocks() const noexcept { return write_; }
  const std::vector<CrossAttnBlock>& read_blocks() const noexcept { return read_; }

 private:
  std::size_t slots_ = 0;
  std::size_t dim_ = 0;
  Tensor base_;
  std::vector<CrossAttnBlock> write_, read_;
};

}  // namespace tabmsp
