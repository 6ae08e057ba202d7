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
#include <utility>
#include <vector>

#include "tabmsp/attention_mask.hpp"
#include "tabmsp/ops.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Ordered registry of named, trainable tensors. Iteration order is the
// registration order, which makes checkpoints and optimizer state stable.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape);

  const std::vector<std::pair<std::string, Tensor>>& items() const noexcept { return items_; }
  Tensor find(const std::string& name) const;
  std::size_t numel() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

void xavier_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// N(0, stddev^2) truncated to +-2 stddev.
void trunc_normal(Tensor& t, double stddev, Rng& rng);

// Inverted dropout; identity when p == 0 or when no generator is supplied
// (inference).
Tensor dropout(const Tensor& x, double p, Rng* rng);

// Sinusoidal position table [positions, dim].
Tensor sinusoidal_positions(std::size_t positions, std::size_t dim);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim, double eps);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Two-layer MLP with a GELU hidden layer.
struct FeedForward {
  Linear hidden;
  Linear out;

  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t in, std::size_t width,
              std::size_t out_dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return out(gelu(hidden(x))); }
};

struct AttentionOptions {
  const AttentionMask* mask = nullptr;
  double rope_theta = 0.0;            // 0 disables rotary encoding
  Tensor* weights_out = nullptr;      // receives [B, h, Lq, Lk] attention weights
};

// Concat(head_1..head_h) W_O with per-head scaled dot-product attention.
// query is [..., Lq, D], kv is [..., Lk, D]; a rank-2 operand is shared
// across the other's batch.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng);

  Tensor operator()(const Tensor& query, const Tensor& kv, const AttentionOptions& opts = {}) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t heads() const noexcept { return heads_; }
  const Linear& query_proj() const noexcept { return q_; }
  const Linear& key_proj() const noexcept { return k_; }
  const Linear& value_proj() const noexcept { return v_; }
  const Linear& out_proj() const noexcept { return o_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
};

// Pre-norm self-attention block:
//   x = x + MHA(LN(x)); x = x + FFN(LN(x))
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, std::size_t dim,
                   std::size_t heads, std::size_t ff_width, double eps, Rng& rng);

  Tensor operator()(const Tensor& x, const AttentionOptions& opts = {}) const;

  const LayerNorm& attn_norm() const noexcept { return ln_attn_; }
  const LayerNorm& ff_norm() const noexcept { return ln_ff_; }
  const MultiHeadAttention& attention() const noexcept { return attn_; }
  const FeedForward& feed_forward() const noexcept { return ff_; }

 private:
  LayerNorm ln_attn_, ln_ff_;
  MultiHeadAttention attn_;
  FeedForward ff_;
};

}  // namespace tabmsp
