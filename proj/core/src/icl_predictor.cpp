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

#include "tabmsp/icl_predictor.hpp"

#include <algorithm>
#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {

LabelCodec LabelCodec::fit(std::span<const std::int64_t> labels) {
  if (labels.empty()) throw PreconditionError("cannot fit a label codec on no labels");
  LabelCodec c;
  c.labels_.assign(labels.begin(), labels.end());
  std::sort(c.labels_.begin(), c.labels_.end());
  c.labels_.erase(std::unique(c.labels_.begin(), c.labels_.end()), c.labels_.end());
  return c;
}

std::size_t LabelCodec::encode(std::int64_t label) const {
  const auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label) {
    throw DataError("label " + std::to_string(label) + " is not in the training label set");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

std::vector<std::size_t> LabelCodec::encode(std::span<const std::int64_t> labels) const {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(encode(l));
  return out;
}

std::int64_t LabelCodec::decode(std::size_t code) const {
  if (code >= labels_.size()) throw DataError("class code out of range");
  return labels_[code];
}

SplitMask build_split_mask(std::size_t n, std::size_t n_train) {
  if (n_train < 1 || n_train >= n) {
    throw PreconditionError("split mask needs 1 <= n_train < n, got n=" + std::to_string(n) +
                            " n_train=" + std::to_string(n_train));
  }
  SplitMask out;
  out.size = n;
  out.n_train = n_train;
  out.mask = AttentionMask::from_predicate(
      n, n, [n_train](std::size_t i, std::size_t j) { return i >= n_train || j < n_train; });
  return out;
}

std::vector<std::vector<std::size_t>> partition_classes(std::size_t num_classes, std::size_t c_max,
                                                        std::size_t groups) {
  if (num_classes == 0 || c_max == 0) throw PartitionError("nothing to partition");
  const std::size_t g = groups == 0 ? (num_classes + c_max - 1) / c_max : groups;
  if (g > num_classes) throw PartitionError("more groups than classes");
  std::vector<std::vector<std::size_t>> out(g);
  const std::size_t base = num_classes / g, extra = num_classes % g;
  std::size_t next = 0;
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    if (len > c_max) {
      throw PartitionError("group of " + std::to_string(len) + " classes exceeds C_max=" +
                           std::to_string(c_max));
    }
    for (std::size_t k = 0; k < len; ++k) out[i].push_back(next++);
  }
  return out;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

Tensor icl_loss(const Tensor& probs, std::span<const std::size_t> targets, std::size_t* clamped) {
  return nll_from_probs(probs, targets, clamped);
}

IclPredictor::IclPredictor(ParameterStore& store, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t dr = cfg.row_dim();
  label_embed_ = store.add("icl.label_embed", Shape{cfg.max_classes, dr});
  xavier_uniform(label_embed_, cfg.max_classes, dr, rng);
  for (auto& v : label_embed_.data()) v *= cfg.label_init_gain;
  for (std::size_t b = 0; b < cfg.icl_blocks; ++b) {
    blocks_.emplace_back(store, "icl.block" + std::to_string(b), dr, cfg.icl_heads, cfg.icl_ff,
                         cfg.ln_eps, rng);
  }
  out_norm_ = LayerNorm(store, "icl.out_ln", dr, cfg.ln_eps);
  decoder_ = FeedForward(store, "icl.decoder", dr, 2 * dr, cfg.max_classes, rng);
}

Tensor IclPredictor::inject_labels(const Tensor& r, std::span<const std::size_t> codes) const {
  if (r.rank() != 2 || r.size(1) != cfg_.row_dim()) {
    throw DimensionError("inject_labels expects [n, d_R], got " + shape_str(r.shape()));
  }
  const std::size_t n = r.size(0), nt = codes.size();
  if (nt == 0 || nt > n) throw PreconditionError("label count must lie in [1, n]");
  Tensor onehot(Shape{nt, cfg_.max_classes});
  for (std::size_t i = 0; i < nt; ++i) {
    if (codes[i] >= cfg_.max_classes) {
      throw DataError("class code " + std::to_string(codes[i]) + " exceeds C_max");
    }
    onehot[i * cfg_.max_classes + codes[i]] = 1.0;
  }
  const Tensor train = add(slice(r, 0, 0, nt), matmul(onehot, label_embed_));
  if (nt == n) return train;
  return concat({train, slice(r, 0, nt, n - nt)}, 0);
}

Tensor IclPredictor::encode(const Tensor& r, const SplitMask& mask) const {
  if (r.rank() != 2 || r.size(0) != mask.size) {
    throw DimensionError("split mask size does not match " + shape_str(r.shape()));
  }
  AttentionOptions opts;
  opts.mask = &mask.mask;
  Tensor h = r;
  for (const auto& blk : blocks_) h = blk(h, opts);
  return out_norm_(h);
}

Tensor IclPredictor::decode(const Tensor& h_test) const { return decoder_(h_test); }

Tensor IclPredictor::probabilities(const Tensor& logits, std::size_t num_classes,
                                   double temperature) const {
  if (num_classes == 0 || num_classes > logits.size(-1)) {
    throw PreconditionError("class count must lie in [1, C_max]");
  }
  if (!(temperature > 0.0)) throw PreconditionError("temperature must be positive");
  return softmax(scale(slice(logits, -1, 0, num_classes), 1.0 / temperature));
}

}  // namespace tabmsp
