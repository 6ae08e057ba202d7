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

#include "tabmsp/row_interaction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {

SparseMask build_block_sparse_mask(std::size_t length, std::size_t n_special, std::size_t window,
                                   std::size_t random_links, std::uint64_t seed) {
  if (length == 0) throw PreconditionError("mask length must be positive");
  if (n_special > length) {
    throw PreconditionError("n_special (" + std::to_string(n_special) + ") exceeds L (" +
                            std::to_string(length) + ")");
  }
  const std::size_t n_feat = length - n_special;
  if (random_links > 0 && (n_feat == 0 || random_links > n_feat - 1)) {
    throw PreconditionError("random_links (" + std::to_string(random_links) +
                            ") exceeds the number of other feature tokens");
  }
  SparseMask out;
  out.size = length;
  out.n_special = n_special;
  out.window = window;
  out.random_links = random_links;
  out.seed = seed;
  out.links.resize(n_feat);

  Rng rng(seed);
  std::vector<std::uint32_t> pool(n_feat > 0 ? n_feat - 1 : 0);
  for (std::size_t f = 0; f < n_feat; ++f) {
    if (random_links == 0) break;
    std::size_t p = 0;
    for (std::size_t g = 0; g < n_feat; ++g) {
      if (g != f) pool[p++] = static_cast<std::uint32_t>(n_special + g);
    }
    // partial Fisher-Yates
    for (std::size_t t = 0; t < random_links; ++t) {
      const auto pick = static_cast<std::size_t>(
          uniform_int(rng, static_cast<std::int64_t>(t), static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[t], pool[pick]);
    }
    out.links[f].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(random_links));
    std::sort(out.links[f].begin(), out.links[f].end());
  }

  out.mask = AttentionMask::from_predicate(length, length, [&](std::size_t i, std::size_t j) {
    if (i < n_special || j < n_special || i == j) return true;
    const std::size_t dist = i > j ? i - j : j - i;
    if (dist <= window) return true;
    const auto& l = out.links[i - n_special];
    return std::binary_search(l.begin(), l.end(), static_cast<std::uint32_t>(j));
  });
  return out;
}

std::size_t count_allowed(const SparseMask& mask) { return mask.mask.count_allowed(); }

RowInteraction::RowInteraction(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const std::size_t d = cfg.embed_dim;
  for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
    const std::string p = "row.scale" + std::to_string(si);
    Scale sc;
    sc.factor = cfg.scales[si];
    sc.seeds = store.add(p + ".seeds", Shape{group_count(cfg.max_features, sc.factor), d});
    trunc_normal(sc.seeds, 0.02, rng);
    sc.key = Linear(store, p + ".key", d, d, rng);
    sc.value = Linear(store, p + ".value", d, d, rng);
    sc.cls = store.add(p + ".cls", Shape{cfg.n_cls, d});
    trunc_normal(sc.cls, 0.02, rng);
    sc.global = store.add(p + ".global", Shape{cfg.n_global, d});
    trunc_normal(sc.global, 0.02, rng);
    for (std::size_t b = 0; b < cfg.blocks_per_scale(); ++b) {
      sc.blocks.emplace_back(store, p + ".block" + std::to_string(b), d, cfg.row_heads,
                             cfg.row_ff, cfg.ln_eps, rng);
    }
    scales_.push_back(std::move(sc));
  }
  out_norm_ = LayerNorm(store, "row.out_ln", cfg.row_dim(), cfg.ln_eps);
}

Tensor RowInteraction::group_features(const Tensor& features, std::size_t scale_index,
                                      std::size_t k, std::size_t m_valid) const {
  if (features.rank() != 3) throw DimensionError("group_features expects [n, m, d]");
  const std::size_t m = features.size(1), d = features.size(2);
  if (m == 0 || m_valid == 0) throw DimensionError("group_features needs at least one feature");
  const Scale& sc = scales_.at(scale_index);
  if (k == 0 || k > sc.seeds.size(0)) {
    throw DimensionError("group count " + std::to_string(k) + " outside [1, " +
                         std::to_string(sc.seeds.size(0)) + "]");
  }
  const Tensor q = add(slice(sc.seeds, 0, 0, k), sinusoidal_positions(k, d));  // [K, d]
  const Tensor keys = sc.key(features);
  const Tensor values = sc.value(features);
  const Tensor logits = scale(matmul(q, transpose(keys)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn;
  if (m_valid < m) {
    const auto mask = AttentionMask::from_predicate(
        k, m, [m_valid](std::size_t, std::size_t j) { return j < m_valid; });
    attn = softmax_masked(logits, mask);
  } else {
    attn = softmax(logits);
  }
  return matmul(attn, values);  // [n, K, d]
}

Tensor RowInteraction::assemble(const Tensor& reserved, const Tensor& groups,
                                std::size_t scale_index) const {
  const Scale& sc = scales_.at(scale_index);
  const Tensor specials = add(reserved, concat({sc.cls, sc.global}, 0));
  return concat({specials, groups}, 1);
}

Tensor RowInteraction::encode_scale(const Tensor& x, const SparseMask& mask,
                                    std::size_t scale_index,
                                    std::vector<Tensor>* weights_out) const {
  if (x.rank() != 3 || x.size(1) != mask.size || mask.mask.rows() != mask.size) {
    throw DimensionError("mask size " + std::to_string(mask.size) + " does not match sequence " +
                         shape_str(x.shape()));
  }
  const Scale& sc = scales_.at(scale_index);
  Tensor h = x;
  for (const auto& blk : sc.blocks) {
    AttentionOptions opts;
    opts.mask = &mask.mask;
    opts.rope_theta = cfg_.rope_theta;
    Tensor w;
    if (weights_out) opts.weights_out = &w;
    h = blk(h, opts);
    if (weights_out) weights_out->push_back(w);
  }
  return h;
}

Tensor RowInteraction::forward(const EmbeddedTable& table, const RowOptions& opts) const {
  const Tensor& e = table.embeddings;
  const std::size_t c = cfg_.reserved_slots();
  if (e.rank() != 3 || e.size(1) <= c || e.size(2) != cfg_.embed_dim) {
    throw DimensionError("row stage expects E of shape [n, m + " + std::to_string(c) + ", " +
                         std::to_string(cfg_.embed_dim) + "], got " + shape_str(e.shape()));
  }
  const std::size_t n = e.size(0), m = e.size(1) - c;
  const std::size_t m_valid = std::min(table.m_valid == 0 ? m : table.m_valid, m);
  const Tensor reserved = slice(e, 1, 0, c);
  const Tensor features = slice(e, 1, c, m);
  if (opts.masks_out) opts.masks_out->clear();

  Tensor acc;
  for (std::size_t si = 0; si < scales_.size(); ++si) {
    const std::size_t k = group_count(m, scales_[si].factor);
    const Tensor x = assemble(reserved, group_features(features, si, k, m_valid), si);
    const std::size_t links = std::min<std::size_t>(cfg_.random_links, k > 0 ? k - 1 : 0);
    const SparseMask mask = build_block_sparse_mask(c + k, c, cfg_.window, links,
                                                    derive_seed(opts.mask_seed, {si}));
    const Tensor cls = slice(encode_scale(x, mask, si), 1, 0, cfg_.n_cls);
    acc = acc.defined() ? add(acc, cls) : cls;
    if (opts.masks_out) opts.masks_out->push_back(mask);
  }
  acc = scale(acc, 1.0 / static_cast<double>(scales_.size()));
  return out_norm_(reshape(acc, Shape{n, cfg_.row_dim()}));
}

}  // namespace tabmsp
