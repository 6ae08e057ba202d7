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

#include "tabmsp/column_embedder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {

Tensor normalize_columns(const Tensor& x, std::size_t n_train) {
  if (x.rank() != 2) throw DimensionError("expected an [n, m] table, got " + shape_str(x.shape()));
  const std::size_t n = x.size(0), m = x.size(1);
  if (n_train == 0 || n_train > n) {
    throw PreconditionError("n_train must lie in [1, n]");
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw DataError("table contains a non-finite value");
  }
  Tensor out(x.shape());
  for (std::size_t j = 0; j < m; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) mu += x[i * m + j];
    mu /= static_cast<double>(n_train);
    double var = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const double dv = x[i * m + j] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(n_train);
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) continue;  // constant column stays zero
    for (std::size_t i = 0; i < n; ++i) out[i * m + j] = (x[i * m + j] - mu) / sd;
  }
  return out;
}

ColumnEmbedder::ColumnEmbedder(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const std::size_t d = cfg.embed_dim;
  proj_ = Linear(store, "col.proj", 1, d, rng);
  for (std::size_t b = 0; b < cfg.isab_blocks; ++b) {
    const std::string p = "col.isab" + std::to_string(b);
    IsabBlock blk;
    blk.inducing = store.add(p + ".inducing", Shape{cfg.inducing_points, d});
    trunc_normal(blk.inducing, 0.02, rng);
    blk.encode_attn = MultiHeadAttention(store, p + ".mab1", d, cfg.col_heads, rng);
    blk.encode_norm = LayerNorm(store, p + ".mab1_ln", d, cfg.ln_eps);
    blk.decode_attn = MultiHeadAttention(store, p + ".mab2", d, cfg.col_heads, rng);
    blk.decode_norm = LayerNorm(store, p + ".mab2_ln", d, cfg.ln_eps);
    blocks_.push_back(std::move(blk));
  }
  affine_ = FeedForward(store, "col.affine", d, cfg.col_ff, 2 * d, rng);
  skip_.weight = store.add("col.skip.weight", Shape{1, d});
  skip_.bias = store.add("col.skip.bias", Shape{d});
  std::normal_distribution<double> tiny(0.0, cfg.skip_init_std);
  for (auto& v : skip_.weight.data()) v = tiny(rng);
}

Tensor ColumnEmbedder::project_column(const Tensor& columns) const {
  if (columns.rank() == 0 || columns.size(-1) == 0) {
    throw DimensionError("project_column needs a non-empty column");
  }
  Shape s = columns.shape();
  s.push_back(1);
  return proj_(reshape(columns, s));
}

Tensor ColumnEmbedder::isab_forward(const Tensor& u, std::size_t n_train,
                                    std::vector<Tensor>* summaries) const {
  if (u.rank() < 2) throw DimensionError("isab_forward expects [..., n, d]");
  if (n_train == 0 || n_train > u.size(-2)) {
    throw PreconditionError("isab_forward needs 1 <= n_train <= n, got n_train=" +
                            std::to_string(n_train));
  }
  Tensor h = u;
  for (const auto& blk : blocks_) {
    const Tensor train = slice(h, -2, 0, n_train);
    // MAB(Q, K, V) = LN(Q + MultiHead(Q, K, V))
    const Tensor summary = blk.encode_norm(add(blk.inducing, blk.encode_attn(blk.inducing, train)));
    if (summaries) summaries->push_back(summary);
    h = blk.decode_norm(add(h, blk.decode_attn(h, summary)));
  }
  return h;
}

std::pair<Tensor, Tensor> ColumnEmbedder::generate_affine(const Tensor& v) const {
  const Tensor wb = affine_(v);
  const std::size_t d = cfg_.embed_dim;
  return {slice(wb, -1, 0, d), slice(wb, -1, d, d)};
}

EmbeddedTable ColumnEmbedder::embed_table(const Tensor& x, std::size_t n_train,
                                          std::vector<Tensor>* summaries) const {
  if (x.rank() != 2 || x.size(1) == 0 || x.size(0) == 0) {
    throw DimensionError("embed_table expects a non-empty [n, m] table, got " +
                         shape_str(x.shape()));
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw DataError("table contains a non-finite value");
  }
  const std::size_t n = x.size(0), m = x.size(1), c = cfg_.reserved_slots();
  const Tensor columns = transpose(x);                      // [m, n]
  const Tensor u = project_column(columns);                 // [m, n, d]
  const Tensor v = isab_forward(u, n_train, summaries);     // [m, n, d]
  const auto [w, b] = generate_affine(v);
  const Tensor cells = reshape(columns, Shape{m, n, 1});
  const Tensor features = permute(add(mul(w, cells), b), {1, 0, 2});  // [n, m, d]
  const Tensor reserved = skip_(Tensor(Shape{n, c, 1}));   // zero pseudo-column
  EmbeddedTable out;
  out.embeddings = concat({reserved, features}, 1);
  out.n_train = n_train;
  out.m_valid = m;
  return out;
}

}  // namespace tabmsp
