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

#include "tabmsp/model.hpp"

#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, {0x1417}));
  col_ = std::make_unique<ColumnEmbedder>(store_, cfg_, rng);
  row_ = std::make_unique<RowInteraction>(store_, cfg_, rng);
  mem_ = std::make_unique<PerceiverMemory>(store_, cfg_, rng);
  icl_ = std::make_unique<IclPredictor>(store_, cfg_, rng);
}

Tensor Model::logits(const Tensor& x, std::span<const std::size_t> codes,
                     const ForwardOptions& opts) const {
  if (x.rank() != 2) throw DimensionError("expected an [n, m] table, got " + shape_str(x.shape()));
  const std::size_t n = x.size(0), n_train = codes.size();
  if (n_train == 0 || n_train >= n) {
    throw PreconditionError("need 1 <= n_train < n, got n=" + std::to_string(n) +
                            " n_train=" + std::to_string(n_train));
  }
  if (x.size(1) > cfg_.max_features) {
    throw DimensionError(std::to_string(x.size(1)) + " features exceed max_features=" +
                         std::to_string(cfg_.max_features));
  }
  ForwardTrace* tr = opts.trace;
  const Tensor z = normalize_columns(x, n_train);
  std::vector<Tensor> inducing;
  const EmbeddedTable e = col_->embed_table(z, n_train, tr ? &inducing : nullptr);
  RowOptions ro;
  ro.mask_seed = opts.mask_seed;
  const Tensor h = row_->forward(e, ro);
  LatentMemory mem;
  const Tensor r = mem_->refine(h, n_train, &mem);
  const Tensor inj = icl_->inject_labels(r, codes);
  const Tensor enc = icl_->encode(inj, build_split_mask(n, n_train));
  const Tensor out = icl_->decode(slice(enc, 0, n_train, n - n_train));
  if (tr) {
    tr->normalized = z;
    tr->inducing = std::move(inducing);
    tr->embeddings = e.embeddings;
    tr->rows = h;
    tr->memory = mem;
    tr->refined = r;
    tr->injected = inj;
    tr->encoded = enc;
    tr->logits = out;
  }
  return out;
}

Tensor Model::predict_codes(const Tensor& x, std::span<const std::size_t> codes,
                            std::size_t num_classes, const ForwardOptions& opts,
                            std::size_t force_groups) const {
  if (num_classes == 0) throw PreconditionError("num_classes must be positive");
  if (force_groups > 0 || num_classes > cfg_.max_classes) {
    return hierarchical(x, codes, num_classes, opts, force_groups);
  }
  return icl_->probabilities(logits(x, codes, opts), num_classes, cfg_.temperature);
}

Tensor Model::hierarchical(const Tensor& x, std::span<const std::size_t> codes,
                           std::size_t num_classes, const ForwardOptions& opts,
                           std::size_t force_groups) const {
  const auto groups = partition_classes(num_classes, cfg_.max_classes, force_groups);
  const std::size_t g = groups.size();
  std::vector<std::size_t> group_of(num_classes), local_of(num_classes);
  for (std::size_t gi = 0; gi < g; ++gi) {
    for (std::size_t k = 0; k < groups[gi].size(); ++k) {
      group_of[groups[gi][k]] = gi;
      local_of[groups[gi][k]] = k;
    }
  }
  const std::size_t n = x.size(0), m = x.size(1), n_train = codes.size();
  const std::size_t n_test = n - n_train;
  std::vector<std::size_t> group_codes(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    if (codes[i] >= num_classes) throw DataError("class code out of range");
    group_codes[i] = group_of[codes[i]];
  }
  ForwardOptions inner = opts;
  inner.trace = nullptr;
  const Tensor top = predict_codes(x, group_codes, g, inner);

  Tensor out(Shape{n_test, num_classes});
  for (std::size_t gi = 0; gi < g; ++gi) {
    std::vector<std::size_t> rows, local;
    for (std::size_t i = 0; i < n_train; ++i) {
      if (group_of[codes[i]] == gi) {
        rows.push_back(i);
        local.push_back(local_of[codes[i]]);
      }
    }
    const std::size_t gk = groups[gi].size();
    Tensor intra;
    if (rows.empty()) {
      // No context for this group: spread its mass uniformly.
      intra = Tensor(Shape{n_test, gk}, 1.0 / static_cast<double>(gk));
    } else {
      Tensor sub(Shape{rows.size() + n_test, m});
      std::size_t r = 0;
      for (std::size_t i : rows) {
        for (std::size_t j = 0; j < m; ++j) sub[r * m + j] = x[i * m + j];
        ++r;
      }
      for (std::size_t i = n_train; i < n; ++i, ++r) {
        for (std::size_t j = 0; j < m; ++j) sub[r * m + j] = x[i * m + j];
      }
      intra = predict_codes(sub, local, gk, inner);
    }
    for (std::size_t t = 0; t < n_test; ++t) {
      const double pg = top[t * g + gi];
      for (std::size_t k = 0; k < gk; ++k) {
        out[t * num_classes + groups[gi][k]] = pg * intra[t * gk + k];
      }
    }
  }
  return out;
}

Prediction Model::predict(const Tensor& x, std::span<const std::int64_t> y_train,
                          const ForwardOptions& opts, std::size_t force_groups) const {
  Prediction p;
  p.codec = LabelCodec::fit(y_train);
  const auto codes = p.codec.encode(y_train);
  Tensor probs = predict_codes(x, codes, p.codec.num_classes(), opts, force_groups);
  p.probs = Tensor(probs.shape(), std::vector<double>(probs.data().begin(), probs.data().end()));
  const std::size_t k = p.codec.num_classes();
  for (std::size_t t = 0; t < p.probs.size(0); ++t) {
    p.labels.push_back(p.codec.decode(argmax_row(p.probs.data().subspan(t * k, k))));
  }
  return p;
}

Tensor Model::loss(const TabularTask& task, const ForwardOptions& opts) const {
  const std::size_t n = task.rows(), nt = task.n_train;
  if (task.y.size() != n) throw DataError("label count does not match row count");
  const LabelCodec codec =
      LabelCodec::fit(std::span<const std::int64_t>(task.y.data(), nt));
  const std::size_t k = codec.num_classes();
  if (k > cfg_.max_classes) throw PreconditionError("training episodes need K <= C_max");
  const auto codes = codec.encode(std::span<const std::int64_t>(task.y.data(), nt));
  const auto targets = codec.encode(std::span<const std::int64_t>(task.y.data() + nt, n - nt));
  const Tensor lg = logits(task.x, codes, opts);
  return cross_entropy(slice(lg, -1, 0, k), targets, cfg_.temperature);
}

}  // namespace tabmsp
