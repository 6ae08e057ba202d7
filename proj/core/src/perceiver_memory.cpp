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

#include "tabmsp/perceiver_memory.hpp"

#include "tabmsp/errors.hpp"

namespace tabmsp {

CrossAttnBlock::CrossAttnBlock(ParameterStore& store, const std::string& name, std::size_t dim,
                               std::size_t heads, std::size_t ff_width, double eps, Rng& rng)
    : ln_q_(store, name + ".ln_q", dim, eps),
      ln_kv_(store, name + ".ln_kv", dim, eps),
      ln_ff_(store, name + ".ln_ff", dim, eps),
      attn_(store, name + ".attn", dim, heads, rng),
      ff_(store, name + ".ff", dim, ff_width, dim, rng) {}

Tensor CrossAttnBlock::operator()(const Tensor& query, const Tensor& kv) const {
  if (query.size(-1) != kv.size(-1)) {
    throw DimensionError("cross attention dims differ: " + shape_str(query.shape()) + " vs " +
                         shape_str(kv.shape()));
  }
  const Tensor z = add(query, attn_(ln_q_(query), ln_kv_(kv)));
  return add(z, ff_(ln_ff_(z)));
}

PerceiverMemory::PerceiverMemory(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : slots_(cfg.memory_slots), dim_(cfg.row_dim()) {
  if (slots_ == 0) return;
  base_ = store.add("mem.base", Shape{slots_, dim_});
  trunc_normal(base_, 0.02, rng);
  for (std::size_t b = 0; b < cfg.memory_write; ++b) {
    write_.emplace_back(store, "mem.write" + std::to_string(b), dim_, cfg.memory_heads,
                        cfg.memory_ff, cfg.ln_eps, rng);
  }
  for (std::size_t b = 0; b < cfg.memory_read; ++b) {
    read_.emplace_back(store, "mem.read" + std::to_string(b), dim_, cfg.memory_heads,
                       cfg.memory_ff, cfg.ln_eps, rng);
  }
}

LatentMemory PerceiverMemory::write(const Tensor& h, std::size_t n_train) const {
  if (h.rank() != 2 || h.size(1) != dim_) {
    throw DimensionError("memory expects [n, " + std::to_string(dim_) + "], got " +
                         shape_str(h.shape()));
  }
  if (n_train == 0 || n_train > h.size(0)) {
    throw PreconditionError("memory write needs 1 <= n_train <= n");
  }
  if (!enabled()) throw StateError("memory has no slots");
  const Tensor train = slice(h, 0, 0, n_train);
  Tensor l = base_;
  for (const auto& blk : write_) l = blk(l, train);
  return LatentMemory{l, true};
}

Tensor PerceiverMemory::read(const Tensor& h, const LatentMemory& mem) const {
  if (!mem.encoded || !mem.state.defined()) throw StateError("memory read before write");
  if (h.rank() != 2 || h.size(1) != dim_) {
    throw DimensionError("memory expects [n, " + std::to_string(dim_) + "], got " +
                         shape_str(h.shape()));
  }
  // Attention rows are computed independently, so rows never mix.
  Tensor r = h;
  for (const auto& blk : read_) r = blk(r, mem.state);
  return r;
}

Tensor PerceiverMemory::refine(const Tensor& h, std::size_t n_train,
                               LatentMemory* state_out) const {
  if (n_train == 0 || n_train > h.size(0)) {
    throw PreconditionError("refine needs 1 <= n_train <= n");
  }
  if (!enabled()) return h;
  LatentMemory mem = write(h, n_train);
  if (state_out) *state_out = mem;
  return read(h, mem);
}

}  // namespace tabmsp
