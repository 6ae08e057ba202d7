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

#include "tabmsp/nn.hpp"

#include <cmath>

#include "tabmsp/errors.hpp"

namespace tabmsp {

Tensor ParameterStore::add(const std::string& name, Shape shape) {
  for (const auto& [existing, _] : items_) {
    if (existing == name) throw PreconditionError("duplicate parameter name " + name);
  }
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& [key, t] : items_) {
    if (key == name) return t;
  }
  return {};
}

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

void xavier_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.data()) v = dist(rng);
}

void trunc_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * stddev);
    v = x;
  }
}

Tensor dropout(const Tensor& x, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw PreconditionError("dropout rate must be below 1");
  Tensor keep(x.shape());
  std::bernoulli_distribution coin(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (auto& v : keep.data()) v = coin(*rng) ? s : 0.0;
  return mul(x, keep);
}

Tensor sinusoidal_positions(std::size_t positions, std::size_t dim) {
  Tensor pe(Shape{positions, dim});
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng)
    : weight(store.add(name + ".weight", Shape{in, out})),
      bias(store.add(name + ".bias", Shape{out})) {
  xavier_uniform(weight, in, out, rng);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.size(-1) != weight.size(0)) {
    throw DimensionError("linear layer expects last extent " + std::to_string(weight.size(0)) +
                         ", got " + shape_str(x.shape()));
  }
  if (x.rank() == 1) {
    return reshape(add(matmul(reshape(x, Shape{1, x.numel()}), weight), bias),
                   Shape{weight.size(1)});
  }
  return add(matmul(x, weight), bias);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim, double e)
    : gamma(store.add(name + ".gamma", Shape{dim})),
      beta(store.add(name + ".beta", Shape{dim})),
      eps(e) {
  for (auto& v : gamma.data()) v = 1.0;
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t in,
                         std::size_t width, std::size_t out_dim, Rng& rng)
    : hidden(store, name + ".hidden", in, width, rng), out(store, name + ".out", width, out_dim, rng) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t dim, std::size_t heads, Rng& rng)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("model dim " + std::to_string(dim) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  q_ = Linear(store, name + ".q", dim, dim, rng);
  k_ = Linear(store, name + ".k", dim, dim, rng);
  v_ = Linear(store, name + ".v", dim, dim, rng);
  o_ = Linear(store, name + ".o", dim, dim, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& kv,
                                      const AttentionOptions& opts) const {
  if (query.rank() < 2 || kv.rank() < 2 || query.size(-1) != dim_ || kv.size(-1) != dim_) {
    throw DimensionError("attention expects [..., L, " + std::to_string(dim_) + "] inputs, got " +
                         shape_str(query.shape()) + " and " + shape_str(kv.shape()));
  }
  Tensor q = q_(query);
  Tensor k = k_(kv);
  Tensor v = v_(kv);
  Shape qbatch(q.shape().begin(), q.shape().end() - 2);
  Shape kbatch(k.shape().begin(), k.shape().end() - 2);
  if (qbatch != kbatch) {
    if (qbatch.empty()) {
      Shape s = kbatch;
      s.push_back(q.size(-2));
      s.push_back(dim_);
      q = expand(q, s);
      qbatch = kbatch;
    } else if (kbatch.empty()) {
      Shape s = qbatch;
      s.push_back(k.size(-2));
      s.push_back(dim_);
      k = expand(k, s);
      v = expand(v, s);
    } else {
      throw DimensionError("attention batch extents differ: " + shape_str(query.shape()) +
                           " vs " + shape_str(kv.shape()));
    }
  }
  const std::size_t batch = shape_numel(qbatch);
  const std::size_t lq = q.size(-2), lk = k.size(-2), dk = dim_ / heads_;
  auto split = [&](const Tensor& t, std::size_t len) {
    return permute(reshape(t, Shape{batch, len, heads_, dk}), {0, 2, 1, 3});
  };
  Tensor qh = split(q, lq);
  Tensor kh = split(k, lk);
  Tensor vh = split(v, lk);
  if (opts.rope_theta > 0.0) {
    qh = rope_apply(qh, opts.rope_theta);
    kh = rope_apply(kh, opts.rope_theta);
  }
  qh = scale(qh, 1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor scores = matmul(qh, transpose(kh));
  Tensor probs = opts.mask ? softmax_masked(scores, *opts.mask) : softmax(scores);
  if (opts.weights_out) *opts.weights_out = probs;
  Tensor ctx = permute(matmul(probs, vh), {0, 2, 1, 3});
  Shape out_shape = qbatch;
  out_shape.push_back(lq);
  out_shape.push_back(dim_);
  return o_(reshape(ctx, out_shape));
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name,
                                   std::size_t dim, std::size_t heads, std::size_t ff_width,
                                   double eps, Rng& rng)
    : ln_attn_(store, name + ".ln_attn", dim, eps),
      ln_ff_(store, name + ".ln_ff", dim, eps),
      attn_(store, name + ".attn", dim, heads, rng),
      ff_(store, name + ".ff", dim, ff_width, dim, rng) {}

Tensor TransformerBlock::operator()(const Tensor& x, const AttentionOptions& opts) const {
  const Tensor normed = ln_attn_(x);
  Tensor h = add(x, attn_(normed, normed, opts));
  return add(h, ff_(ln_ff_(h)));
}

}  // namespace tabmsp
