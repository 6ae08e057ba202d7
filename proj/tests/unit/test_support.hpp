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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tabmsp/nn.hpp"
#include "tabmsp/ops.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/row_interaction.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

inline Tensor leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = random_tensor(shape, rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(
      uniform_int(rng, static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline void set_identity(Linear& l) {
  auto w = l.weight.data();
  std::fill(w.begin(), w.end(), 0.0);
  const std::size_t n = l.weight.size(0);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  std::fill(l.bias.data().begin(), l.bias.data().end(), 0.0);
}

// Plain loops: y = x W + b
inline std::vector<double> affine(const std::vector<double>& x, std::size_t rows, const Linear& l) {
  const std::size_t in = l.weight.size(0), out = l.weight.size(1);
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = l.bias[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * l.weight[i * out + o];
      y[r * out + o] = s;
    }
  }
  return y;
}

// Independent per-head scaled dot-product transcription. `allowed`, when
// set, restricts which keys each query may see; `rope_theta` > 0 rotates
// queries and keys by position.
inline std::vector<double> dense_attention(
    const MultiHeadAttention& mha, const std::vector<double>& q, std::size_t lq,
    const std::vector<double>& kv, std::size_t lk, std::size_t heads,
    const std::function<bool(std::size_t, std::size_t)>& allowed = {}, double rope_theta = 0.0) {
  const std::size_t d = q.size() / lq, dk = d / heads;
  auto Q = affine(q, lq, mha.query_proj());
  auto K = affine(kv, lk, mha.key_proj());
  auto V = affine(kv, lk, mha.value_proj());
  if (rope_theta > 0.0) {
    auto rotate = [&](std::vector<double>& m, std::size_t len) {
      for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < dk / 2; ++i) {
            const double ang = static_cast<double>(pos) *
                               std::pow(rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(dk));
            double& x0 = m[pos * d + h * dk + 2 * i];
            double& x1 = m[pos * d + h * dk + 2 * i + 1];
            const double a = x0, b = x1;
            x0 = a * std::cos(ang) - b * std::sin(ang);
            x1 = a * std::sin(ang) + b * std::cos(ang);
          }
        }
      }
    };
    rotate(Q, lq);
    rotate(K, lk);
  }
  std::vector<double> ctx(lq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> s(lk, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < lk; ++j) {
        if (allowed && !allowed(i, j)) continue;
        double dot = 0;
        for (std::size_t t = 0; t < dk; ++t) dot += Q[i * d + h * dk + t] * K[j * d + h * dk + t];
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < lk; ++j) {
        s[j] = (allowed && !allowed(i, j)) ? 0.0 : std::exp(s[j] - mx);
        z += s[j];
      }
      for (std::size_t j = 0; j < lk; ++j) {
        for (std::size_t t = 0; t < dk; ++t) ctx[i * d + h * dk + t] += s[j] / z * V[j * d + h * dk + t];
      }
    }
  }
  return affine(ctx, lq, mha.out_proj());
}

inline std::vector<double> dense_attention(const MultiHeadAttention& mha, const Tensor& q,
                                           const Tensor& kv, std::size_t heads) {
  return dense_attention(mha, to_vec(q), q.size(0), to_vec(kv), kv.size(0), heads);
}

// Plain-loop layer norm over rows of width d.
inline std::vector<double> layer_norm_rows(const std::vector<double>& x, std::size_t d,
                                           const LayerNorm& ln) {
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < d; ++i) mu += x[r * d + i];
    mu /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) var += (x[r * d + i] - mu) * (x[r * d + i] - mu);
    var /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      y[r * d + i] = (x[r * d + i] - mu) / std::sqrt(var + ln.eps) * ln.gamma[i] + ln.beta[i];
    }
  }
  return y;
}

inline std::vector<double> plus(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline std::vector<double> gelu_mlp(const std::vector<double>& x, std::size_t rows,
                                    const FeedForward& ff) {
  auto h = affine(x, rows, ff.hidden);
  for (auto& v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return affine(h, rows, ff.out);
}

// Pre-norm block on one [L, d] sequence.
inline std::vector<double> block_oracle(const TransformerBlock& blk, const std::vector<double>& x,
                                        std::size_t len,
                                        const std::function<bool(std::size_t, std::size_t)>& allowed = {},
                                        double rope_theta = 0.0) {
  const std::size_t d = x.size() / len;
  auto n1 = layer_norm_rows(x, d, blk.attn_norm());
  auto h = plus(x, dense_attention(blk.attention(), n1, len, n1, len, blk.attention().heads(), allowed,
                                   rope_theta));
  return plus(h, gelu_mlp(layer_norm_rows(h, d, blk.ff_norm()), len, blk.feed_forward()));
}

// Single-head PMA on one row's [m, d] features.
inline std::vector<double> pma_oracle(const RowInteraction::Scale& sc, const std::vector<double>& feats,
                               std::size_t m, std::size_t k, std::size_t m_valid, std::size_t d) {
  Tensor pe = sinusoidal_positions(k, d);
  auto keys = affine(feats, m, sc.key), vals = affine(feats, m, sc.value);
  std::vector<double> out(k * d, 0.0);
  for (std::size_t g = 0; g < k; ++g) {
    std::vector<double> s(m_valid);
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < m_valid; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += (sc.seeds[g * d + t] + pe[g * d + t]) * keys[j * d + t];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < m_valid; ++j) {
      for (std::size_t t = 0; t < d; ++t) out[g * d + t] += s[j] / z * vals[j * d + t];
    }
  }
  return out;
}

// Five-point central differences of f with respect to every entry of each
// input, compared against the taped gradient. Returns the worst relative
// error, using max(|analytic|, |numeric|, floor) as the scale.
inline double gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                             double h = 1e-3, double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(f());
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double keep = t[i];
      auto at = [&](double delta) {
        t[i] = keep + delta;
        return f().item();
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      t[i] = keep;
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

// Deterministic weighted reduction that turns any tensor into a scalar
// loss with a non-trivial gradient.
inline Tensor probe_loss(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

}  // namespace tabmsp::testing
