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

// Differentiable primitives. Every op checks its output for NaN/Inf and
// throws NumericError; every op records itself on the active Tape when at
// least one input requires grad.

#include <cstddef>
#include <span>
#include <vector>

#include "tabmsp/attention_mask.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// a[..., p, q] x b[..., q, r]. Batch extents must be equal, or one operand
// must be a plain matrix shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Broadcasts `a` to `shape` (numpy rules); the gradient is reduced back.
Tensor expand(const Tensor& a, const Shape& shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// x * Phi(x) with the exact Gaussian CDF.
Tensor gelu(const Tensor& x);

// Softmax over the last axis.
Tensor softmax(const Tensor& logits);

// Softmax of logits[..., Lq, Lk] + mask over the last axis. Masked entries
// come out exactly 0. Throws PreconditionError on a fully masked row.
Tensor softmax_masked(const Tensor& logits, const AttentionMask& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rotates consecutive coordinate pairs (2i, 2i+1) of x[..., L, dk] by
// position * theta^(-2i/dk), position being the index along axis -2.
Tensor rope_apply(const Tensor& x, double theta);

// Mean of -log(max(p[i, target_i], 1e-12)). `clamped`, when given, receives
// the number of clamped positions.
Tensor nll_from_probs(const Tensor& probs, std::span<const std::size_t> targets,
                      std::size_t* clamped = nullptr);

// Mean cross-entropy of softmax(logits / temperature) against targets.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     double temperature = 1.0);

namespace kernels {

// C[p,r] (+)= A[p,q] B[q,r]
void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate);
// C[p,r] (+)= A[p,q] B[r,q]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate);
// C[p,r] (+)= A[q,p]^T B[q,r]
void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate);

}  // namespace kernels

}  // namespace tabmsp
