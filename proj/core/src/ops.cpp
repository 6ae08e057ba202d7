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

#include "tabmsp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

using ImplPtr = std::shared_ptr<TensorImpl>;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Registers `fn` on the active tape and marks `out` as requiring grad.
template <class Fn>
void record(std::string_view op, std::vector<ImplPtr> inputs, Tensor& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape::active()->record(op, std::move(inputs), out, std::forward<Fn>(fn));
}

// Gradient buffer of `t`, allocated on first use; null when `t` does not
// take gradients.
double* grad_buffer(const ImplPtr& t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad.data();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Maps each flat index of `out` onto the flat index of `src` broadcast to it.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> src_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t oi = i + (r - src.size());
    src_stride[oi] = src[i] == 1 ? 0 : stride;
    stride *= src[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++counter[ax] < out[ax]) {
        offset += src_stride[ax];
        break;
      }
      offset -= src_stride[ax] * (counter[ax] - 1);
      counter[ax] = 0;
    }
  }
  return index;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  const std::size_t n = out.numel();
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ai, bi;
  if (!same) {
    ai = a.shape() == out_shape ? std::vector<std::size_t>{} : broadcast_index(a.shape(), out_shape);
    bi = b.shape() == out_shape ? std::vector<std::size_t>{} : broadcast_index(b.shape(), out_shape);
  }
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  auto ia = [&](std::size_t i) { return ai.empty() ? i : ai[i]; };
  auto ib = [&](std::size_t i) { return bi.empty() ? i : bi[i]; };
  switch (kind) {
    case BinaryKind::kAdd:
      if (same) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[ia(i)] + pb[ib(i)];
      }
      break;
    case BinaryKind::kSub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[ia(i)] - pb[ib(i)];
      break;
    case BinaryKind::kMul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[ia(i)] * pb[ib(i)];
      break;
  }
  check_finite(out, name);
  if (wants_grad({&a, &b})) {
    record(name, {a.impl(), b.impl()}, out,
           [ap = a.impl(), bp = b.impl(), op = out.impl(), ai = std::move(ai),
            bi = std::move(bi), kind]() {
             const double* g = op->grad.data();
             const std::size_t n = op->data.size();
             auto ia = [&](std::size_t i) { return ai.empty() ? i : ai[i]; };
             auto ib = [&](std::size_t i) { return bi.empty() ? i : bi[i]; };
             if (double* ga = grad_buffer(ap)) {
               if (kind == BinaryKind::kMul) {
                 for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i] * bp->data[ib(i)];
               } else {
                 for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i];
               }
             }
             if (double* gb = grad_buffer(bp)) {
               if (kind == BinaryKind::kMul) {
                 for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i] * ap->data[ia(i)];
               } else if (kind == BinaryKind::kSub) {
                 for (std::size_t i = 0; i < n; ++i) gb[ib(i)] -= g[i];
               } else {
                 for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i];
               }
             }
           });
  }
  return out;
}

// Copies src (shape `in_shape`) permuted by `axes` into dst; with
// `accumulate` the inverse direction is used to scatter-add a gradient.
void permute_copy(const double* src, const Shape& in_shape, const std::vector<std::size_t>& axes,
                  double* dst, bool scatter_add) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  if (n == 0) return;
  if (r == 0) {
    if (scatter_add) {
      dst[0] += src[0];
    } else {
      dst[0] = src[0];
    }
    return;
  }
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  const std::size_t last = out_shape[r - 1];
  const std::size_t last_step = step[r - 1];
  for (std::size_t flat = 0; flat < n; flat += last) {
    if (scatter_add) {
      for (std::size_t k = 0; k < last; ++k) dst[offset + k * last_step] += src[flat + k];
    } else {
      for (std::size_t k = 0; k < last; ++k) dst[flat + k] = src[offset + k * last_step];
    }
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) {
        offset += step[ax];
        break;
      }
      offset -= step[ax] * (counter[ax] - 1);
      counter[ax] = 0;
    }
  }
}

}  // namespace

namespace kernels {

void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate) {
  for (std::size_t i = 0; i < p; ++i) {
    double* __restrict ci = c + i * r;
    if (!accumulate) std::fill(ci, ci + r, 0.0);
    const double* ai = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* __restrict bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate) {
  std::vector<double> bt(q * r);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t k = 0; k < q; ++k) bt[k * r + j] = b[j * q + k];
  }
  gemm_nn(a, bt.data(), c, p, q, r, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r, bool accumulate) {
  if (!accumulate) std::fill(c, c + p * r, 0.0);
  for (std::size_t k = 0; k < q; ++k) {
    const double* ak = a + k * p;
    const double* __restrict bk = b + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* __restrict ci = c + i * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aki * bk[j];
    }
  }
}

}  // namespace kernels

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  const auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * factor;
  check_finite(out, "scale");
  if (wants_grad({&a})) {
    record("scale", {a.impl()}, out, [ap = a.impl(), op = out.impl(), factor]() {
      if (double* ga = grad_buffer(ap)) {
        const auto& g = op->grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t p = a.size(-2), q = a.size(-1), r = b.size(-1);
  if (b.size(-2) != q) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  enum class Mode { kPaired, kSharedB, kSharedA } mode;
  Shape batch;
  if (abatch == bbatch) {
    mode = Mode::kPaired;
    batch = abatch;
  } else if (bbatch.empty()) {
    mode = Mode::kSharedB;
    batch = abatch;
  } else if (abatch.empty()) {
    mode = Mode::kSharedA;
    batch = bbatch;
  } else {
    throw DimensionError("matmul batch extents not broadcastable: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t nb = shape_numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  Tensor out(out_shape);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data().data();
  switch (mode) {
    case Mode::kPaired:
      for (std::size_t i = 0; i < nb; ++i) {
        kernels::gemm_nn(pa + i * p * q, pb + i * q * r, pc + i * p * r, p, q, r, false);
      }
      break;
    case Mode::kSharedB:
      kernels::gemm_nn(pa, pb, pc, nb * p, q, r, false);
      break;
    case Mode::kSharedA:
      for (std::size_t i = 0; i < nb; ++i) {
        kernels::gemm_nn(pa, pb + i * q * r, pc + i * p * r, p, q, r, false);
      }
      break;
  }
  check_finite(out, "matmul");
  if (wants_grad({&a, &b})) {
    record("matmul", {a.impl(), b.impl()}, out,
           [ap = a.impl(), bp = b.impl(), op = out.impl(), mode, nb, p, q, r]() {
             const double* g = op->grad.data();
             const double* av = ap->data.data();
             const double* bv = bp->data.data();
             if (double* ga = grad_buffer(ap)) {
               switch (mode) {
                 case Mode::kPaired:
                   for (std::size_t i = 0; i < nb; ++i) {
                     kernels::gemm_nt(g + i * p * r, bv + i * q * r, ga + i * p * q, p, r, q, true);
                   }
                   break;
                 case Mode::kSharedB:
                   kernels::gemm_nt(g, bv, ga, nb * p, r, q, true);
                   break;
                 case Mode::kSharedA:
                   for (std::size_t i = 0; i < nb; ++i) {
                     kernels::gemm_nt(g + i * p * r, bv + i * q * r, ga, p, r, q, true);
                   }
                   break;
               }
             }
             if (double* gb = grad_buffer(bp)) {
               switch (mode) {
                 case Mode::kPaired:
                   for (std::size_t i = 0; i < nb; ++i) {
                     kernels::gemm_tn(av + i * p * q, g + i * p * r, gb + i * q * r, q, p, r, true);
                   }
                   break;
                 case Mode::kSharedB:
                   kernels::gemm_tn(av, g, gb, q, nb * p, r, true);
                   break;
                 case Mode::kSharedA:
                   for (std::size_t i = 0; i < nb; ++i) {
                     kernels::gemm_tn(av, g + i * p * r, gb + i * q * r, q, p, r, true);
                   }
                   break;
               }
             }
           });
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw DimensionError("permute axes do not match rank");
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute axes are not a permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
  Tensor out(out_shape);
  permute_copy(a.data().data(), a.shape(), axes, out.data().data(), false);
  if (wants_grad({&a})) {
    record("permute", {a.impl()}, out, [ap = a.impl(), op = out.impl(), axes]() {
      if (double* ga = grad_buffer(ap)) {
        permute_copy(op->grad.data(), ap->shape, axes, ga, true);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (wants_grad({&a})) {
    record("reshape", {a.impl()}, out, [ap = a.impl(), op = out.impl()]() {
      if (double* ga = grad_buffer(ap)) {
        const auto& g = op->grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  const std::size_t mid = a.shape()[ax];
  if (start + length > mid) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds extent " +
                         std::to_string(mid));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= a.shape()[i];
  for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  Tensor out(out_shape);
  const double* src = a.data().data();
  double* dst = out.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * mid + start) * inner, length * inner, dst + o * length * inner);
  }
  if (wants_grad({&a})) {
    record("slice", {a.impl()}, out,
           [ap = a.impl(), op = out.impl(), outer, inner, mid, start, length]() {
             if (double* ga = grad_buffer(ap)) {
               const double* g = op->grad.data();
               for (std::size_t o = 0; o < outer; ++o) {
                 double* d = ga + (o * mid + start) * inner;
                 const double* s = g + o * length * inner;
                 for (std::size_t i = 0; i < length * inner; ++i) d[i] += s[i];
               }
             }
           });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t rank = parts.front().rank();
  const std::size_t ax = normalize_axis(axis, rank);
  Shape out_shape = parts.front().shape();
  out_shape[ax] = 0;
  for (const auto& t : parts) {
    if (t.rank() != rank) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != ax && t.shape()[i] != parts.front().shape()[i]) {
        throw DimensionError("concat extent mismatch: " + shape_str(t.shape()) + " vs " +
                             shape_str(parts.front().shape()));
      }
    }
    out_shape[ax] += t.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < rank; ++i) inner *= out_shape[i];
  const std::size_t total = out_shape[ax];
  Tensor out(out_shape);
  double* dst = out.data().data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    const std::size_t len = t.shape()[ax];
    const double* src = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * len * inner, len * inner, dst + (o * total + off) * inner);
    }
    offsets.push_back(off);
    off += len;
  }
  bool any = false;
  for (const auto& t : parts) any = any || t.requires_grad();
  if (any && Tape::active() != nullptr) {
    std::vector<ImplPtr> inputs;
    for (const auto& t : parts) inputs.push_back(t.impl());
    record("concat", inputs, out,
           [inputs, op = out.impl(), offsets, outer, inner, total, ax]() {
             const double* g = op->grad.data();
             for (std::size_t k = 0; k < inputs.size(); ++k) {
               double* gi = grad_buffer(inputs[k]);
               if (gi == nullptr) continue;
               const std::size_t len = inputs[k]->shape[ax];
               for (std::size_t o = 0; o < outer; ++o) {
                 const double* s = g + (o * total + offsets[k]) * inner;
                 double* d = gi + o * len * inner;
                 for (std::size_t i = 0; i < len * inner; ++i) d[i] += s[i];
               }
             }
           });
  }
  return out;
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (broadcast_shape(a.shape(), shape) != shape) {
    throw DimensionError("cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto index = broadcast_index(a.shape(), shape);
  Tensor out(shape);
  const double* src = a.data().data();
  double* dst = out.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) dst[i] = src[index[i]];
  if (wants_grad({&a})) {
    record("expand", {a.impl()}, out, [ap = a.impl(), op = out.impl(), index = std::move(index)]() {
      if (double* ga = grad_buffer(ap)) {
        const double* g = op->grad.data();
        for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += g[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (wants_grad({&a})) {
    record("sum", {a.impl()}, out, [ap = a.impl(), op = out.impl()]() {
      if (double* ga = grad_buffer(ap)) {
        const double g = op->grad[0];
        for (std::size_t i = 0; i < ap->data.size(); ++i) ga[i] += g;
      }
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = 0.5 * src[i] * (1.0 + std::erf(src[i] * kInvSqrt2));
  }
  check_finite(out, "gelu");
  if (wants_grad({&x})) {
    record("gelu", {x.impl()}, out, [xp = x.impl(), op = out.impl()]() {
      if (double* gx = grad_buffer(xp)) {
        const auto& g = op->grad;
        const auto& v = xp->data;
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(v[i] * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v[i] * v[i]);
          gx[i] += g[i] * (cdf + v[i] * pdf);
        }
      }
    });
  }
  return out;
}

namespace {

void softmax_backward_rows(const std::vector<double>& probs, const double* g, double* gx,
                           std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* p = probs.data() + i * cols;
    const double* gi = g + i * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += p[j] * gi[j];
    double* out = gx + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += p[j] * (gi[j] - dot);
  }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() < 1 || logits.size(-1) == 0) throw DimensionError("softmax over empty axis");
  const std::size_t cols = logits.size(-1);
  const std::size_t rows = logits.numel() / cols;
  Tensor out(logits.shape());
  const double* src = logits.data().data();
  double* dst = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = src + i * cols;
    double* y = dst + i * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  check_finite(out, "softmax");
  if (wants_grad({&logits})) {
    record("softmax", {logits.impl()}, out, [lp = logits.impl(), op = out.impl(), rows, cols]() {
      if (double* gx = grad_buffer(lp)) softmax_backward_rows(op->data, op->grad.data(), gx, rows, cols);
    });
  }
  return out;
}

Tensor softmax_masked(const Tensor& logits, const AttentionMask& mask) {
  if (logits.rank() < 2 || logits.size(-2) != mask.rows() || logits.size(-1) != mask.cols()) {
    throw DimensionError("mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " does not fit logits " +
                         shape_str(logits.shape()));
  }
  if (!mask.every_row_has_support()) {
    throw PreconditionError("softmax_masked: a mask row blocks every position");
  }
  const std::size_t lq = mask.rows(), lk = mask.cols();
  const std::size_t rows = logits.numel() / lk;
  Tensor out(logits.shape());
  const double* src = logits.data().data();
  double* dst = out.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const auto idx = mask.row_indices(i % lq);
    const double* x = src + i * lk;
    double* y = dst + i * lk;
    double mx = -std::numeric_limits<double>::infinity();
    for (auto j : idx) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (auto j : idx) z += (y[j] = std::exp(x[j] - mx));
    const double inv = 1.0 / z;
    for (auto j : idx) y[j] *= inv;
  }
  check_finite(out, "softmax_masked");
  if (wants_grad({&logits})) {
    record("softmax_masked", {logits.impl()}, out,
           [lp = logits.impl(), op = out.impl(), mask, rows, lq, lk]() {
             double* gx = grad_buffer(lp);
             if (gx == nullptr) return;
             const double* g = op->grad.data();
             const double* p = op->data.data();
             for (std::size_t i = 0; i < rows; ++i) {
               const auto idx = mask.row_indices(i % lq);
               const std::size_t base = i * lk;
               double dot = 0.0;
               for (auto j : idx) dot += p[base + j] * g[base + j];
               for (auto j : idx) gx[base + j] += p[base + j] * (g[base + j] - dot);
             }
           });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1 || x.size(-1) == 0) throw DimensionError("layer_norm over an empty axis");
  const std::size_t d = x.size(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(d) +
                         " entries");
  }
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const double* src = x.data().data();
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  double* dst = out.data().data();
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = src + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu *= inv_d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var *= inv_d;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mu) * rs;
      xhat[i * d + j] = h;
      dst[i * d + j] = gm[j] * h + bt[j];
    }
  }
  check_finite(out, "layer_norm");
  if (wants_grad({&x, &gamma, &beta})) {
    record("layer_norm", {x.impl(), gamma.impl(), beta.impl()}, out,
           [xp = x.impl(), gp = gamma.impl(), bp = beta.impl(), op = out.impl(),
            xhat = std::move(xhat), rstd = std::move(rstd), rows, d, inv_d]() {
             const double* g = op->grad.data();
             double* gx = grad_buffer(xp);
             double* gg = grad_buffer(gp);
             double* gb = grad_buffer(bp);
             const double* gm = gp->data.data();
             for (std::size_t i = 0; i < rows; ++i) {
               const double* gi = g + i * d;
               const double* hi = xhat.data() + i * d;
               if (gg != nullptr || gb != nullptr) {
                 for (std::size_t j = 0; j < d; ++j) {
                   if (gg) gg[j] += gi[j] * hi[j];
                   if (gb) gb[j] += gi[j];
                 }
               }
               if (gx != nullptr) {
                 double mean_dh = 0.0, mean_dh_h = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = gi[j] * gm[j];
                   mean_dh += dh;
                   mean_dh_h += dh * hi[j];
                 }
                 mean_dh *= inv_d;
                 mean_dh_h *= inv_d;
                 double* gxi = gx + i * d;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = gi[j] * gm[j];
                   gxi[j] += rstd[i] * (dh - mean_dh - hi[j] * mean_dh_h);
                 }
               }
             }
           });
  }
  return out;
}

Tensor rope_apply(const Tensor& x, double theta) {
  if (x.rank() < 2) throw DimensionError("rope_apply needs [..., L, d_k]");
  const std::size_t len = x.size(-2), dk = x.size(-1);
  if (dk % 2 != 0) throw DimensionError("rope_apply needs an even head dimension, got " +
                                        std::to_string(dk));
  const std::size_t half = dk / 2;
  std::vector<double> cs(len * half), sn(len * half);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(dk));
      const double ang = static_cast<double>(pos) * freq;
      cs[pos * half + i] = std::cos(ang);
      sn[pos * half + i] = std::sin(ang);
    }
  }
  Tensor out(x.shape());
  const double* src = x.data().data();
  double* dst = out.data().data();
  const std::size_t blocks = x.numel() / (len * dk);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t pos = 0; pos < len; ++pos) {
      const double* xi = src + (b * len + pos) * dk;
      double* yi = dst + (b * len + pos) * dk;
      for (std::size_t i = 0; i < half; ++i) {
        const double c = cs[pos * half + i], s = sn[pos * half + i];
        yi[2 * i] = xi[2 * i] * c - xi[2 * i + 1] * s;
        yi[2 * i + 1] = xi[2 * i] * s + xi[2 * i + 1] * c;
      }
    }
  }
  check_finite(out, "rope_apply");
  if (wants_grad({&x})) {
    record("rope_apply", {x.impl()}, out,
           [xp = x.impl(), op = out.impl(), cs = std::move(cs), sn = std::move(sn), blocks, len,
            dk, half]() {
             double* gx = grad_buffer(xp);
             if (gx == nullptr) return;
             const double* g = op->grad.data();
             for (std::size_t b = 0; b < blocks; ++b) {
               for (std::size_t pos = 0; pos < len; ++pos) {
                 const double* gi = g + (b * len + pos) * dk;
                 double* gxi = gx + (b * len + pos) * dk;
                 for (std::size_t i = 0; i < half; ++i) {
                   const double c = cs[pos * half + i], s = sn[pos * half + i];
                   gxi[2 * i] += gi[2 * i] * c + gi[2 * i + 1] * s;
                   gxi[2 * i + 1] += -gi[2 * i] * s + gi[2 * i + 1] * c;
                 }
               }
             }
           });
  }
  return out;
}

Tensor nll_from_probs(const Tensor& probs, std::span<const std::size_t> targets,
                      std::size_t* clamped) {
  constexpr double kFloor = 1e-12;
  if (probs.rank() != 2 || probs.size(0) != targets.size() || targets.empty()) {
    throw DimensionError("nll_from_probs needs [N, K] probabilities and N targets");
  }
  const std::size_t n = probs.size(0), k = probs.size(1);
  double total = 0.0;
  std::size_t n_clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) throw DataError("target class outside probability width");
    const double p = probs[i * k + targets[i]];
    if (p < kFloor) ++n_clamped;
    total -= std::log(std::max(p, kFloor));
  }
  if (clamped) *clamped = n_clamped;
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  check_finite(out, "nll_from_probs");
  if (wants_grad({&probs})) {
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    record("nll_from_probs", {probs.impl()}, out, [pp = probs.impl(), op = out.impl(), tgt, n, k]() {
      double* gp = grad_buffer(pp);
      if (gp == nullptr) return;
      const double g = op->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double p = pp->data[i * k + tgt[i]];
        if (p >= kFloor) gp[i * k + tgt[i]] -= g / p;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     double temperature) {
  if (logits.rank() != 2 || logits.size(0) != targets.size() || targets.empty()) {
    throw DimensionError("cross_entropy needs [N, K] logits and N targets");
  }
  if (!(temperature > 0.0)) throw PreconditionError("temperature must be positive");
  const std::size_t n = logits.size(0), k = logits.size(1);
  std::vector<double> probs(n * k);
  double total = 0.0;
  const double inv_t = 1.0 / temperature;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) throw DataError("target class outside logit width");
    const double* z = logits.data().data() + i * k;
    double mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (probs[i * k + j] = std::exp((z[j] - mx) * inv_t));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += std::log(s) - (z[targets[i]] - mx) * inv_t;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  check_finite(out, "cross_entropy");
  if (wants_grad({&logits})) {
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    record("cross_entropy", {logits.impl()}, out,
           [lp = logits.impl(), op = out.impl(), probs = std::move(probs), tgt, n, k, inv_t]() {
             double* gl = grad_buffer(lp);
             if (gl == nullptr) return;
             const double g = op->grad[0] * inv_t / static_cast<double>(n);
             for (std::size_t i = 0; i < n; ++i) {
               for (std::size_t j = 0; j < k; ++j) {
                 gl[i * k + j] += g * (probs[i * k + j] - (j == tgt[i] ? 1.0 : 0.0));
               }
             }
           });
  }
  return out;
}

}  // namespace tabmsp
