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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "tabmsp/errors.hpp"
#include "tabmsp/ops.hpp"
#include "test_support.hpp"

namespace tabmsp {
namespace {

using testing::gradient_error;
using testing::leaf;
using testing::probe_loss;
using testing::random_tensor;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- tensor

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.size(-1), 3u);
  EXPECT_EQ(t.size(0), 2u);
}

TEST(Tensor, CloneIsDeep) {
  Tensor a(Shape{2}, std::vector<double>{1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 7;
  EXPECT_EQ(a[0], 7);
  EXPECT_EQ(c[0], 1);
}

TEST(Tape, BackwardOfSumGivesOnes) {
  Rng rng(1);
  Tensor x = leaf({3, 4}, rng);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, SquareOfThreeHasGradientSix) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tape, BackwardWithoutForwardIsStateError) {
  Tensor x = Tensor::scalar(1.0);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(tape.backward(x), StateError);
  EXPECT_THROW(tape.backward(Tensor(Shape{2}, 1.0)), PreconditionError);
}

TEST(Tape, NoActiveTapeIsStateError) { EXPECT_THROW(backward(Tensor::scalar(1.0)), StateError); }

TEST(Tape, InputsPrecedeOutputs) {
  Rng rng(2);
  Tensor a = leaf({3, 3}, rng);
  Tensor b = leaf({3, 3}, rng);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum(gelu(matmul(add(a, b), softmax(b))));
  for (const auto& node : tape.nodes()) {
    for (const auto& in : node.inputs) EXPECT_LT(in->id, node.output->id) << node.op;
  }
  tape.backward(y);
}

TEST(Tape, ReplaysInExactReverseOrder) {
  Rng rng(3);
  Tensor a = leaf({2, 2}, rng);
  std::vector<std::string_view> forward_ops, backward_ops;
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum(scale(gelu(add(a, a)), 2.0));
  for (const auto& n : tape.nodes()) forward_ops.push_back(n.op);
  // wrap every closure to observe the replay order
  std::vector<TapeNode> nodes = tape.nodes();
  tape.clear();
  for (auto& n : nodes) {
    auto inner = n.backward;
    auto op = n.op;
    tape.record(op, n.inputs, Tensor::wrap(n.output), [inner, op, &backward_ops] {
      backward_ops.push_back(op);
      inner();
    });
  }
  tape.backward(y);
  std::reverse(backward_ops.begin(), backward_ops.end());
  EXPECT_EQ(forward_ops, backward_ops);
}

TEST(Tensor, NonFiniteForwardIsNumericError) {
  Tensor a(Shape{1}, std::vector<double>{1e308});
  EXPECT_THROW(scale(a, 10.0), NumericError);
}

// ---------------------------------------------------------------- matmul

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor m(Shape{2, 2}, std::vector<double>{1.5, -2, 3.25, 4});
  Tensor out = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], m[i]);
}

TEST(Matmul, RowTimesColumn) {
  Tensor a(Shape{1, 2}, std::vector<double>{1, 2});
  Tensor b(Shape{2, 1}, std::vector<double>{3, 4});
  EXPECT_EQ(matmul(a, b).item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(4);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 3 + j];
      EXPECT_NEAR(c[i * 3 + j], s, 1e-12);
    }
  }
}

TEST(Matmul, BatchedAndSharedOperands) {
  Rng rng(5);
  Tensor a = random_tensor({3, 2, 4}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor shared = matmul(a, w);
  Tensor q = random_tensor({2, 4}, rng);
  Tensor k = random_tensor({3, 4, 6}, rng);
  Tensor left = matmul(q, k);
  for (std::size_t bi = 0; bi < 3; ++bi) {
    Tensor ab(Shape{2, 4}, std::vector<double>(a.data().begin() + bi * 8, a.data().begin() + (bi + 1) * 8));
    Tensor one = matmul(ab, w);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(shared[bi * 10 + i], one[i], 1e-12);
    Tensor kb(Shape{4, 6}, std::vector<double>(k.data().begin() + bi * 24, k.data().begin() + (bi + 1) * 24));
    Tensor two = matmul(q, kb);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(left[bi * 12 + i], two[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor(Shape{2, 2, 3}), Tensor(Shape{3, 3, 1})), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  Tensor a = leaf({2, 3, 4}, rng);
  Tensor b = leaf({4, 2}, rng);
  Tensor c = leaf({2, 2, 3}, rng);
  EXPECT_LT(gradient_error([&] { return probe_loss(matmul(matmul(a, b), c)); }, {a, b, c}), 1e-6);
  Tensor q = leaf({3, 4}, rng);
  Tensor k = leaf({2, 4, 5}, rng);
  EXPECT_LT(gradient_error([&] { return probe_loss(matmul(q, k)); }, {q, k}), 1e-6);
}

// ------------------------------------------------------- shape plumbing

TEST(ShapeOps, GradientsOfPlumbing) {
  Rng rng(7);
  Tensor a = leaf({2, 3, 4}, rng);
  Tensor b = leaf({2, 1, 4}, rng);
  auto f = [&] {
    Tensor t = transpose(a);                                 // [2,4,3]
    Tensor p = permute(a, {2, 0, 1});                        // [4,2,3]
    Tensor r = reshape(p, Shape{8, 3});
    Tensor s = slice(a, 1, 1, 2);                            // [2,2,4]
    Tensor c = concat({s, b}, 1);                            // [2,3,4]
    Tensor e = expand(b, Shape{2, 3, 4});
    return add(add(probe_loss(t, 1), probe_loss(r, 2)), add(probe_loss(c, 3), probe_loss(mul(e, a), 4)));
  };
  EXPECT_LT(gradient_error(f, {a, b}), 1e-6);
}

TEST(ShapeOps, BroadcastingArithmetic) {
  Rng rng(8);
  Tensor a = leaf({3, 1, 4}, rng);
  Tensor b = leaf({2, 4}, rng);
  Tensor c = leaf({4}, rng);
  auto f = [&] { return probe_loss(sub(mul(add(a, b), c), scale(b, 0.5))); };
  EXPECT_LT(gradient_error(f, {a, b, c}), 1e-6);
  EXPECT_THROW(add(Tensor(Shape{3}), Tensor(Shape{4})), DimensionError);
}

TEST(ShapeOps, MeanAndSum) {
  Tensor a(Shape{2, 2}, std::vector<double>{1, 2, 3, 6});
  EXPECT_EQ(sum(a).item(), 12.0);
  EXPECT_EQ(mean(a).item(), 3.0);
}

// ------------------------------------------------------- softmax (masked)

TEST(SoftmaxMasked, EqualLogitsOpenMaskIsUniform) {
  Tensor logits(Shape{4, 4}, 0.3);
  Tensor p = softmax_masked(logits, AttentionMask::dense(4, 4));
  for (double v : p.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(SoftmaxMasked, SingleSurvivorTakesAllMass) {
  Tensor logits(Shape{1, 2}, std::vector<double>{1, 2});
  auto mask = AttentionMask::from_additive(1, 2, {0.0, kNegInf});
  Tensor p = softmax_masked(logits, mask);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 0.0);
}

TEST(SoftmaxMasked, MatchesExpNormalizeOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({3, 3}, rng, -3, 3);
    auto mask = AttentionMask::from_predicate(3, 3, [&](std::size_t i, std::size_t j) {
      return i == j || uniform(rng, 0, 1) < 0.5;
    });
    Tensor p = softmax_masked(logits, mask);
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < 3; ++j) z += mask.allowed(i, j) ? std::exp(logits[i * 3 + j]) : 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        const double want = mask.allowed(i, j) ? std::exp(logits[i * 3 + j]) / z : 0.0;
        EXPECT_NEAR(p[i * 3 + j], want, 1e-12);
        if (!mask.allowed(i, j)) EXPECT_EQ(p[i * 3 + j], 0.0);
      }
    }
  }
}

TEST(SoftmaxMasked, RowsAreStochasticProperty) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t l = testing::pick(rng, 1, 12), b = testing::pick(rng, 1, 3);
    Tensor logits = random_tensor({b, l, l}, rng, -20, 20);
    auto mask = AttentionMask::from_predicate(l, l, [&](std::size_t i, std::size_t j) {
      return i == j || uniform(rng, 0, 1) < 0.3;
    });
    Tensor p = softmax_masked(logits, mask);
    for (std::size_t r = 0; r < b * l; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < l; ++j) {
        s += p[r * l + j];
        if (!mask.allowed(r % l, j)) ASSERT_EQ(p[r * l + j], 0.0);
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(SoftmaxMasked, FullyMaskedRowIsRejected) {
  auto mask = AttentionMask::from_additive(2, 2, {0.0, 0.0, kNegInf, kNegInf});
  EXPECT_THROW(softmax_masked(Tensor(Shape{2, 2}), mask), PreconditionError);
  EXPECT_THROW(AttentionMask::from_additive(1, 2, {0.0, 1.0}), PreconditionError);
  EXPECT_THROW(softmax_masked(Tensor(Shape{2, 3}), AttentionMask::dense(2, 2)), DimensionError);
}

TEST(SoftmaxMasked, Gradient) {
  Rng rng(11);
  Tensor x = leaf({2, 4, 4}, rng, -2, 2);
  auto mask = AttentionMask::from_predicate(4, 4, [](std::size_t i, std::size_t j) {
    return i == j || (i + j) % 3 == 0;
  });
  EXPECT_LT(gradient_error([&] { return probe_loss(softmax_masked(x, mask)); }, {x}), 1e-6);
  EXPECT_LT(gradient_error([&] { return probe_loss(softmax(x)); }, {x}), 1e-6);
}

// ---------------------------------------------------------------- layer_norm

TEST(LayerNorm, ConstantVectorMapsToZero) {
  Tensor x(Shape{5}, 3.0);
  Tensor y = layer_norm(x, Tensor(Shape{5}, 1.0), Tensor(Shape{5}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyNormalizedPair) {
  Tensor x(Shape{2}, std::vector<double>{1, -1});
  Tensor y = layer_norm(x, Tensor(Shape{2}, 1.0), Tensor(Shape{2}, 0.0), 1e-300);
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], -1.0, 1e-15);
}

TEST(LayerNorm, MatchesMeanVarianceOracle) {
  Rng rng(12);
  Tensor x = random_tensor({6}, rng, -4, 4);
  Tensor y = layer_norm(x, Tensor(Shape{6}, 1.0), Tensor(Shape{6}, 0.0), 1e-5);
  double mu = 0, var = 0;
  for (double v : x.data()) mu += v / 6;
  for (double v : x.data()) var += (v - mu) * (v - mu) / 6;
  double ym = 0, yv = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(y[i], (x[i] - mu) / std::sqrt(var + 1e-5), 1e-12);
    ym += y[i] / 6;
  }
  for (double v : y.data()) yv += (v - ym) * (v - ym) / 6;
  EXPECT_NEAR(ym, 0.0, 1e-9);
  EXPECT_NEAR(yv, var / (var + 1e-5), 1e-9);
}

TEST(LayerNorm, EmptyAxisIsDimensionError) {
  EXPECT_THROW(layer_norm(Tensor(Shape{3, 0}), Tensor(Shape{0}), Tensor(Shape{0})), DimensionError);
}

TEST(LayerNorm, Gradient) {
  Rng rng(13);
  Tensor x = leaf({3, 5}, rng, -2, 2);
  Tensor g = leaf({5}, rng);
  Tensor b = leaf({5}, rng);
  EXPECT_LT(gradient_error([&] { return probe_loss(layer_norm(x, g, b)); }, {x, g, b}), 1e-6);
}

// ---------------------------------------------------------------- gelu

TEST(Gelu, KnownValues) {
  Tensor x(Shape{3}, std::vector<double>{0.0, 30.0, 1.0});
  Tensor y = gelu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 30.0, 1e-12);
  EXPECT_NEAR(y[2], 0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2)), 1e-12);
}

TEST(Gelu, Gradient) {
  Rng rng(14);
  Tensor x = leaf({10}, rng, -3, 3);
  EXPECT_LT(gradient_error([&] { return probe_loss(gelu(x)); }, {x}), 1e-6);
}

// ---------------------------------------------------------------- rope

TEST(Rope, PositionZeroIsUnchanged) {
  Rng rng(15);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = rope_apply(x, 10000.0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y[j], x[j]);
}

TEST(Rope, PreservesPairNorms) {
  Rng rng(16);
  Tensor x = random_tensor({2, 7, 6}, rng, -5, 5);
  Tensor y = rope_apply(x, 100000.0);
  for (std::size_t p = 0; p < x.numel() / 2; ++p) {
    const double a = std::hypot(x[2 * p], x[2 * p + 1]);
    const double b = std::hypot(y[2 * p], y[2 * p + 1]);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Rope, UnitFrequencyClosedForm) {
  // with d_k = 2 the only frequency is theta^0 = 1
  Tensor x(Shape{2, 2}, std::vector<double>{1, 0, 1, 0});
  Tensor y = rope_apply(x, 100000.0);
  EXPECT_NEAR(y[2], std::cos(1.0), 1e-15);
  EXPECT_NEAR(y[3], std::sin(1.0), 1e-15);
}

TEST(Rope, OddWidthIsDimensionError) {
  EXPECT_THROW(rope_apply(Tensor(Shape{2, 3}), 10.0), DimensionError);
}

TEST(Rope, Gradient) {
  Rng rng(17);
  Tensor x = leaf({2, 3, 4}, rng);
  EXPECT_LT(gradient_error([&] { return probe_loss(rope_apply(x, 100.0)); }, {x}), 1e-6);
}

// ---------------------------------------------------------------- losses

TEST(Loss, CrossEntropyMatchesNllOfTemperedSoftmax) {
  Rng rng(18);
  Tensor logits = leaf({5, 3}, rng, -2, 2);
  std::vector<std::size_t> y{0, 2, 1, 1, 0};
  const double tau = 0.9;
  const double a = cross_entropy(logits, y, tau).item();
  const double b = nll_from_probs(softmax(scale(logits, 1 / tau)), y).item();
  EXPECT_NEAR(a, b, 1e-12);
  EXPECT_LT(gradient_error([&] { return cross_entropy(logits, y, tau); }, {logits}), 1e-6);
  Tensor probs = leaf({5, 3}, rng, 0.1, 1.0);
  EXPECT_LT(gradient_error([&] { return nll_from_probs(probs, y); }, {probs}), 1e-6);
}

TEST(Loss, ClampingAtZeroProbability) {
  Tensor p(Shape{2, 2}, std::vector<double>{1, 0, 0.5, 0.5});
  std::vector<std::size_t> y{1, 0};
  std::size_t clamped = 0;
  const double l = nll_from_probs(p, y, &clamped).item();
  EXPECT_EQ(clamped, 1u);
  EXPECT_NEAR(l, (-std::log(1e-12) - std::log(0.5)) / 2, 1e-12);
}

// ---------------------------------------------------------------- determinism

TEST(Determinism, IdenticalInputsGiveIdenticalBits) {
  auto run = [] {
    Rng rng(19);
    Tensor a = leaf({4, 6}, rng);
    Tensor b = leaf({6, 6}, rng);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = sum(gelu(layer_norm(matmul(a, b), Tensor(Shape{6}, 1.0), Tensor(Shape{6}, 0.0))));
    tape.backward(y);
    std::vector<double> out{y.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace tabmsp
