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

#include "tabmsp/errors.hpp"
#include "tabmsp/eval_harness.hpp"
#include "tabmsp/rng.hpp"

namespace tabmsp {
namespace {

using Labels = std::vector<std::int64_t>;

TEST(Accuracy, HandCounts) {
  EXPECT_EQ(accuracy(Labels{1, 2, 3}, Labels{1, 2, 3}), 1.0);
  EXPECT_EQ(accuracy(Labels{0, 0}, Labels{1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(accuracy(Labels{0, 1, 1}, Labels{0, 0, 1}), 2.0 / 3.0);
  EXPECT_THROW(accuracy(Labels{}, Labels{}), PreconditionError);
  EXPECT_THROW(accuracy(Labels{1}, Labels{1, 2}), PreconditionError);
}

TEST(WeightedF1, ConfusionMatrixOracle) {
  // class 1: P = 1/2, R = 1 -> 2/3 (support 1); class 0: P = 1, R = 2/3 -> 4/5 (support 3)
  EXPECT_NEAR(weighted_f1(Labels{1, 1, 0, 0}, Labels{1, 0, 0, 0}), (2.0 / 3.0 + 3 * 0.8) / 4.0, 1e-15);
  EXPECT_EQ(weighted_f1(Labels{4, 2, 2}, Labels{4, 2, 2}), 1.0);
  EXPECT_EQ(weighted_f1(Labels{5, 5}, Labels{5, 5}), 1.0);
  EXPECT_EQ(weighted_f1(Labels{1, 1}, Labels{0, 0}), 0.0);
  EXPECT_THROW(weighted_f1(Labels{}, Labels{}), PreconditionError);
}

double macro_f1(const Labels& p, const Labels& t, std::int64_t k) {
  double s = 0.0;
  for (std::int64_t c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      tp += p[i] == c && t[i] == c;
      fp += p[i] == c && t[i] != c;
      fn += p[i] != c && t[i] == c;
    }
    s += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return s / static_cast<double>(k);
}

TEST(WeightedF1, EqualsMacroF1WhenBalancedProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t k = uniform_int(rng, 2, 6), per = uniform_int(rng, 1, 8);
    Labels truth, preds;
    for (std::int64_t c = 0; c < k; ++c) {
      for (std::int64_t r = 0; r < per; ++r) truth.push_back(c);
    }
    for (std::size_t i = 0; i < truth.size(); ++i) preds.push_back(uniform_int(rng, 0, k - 1));
    ASSERT_NEAR(weighted_f1(preds, truth), macro_f1(preds, truth, k), 1e-12);
    const double f = weighted_f1(preds, truth);
    ASSERT_GE(f, 0.0);
    ASSERT_LE(f, 1.0);
  }
}

TEST(WeightedF1, PredictedOnlyClassesCarryNoWeight) {
  // class 9 is absent from the truth; class 0 has P = 1, R = 1/2
  EXPECT_NEAR(weighted_f1(Labels{0, 9}, Labels{0, 0}), 2.0 / 3.0, 1e-15);
}

std::vector<EvalRecord> table(const std::vector<std::tuple<std::string, std::string, double>>& rows) {
  std::vector<EvalRecord> out;
  for (const auto& [d, m, a] : rows) out.push_back({d, m, a, 0.0});
  return out;
}

TEST(MeanRank, HandComputedExamples) {
  auto one = mean_rank(table({{"d1", "A", 0.3}, {"d2", "A", 0.9}}));
  EXPECT_EQ(one.at("A"), 1.0);
  auto two = mean_rank(table({{"d1", "A", 0.9}, {"d1", "B", 0.5}, {"d2", "A", 0.6}, {"d2", "B", 0.1}}));
  EXPECT_EQ(two.at("A"), 1.0);
  EXPECT_EQ(two.at("B"), 2.0);
  auto tie = mean_rank(table({{"d1", "A", 0.9}, {"d1", "B", 0.9}, {"d1", "C", 0.8},
                              {"d2", "A", 0.7}, {"d2", "B", 0.8}, {"d2", "C", 0.6}}));
  EXPECT_DOUBLE_EQ(tie.at("A"), 1.75);
  EXPECT_DOUBLE_EQ(tie.at("B"), 1.25);
  EXPECT_DOUBLE_EQ(tie.at("C"), 3.0);
}

TEST(MeanRank, CoverageAndDuplicates) {
  EXPECT_THROW(mean_rank(table({{"d1", "A", 0.9}, {"d1", "B", 0.5}, {"d2", "A", 0.6}})), CoverageError);
  EXPECT_THROW(mean_rank(table({{"d1", "A", 0.9}, {"d1", "A", 0.5}})), PreconditionError);
}

TEST(MeanRank, InvariantUnderMonotoneTransformProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EvalRecord> recs;
    const int datasets = static_cast<int>(uniform_int(rng, 1, 6)), models = static_cast<int>(uniform_int(rng, 1, 5));
    for (int d = 0; d < datasets; ++d) {
      for (int m = 0; m < models; ++m) {
        // coarse grid so ties are common
        recs.push_back({"d" + std::to_string(d), "m" + std::to_string(m),
                        static_cast<double>(uniform_int(rng, 0, 4)) / 4.0, 0.0});
      }
    }
    auto base = mean_rank(recs);
    for (auto& r : recs) r.accuracy = std::exp(3.0 * r.accuracy) - 7.0;
    auto moved = mean_rank(recs);
    double total = 0.0;
    for (const auto& [m, r] : base) {
      ASSERT_DOUBLE_EQ(moved.at(m), r);
      total += r;
    }
    ASSERT_NEAR(total, models * (models + 1) / 2.0, 1e-12);
  }
}

}  // namespace
}  // namespace tabmsp
