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

#include "tabmsp/eval_harness.hpp"

#include <algorithm>
#include <set>

#include "tabmsp/errors.hpp"

namespace tabmsp {

namespace {

void check_lengths(std::span<const std::int64_t> preds, std::span<const std::int64_t> truth) {
  if (preds.empty() || truth.empty()) throw PreconditionError("metrics need at least one sample");
  if (preds.size() != truth.size()) {
    throw PreconditionError("prediction and truth lengths differ (" +
                            std::to_string(preds.size()) + " vs " +
                            std::to_string(truth.size()) + ")");
  }
}

}  // namespace

double accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> truth) {
  check_lengths(preds, truth);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double weighted_f1(std::span<const std::int64_t> preds, std::span<const std::int64_t> truth) {
  check_lengths(preds, truth);
  std::map<std::int64_t, std::size_t> tp, fp, fn, support;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++support[truth[i]];
    if (preds[i] == truth[i]) {
      ++tp[preds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0.0;
  for (const auto& [cls, sup] : support) {
    const double t = static_cast<double>(tp[cls]);
    const double denom = 2.0 * t + static_cast<double>(fp[cls]) + static_cast<double>(fn[cls]);
    const double f1 = denom > 0.0 ? 2.0 * t / denom : 0.0;
    total += f1 * static_cast<double>(sup);
  }
  return total / static_cast<double>(preds.size());
}

std::map<std::string, double> mean_rank(const std::vector<EvalRecord>& records) {
  std::set<std::string> models, datasets;
  std::map<std::string, std::map<std::string, double>> by_dataset;
  for (const auto& r : records) {
    models.insert(r.model);
    datasets.insert(r.dataset);
    if (!by_dataset[r.dataset].emplace(r.model, r.accuracy).second) {
      throw PreconditionError("duplicate record for (" + r.model + ", " + r.dataset + ")");
    }
  }
  std::map<std::string, double> sums;
  for (const auto& ds : datasets) {
    const auto& accs = by_dataset[ds];
    for (const auto& m : models) {
      if (!accs.count(m)) throw CoverageError("model '" + m + "' has no result on '" + ds + "'");
    }
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [m, a] : accs) order.emplace_back(a, m);
    std::sort(order.begin(), order.end(),
              [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j < order.size() && order[j].first == order[i].first) ++j;
      const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
      for (std::size_t t = i; t < j; ++t) sums[order[t].second] += rank;
      i = j;
    }
  }
  for (auto& [m, s] : sums) s /= static_cast<double>(datasets.size());
  return sums;
}

}  // namespace tabmsp
