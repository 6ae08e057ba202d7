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


#include <cstddef>
#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "tabmsp/model.hpp"
#include "tabmsp/ops.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/row_interaction.hpp"
#include "tabmsp/scm_datagen.hpp"
#include "tabmsp/tensor.hpp"

namespace {

using tabmsp::Tensor;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  tabmsp::Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = tabmsp::normal(rng);
  return Tensor(tabmsp::Shape{rows, cols}, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tabmsp::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_SparseMask(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tabmsp::build_block_sparse_mask(length, 8, 8, 2, ++seed));
  }
}
BENCHMARK(BM_SparseMask)->RangeMultiplier(4)->Range(16, 1024);

tabmsp::TabularTask bench_task(std::size_t rows) {
  tabmsp::GeneratorConfig g;
  g.rows = rows;
  g.features_lo = g.features_hi = 8;
  g.classes_lo = g.classes_hi = 3;
  return tabmsp::generate_episode(g, 11);
}

void BM_DeskForward(benchmark::State& state) {
  const tabmsp::Model model(tabmsp::ModelConfig::preset("desk"));
  const auto task = bench_task(static_cast<std::size_t>(state.range(0)));
  const std::vector<std::size_t> codes(task.y.begin(), task.y.begin() + task.n_train);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(task.x, codes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DeskForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  tabmsp::Model model(tabmsp::ModelConfig::preset("desk"));
  const auto task = bench_task(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    model.parameters().zero_grad();
    tabmsp::Tape tape;
    tabmsp::TapeScope scope(tape);
    tape.backward(model.loss(task));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DeskTrainStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
