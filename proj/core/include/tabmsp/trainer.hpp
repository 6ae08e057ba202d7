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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tabmsp/checkpoint.hpp"
#include "tabmsp/model.hpp"
#include "tabmsp/nn.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/scm_datagen.hpp"
#include "tabmsp/task.hpp"

namespace tabmsp {

enum class SizeKind { kFixed, kLogUniform, kUniform };

struct SizeSampler {
  SizeKind kind = SizeKind::kFixed;
  std::size_t lo = 128;
  std::size_t hi = 128;
  std::size_t sample(Rng& rng) const;
};

enum class Schedule { kCosine, kPolynomial, kConstant };

struct StageConfig {
  std::string name;
  std::size_t steps = 0;
  std::size_t datasets_per_step = 4;
  std::size_t micro_batches = 1;  // datasets within one micro-batch share a row count
  SizeSampler sizes;
  bool freeze_encoders = false;   // train only the in-context predictor
  Schedule schedule = Schedule::kConstant;
  double base_lr = 1e-4;
  double warmup_fraction = 0.05;
  double end_fraction = 0.1;      // polynomial decay floor, relative to base_lr
  double power = 1.0;
};

struct TrainerConfig {
  std::vector<StageConfig> stages;
  GeneratorConfig generator;
  std::size_t pool_size = 300;
  std::size_t pool_rows = 768;
  double clip_norm = 1.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t queue_capacity = 4;
  std::size_t checkpoint_every = 0;  // 0 = stage boundaries only

  // Paper-scale curriculum; far beyond one CPU.
  static TrainerConfig full();
  // Three short stages sized for a single core.
  static TrainerConfig desk();
  static TrainerConfig preset(const std::string& name);
};

std::string to_json(const TrainerConfig& cfg);
TrainerConfig trainer_config_from_json(const std::string& text);
// Keys: a top-level scalar ("seed", "pool_size", ...), "generator.<field>"
// or "stage<i>.<field>" with i counted from 1.
void apply_trainer_override(TrainerConfig& cfg, const std::string& key, const std::string& value);

// Learning rate at `step` (0-based, step <= total).
double lr_schedule(const StageConfig& stage, std::size_t step, std::size_t total);

// Scales gradients of trainable parameters so their global L2 norm is at
// most max_norm. Returns the norm before clipping.
double clip_gradients(ParameterStore& store, double max_norm);
double gradient_norm(const ParameterStore& store);

// Adam over the parameters that currently require gradients. Frozen
// parameters and their moments are left untouched.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& store, double lr);
  std::uint64_t steps() const noexcept { return t_; }

  void export_state(TensorArchive& out) const;
  void import_state(const TensorArchive& in, std::uint64_t steps);

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// Random rows of `src` keeping its train/test proportion; test rows whose
// label is absent from the sampled context are dropped.
TabularTask subsample_episode(const TabularTask& src, std::size_t rows, Rng& rng);

std::vector<TabularTask> generate_pool(const GeneratorConfig& gen, std::size_t count,
                                       std::size_t rows, std::uint64_t seed);

struct StepRecord {
  std::size_t step = 0;   // global, 1-based
  std::size_t stage = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t trainable = 0;
};

std::string to_json(const StepRecord& r);

class Trainer {
 public:
  Trainer(Model& model, TrainerConfig cfg, std::filesystem::path out_dir);

  // Restores optimizer state and position from a checkpoint written by run.
  void resume(const LoadedCheckpoint& ckpt);

  // Runs the remaining curriculum; writes stage<i>.ckpt per stage,
  // model.ckpt at the end and train_log.jsonl throughout.
  void run();

  // One optimizer step on the given micro-batches.
  StepRecord train_step(const std::vector<std::vector<TabularTask>>& micro, double lr,
                        std::uint64_t mask_seed);

  // Mean loss and summed gradients without an update; for tests.
  double accumulate_gradients(const std::vector<std::vector<TabularTask>>& micro,
                              std::uint64_t mask_seed);

  void set_frozen(bool freeze_encoders);
  // Replaces the generated episode pool, e.g. with archives read from disk.
  void set_pool(std::vector<TabularTask> pool);
  const std::vector<TabularTask>& pool() const noexcept { return pool_; }
  const std::vector<StepRecord>& history() const noexcept { return history_; }
  void on_step(std::function<void(const StepRecord&)> cb) { callback_ = std::move(cb); }

  // Episode batch for (stage, step); a pure function of the seed.
  std::vector<std::vector<TabularTask>> make_batch(std::size_t stage, std::size_t step) const;
  std::uint64_t mask_seed(std::size_t stage, std::size_t step) const;

  void save(const std::filesystem::path& path) const;

 private:
  void ensure_pool();

  Model& model_;
  TrainerConfig cfg_;
  std::filesystem::path out_dir_;
  Adam adam_;
  std::vector<TabularTask> pool_;
  std::size_t stage_ = 0;
  std::size_t step_ = 0;
  std::size_t global_step_ = 0;
  std::vector<StepRecord> history_;
  std::function<void(const StepRecord&)> callback_;
};

}  // namespace tabmsp
