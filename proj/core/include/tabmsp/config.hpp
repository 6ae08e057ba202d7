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
#include <string>
#include <vector>

namespace tabmsp {

// Every architectural hyperparameter. Defaults are the full-size values;
// `desk()` and `micro()` are CPU-sized presets with the same topology.
struct ModelConfig {
  // Column embedder.
  std::size_t embed_dim = 128;
  std::size_t inducing_points = 128;
  std::size_t col_heads = 4;
  std::size_t isab_blocks = 3;
  std::size_t col_ff = 256;
  double skip_init_std = 1e-4;

  // Row interaction.
  std::size_t n_cls = 4;
  std::size_t n_global = 4;
  std::vector<std::size_t> scales{1, 4, 16};
  std::size_t row_blocks = 6;  // split evenly across scales
  std::size_t row_heads = 8;
  std::size_t row_ff = 256;
  std::size_t window = 8;
  std::size_t random_links = 2;
  double rope_theta = 100000.0;
  std::size_t max_features = 256;

  // Perceiver memory; memory_slots == 0 disables it.
  std::size_t memory_slots = 32;
  std::size_t memory_write = 2;
  std::size_t memory_read = 2;
  std::size_t memory_heads = 4;
  std::size_t memory_ff = 1024;

  // In-context predictor.
  std::size_t icl_blocks = 12;
  std::size_t icl_heads = 4;
  std::size_t icl_ff = 1024;
  std::size_t max_classes = 10;
  double temperature = 0.9;
  // Xavier gain of the label projection W_y.
  double label_init_gain = 1.0;

  double dropout = 0.0;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;

  std::size_t reserved_slots() const noexcept { return n_cls + n_global; }
  std::size_t row_dim() const noexcept { return n_cls * embed_dim; }
  std::size_t blocks_per_scale() const noexcept { return row_blocks / scales.size(); }

  // Throws ConfigError when the combination cannot build a model.
  void validate() const;

  static ModelConfig full();
  static ModelConfig desk();
  static ModelConfig micro();
  static ModelConfig preset(const std::string& name);
};

std::string to_json(const ModelConfig& cfg);
// Unknown keys are rejected.
ModelConfig model_config_from_json(const std::string& text);
// Applies one `key=value` override; `value` is parsed as JSON, falling back
// to a plain string.
void apply_override(ModelConfig& cfg, const std::string& key, const std::string& value);

}  // namespace tabmsp
