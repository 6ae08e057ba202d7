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

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tabmsp/model.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Named tensors in a versioned, checksummed binary container.
struct TensorArchive {
  std::vector<std::pair<std::string, Tensor>> entries;
  const Tensor* find(const std::string& name) const;
};

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);
// Throws IoError on a missing, truncated or corrupt file.
TensorArchive read_tensor_archive(const std::filesystem::path& path);

// `path` receives the tensors, `path` + ".json" the config sidecar.
// `extra_json` must be a JSON object; it is stored under "extra".
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TensorArchive& extra_tensors = {},
                     const std::string& extra_json = "{}");

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  TensorArchive archive;   // every stored tensor, parameters included
  std::string extra_json;  // "{}" when absent
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace tabmsp
