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

#include "tabmsp/tensor.hpp"

namespace tabmsp {

// One episode: the first n_train rows of X are labelled context, the rest
// are queries. `y` holds labels for every row; consumers must only read
// y[0, n_train) at prediction time.
struct TabularTask {
  Tensor x;                     // [n, m]
  std::vector<std::int64_t> y;  // [n]
  std::size_t n_train = 0;
  std::size_t num_classes = 0;
  std::string prior;            // "mlp", "tree", "linear", "file", ...
  std::uint64_t seed = 0;

  std::size_t rows() const { return x.defined() ? x.size(0) : 0; }
  std::size_t features() const { return x.defined() ? x.size(1) : 0; }
  std::size_t n_test() const { return rows() - n_train; }
};

}  // namespace tabmsp
