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
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace tabmsp {

// Additive attention mask with entries in {0, -inf}.
//
// The dense additive matrix is kept alongside a CSR list of allowed columns
// per row; softmax_masked walks the index lists so masked logits are never
// touched.
class AttentionMask {
 public:
  AttentionMask() = default;

  // Every entry must be exactly 0 or -inf.
  static AttentionMask from_additive(std::size_t rows, std::size_t cols,
                                     std::vector<double> additive);
  static AttentionMask from_predicate(std::size_t rows, std::size_t cols,
                                      const std::function<bool(std::size_t, std::size_t)>& allowed);
  static AttentionMask dense(std::size_t rows, std::size_t cols);

  std::size_t rows() const noexcept { return s_ ? s_->rows : 0; }
  std::size_t cols() const noexcept { return s_ ? s_->cols : 0; }
  bool allowed(std::size_t i, std::size_t j) const { return s_->additive[i * s_->cols + j] == 0.0; }
  double additive(std::size_t i, std::size_t j) const { return s_->additive[i * s_->cols + j]; }
  std::span<const double> additive() const noexcept { return s_->additive; }
  std::span<const std::uint32_t> row_indices(std::size_t i) const {
    return {s_->col_index.data() + s_->row_start[i], s_->row_start[i + 1] - s_->row_start[i]};
  }
  std::size_t count_allowed() const noexcept { return s_ ? s_->col_index.size() : 0; }
  bool every_row_has_support() const;

  bool operator==(const AttentionMask& other) const;

 private:
  // Immutable once built; copies of a mask share it.
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> additive;
    std::vector<std::size_t> row_start;
    std::vector<std::uint32_t> col_index;
  };
  static AttentionMask build(std::size_t rows, std::size_t cols, std::vector<double> additive);

  std::shared_ptr<const Storage> s_;
};

}  // namespace tabmsp
