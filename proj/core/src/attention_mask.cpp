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

#include "tabmsp/attention_mask.hpp"

#include <cmath>
#include <limits>

#include "tabmsp/errors.hpp"

namespace tabmsp {

AttentionMask AttentionMask::build(std::size_t rows, std::size_t cols,
                                   std::vector<double> additive) {
  auto s = std::make_shared<Storage>();
  s->rows = rows;
  s->cols = cols;
  s->additive = std::move(additive);
  s->row_start.assign(rows + 1, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (s->additive[i * cols + j] == 0.0) s->col_index.push_back(static_cast<std::uint32_t>(j));
    }
    s->row_start[i + 1] = s->col_index.size();
  }
  AttentionMask m;
  m.s_ = std::move(s);
  return m;
}

AttentionMask AttentionMask::from_additive(std::size_t rows, std::size_t cols,
                                           std::vector<double> additive) {
  if (additive.size() != rows * cols) {
    throw DimensionError("mask values do not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  for (double v : additive) {
    if (!(v == 0.0 || (std::isinf(v) && v < 0))) {
      throw PreconditionError("mask entries must be 0 or -inf");
    }
  }
  return build(rows, cols, std::move(additive));
}

AttentionMask AttentionMask::from_predicate(
    std::size_t rows, std::size_t cols,
    const std::function<bool(std::size_t, std::size_t)>& allowed) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> values(rows * cols, kNegInf);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (allowed(i, j)) values[i * cols + j] = 0.0;
    }
  }
  return build(rows, cols, std::move(values));
}

AttentionMask AttentionMask::dense(std::size_t rows, std::size_t cols) {
  return build(rows, cols, std::vector<double>(rows * cols, 0.0));
}

bool AttentionMask::every_row_has_support() const {
  if (!s_) return true;
  for (std::size_t i = 0; i < s_->rows; ++i) {
    if (s_->row_start[i + 1] == s_->row_start[i]) return false;
  }
  return true;
}

bool AttentionMask::operator==(const AttentionMask& other) const {
  if (s_ == other.s_) return true;
  if (!s_ || !other.s_) return false;
  return s_->rows == other.s_->rows && s_->cols == other.s_->cols &&
         s_->row_start == other.s_->row_start && s_->col_index == other.s_->col_index;
}

}  // namespace tabmsp
