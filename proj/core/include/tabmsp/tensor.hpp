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
#include <string>
#include <string_view>
#include <vector>

namespace tabmsp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::uint64_t id = 0;
};

// Dense row-major tensor of doubles with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage, `clone()` makes
// a deep copy. Operations in ops.hpp never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Extent along `axis`; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double& operator[](std::size_t i) { return impl_->data[i]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<double> grad() { return impl_->grad; }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zero gradient buffer if missing.
  std::span<double> mutable_grad();
  void zero_grad();

  std::uint64_t id() const { return impl_->id; }
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// One recorded operation. Inputs always carry smaller ids than the output.
struct TapeNode {
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;
};

// Ordered record of differentiable operations. Ops record themselves on the
// tape installed by the innermost TapeScope of the calling thread; with no
// active tape nothing is recorded and outputs never require grad.
class Tape {
 public:
  static Tape* active() noexcept;

  void record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              const Tensor& output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in exact reverse order,
  // accumulating into every reachable tensor's grad buffer.
  void backward(const Tensor& loss);

  const std::vector<TapeNode>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Runs the active tape backward from `loss`.
void backward(const Tensor& loss);

}  // namespace tabmsp
