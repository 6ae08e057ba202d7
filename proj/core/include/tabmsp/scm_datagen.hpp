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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabmsp/rng.hpp"
#include "tabmsp/task.hpp"

namespace tabmsp {

enum class Activation : std::uint8_t {
  kIdentity,
  kTanh,
  kLeakyRelu,
  kElu,
  kRelu,
  kRelu6,
  kSelu,
  kSilu,
  kSoftplus,
  kHardtanh,
  kSign,
  kSin,
  kRbf,
  kExp,
  kSqrtAbs,
  kSquare,
  kAbs,
  kIndicator,
  kFourier,
};
inline constexpr std::size_t kActivationCount = 19;

const char* activation_name(Activation a);
// Scalar activations; kFourier needs its parameters and throws here.
double apply_activation(Activation a, double x);

// f(x) = sum_i z_i * (w_i / |w|) * sin(a_i x + b_i), w_i = a_i^(-exp(u)).
struct FourierFeatures {
  std::vector<double> a, b, z;
  std::vector<double> w;  // normalized to unit L2 norm
  double u = 0.0;

  static FourierFeatures sample(Rng& rng, std::size_t count = 256);
  // Normalized weights computed in the log domain to survive large exponents.
  static std::vector<double> weights(std::span<const double> a, double u);
  double operator()(double x) const;
  std::vector<double> feature_map(double x) const;
};

// Full binary tree over a node's parents, stored heap-ordered.
struct TreeMechanism {
  std::size_t depth = 0;
  std::vector<std::size_t> split_parent;  // index into the node's parent list
  std::vector<double> threshold;
  std::vector<double> leaves;             // 2^depth values
  double operator()(std::span<const double> parent_values) const;
};

struct ScmNode {
  std::vector<std::size_t> parents;
  std::vector<double> weights;
  Activation activation = Activation::kIdentity;
  double sigma = 0.0;
  FourierFeatures fourier;  // used when activation == kFourier
  TreeMechanism tree;       // used by the tree prior
};

struct ScmGraph {
  std::vector<ScmNode> nodes;
  double edge_prob = 0.0;
  bool tree = false;
  std::size_t size() const noexcept { return nodes.size(); }
};

bool is_acyclic(const ScmGraph& g);

struct GeneratorConfig {
  std::size_t rows = 256;
  std::size_t features_lo = 2, features_hi = 10;
  std::size_t classes_lo = 2, classes_hi = 10;
  double train_fraction_lo = 0.5, train_fraction_hi = 0.8;
  double edge_prob_lo = 0.2, edge_prob_hi = 0.6;
  double sigma_lo = 0.01, sigma_hi = 0.3;
  double tree_fraction = 0.5;
  std::string prior = "mix";  // mlp | tree | mix | linear
  std::optional<Activation> activation;  // forces every node's activation
  bool zero_noise = false;
  std::size_t max_resamples = 10;
};

inline constexpr double kValueClamp = 1e6;

// Edges i -> j for i < j, each with probability p ~ U[lo, hi].
ScmGraph sample_dag(std::size_t nodes, const GeneratorConfig& cfg, Rng& rng);
std::size_t sample_tree_depth(Rng& rng);
TreeMechanism sample_tree(std::size_t depth, std::size_t n_parents,
                          std::span<const std::vector<double>> parent_columns, Rng& rng);

// f(sum_p w_p x_p) + N(0, sigma^2); roots draw N(0, 1). Non-finite or
// out-of-range values are clamped to +-kValueClamp (NaN to 0) and flagged.
double eval_node(std::span<const double> parent_values, const ScmNode& node, Rng& rng,
                 bool* clamped = nullptr);

// Ancestral sampling; returns values[node][row].
std::vector<std::vector<double>> sample_values(const ScmGraph& g, std::size_t rows, Rng& rng,
                                               std::size_t* clamped = nullptr);

// Quantile-bins `target` into at most K compact classes, shuffles rows and
// splits so that every class appears among the first n_train rows.
// Throws DataError when the target is constant or no valid split is found.
TabularTask make_task(const std::vector<std::vector<double>>& feature_columns,
                      std::span<const double> target, std::size_t num_classes,
                      std::size_t n_train, Rng& rng, std::size_t max_resamples = 10);

TabularTask generate_scm_dataset(const GeneratorConfig& cfg, Rng& rng);
TabularTask generate_tree_scm_dataset(const GeneratorConfig& cfg, Rng& rng);
// y = 1[x . w > 0] with Gaussian X, K = 2, no noise.
TabularTask generate_linear_task(const GeneratorConfig& cfg, Rng& rng);
// Dispatches on cfg.prior; `seed` fully determines the episode.
TabularTask generate_episode(const GeneratorConfig& cfg, std::uint64_t seed);

}  // namespace tabmsp
