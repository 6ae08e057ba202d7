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

#include "tabmsp/scm_datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "tabmsp/errors.hpp"

namespace tabmsp {

namespace {

constexpr std::array<const char*, kActivationCount> kNames = {
    "identity", "tanh", "leaky_relu", "elu",  "relu",     "relu6",  "selu",
    "silu",     "softplus", "hardtanh", "sign", "sin",    "rbf",    "exp",
    "sqrt_abs", "square",   "abs",      "indicator", "fourier"};

double clamp_value(double v, bool* clamped) {
  if (std::isnan(v)) {
    if (clamped) *clamped = true;
    return 0.0;
  }
  if (v > kValueClamp || v < -kValueClamp) {
    if (clamped) *clamped = true;
    return v > 0 ? kValueClamp : -kValueClamp;
  }
  return v;
}

}  // namespace

const char* activation_name(Activation a) { return kNames.at(static_cast<std::size_t>(a)); }

double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kLeakyRelu: return x >= 0 ? x : 0.01 * x;
    case Activation::kElu: return x >= 0 ? x : std::expm1(x);
    case Activation::kRelu: return std::max(0.0, x);
    case Activation::kRelu6: return std::clamp(x, 0.0, 6.0);
    case Activation::kSelu: {
      constexpr double kLambda = 1.0507009873554805, kAlpha = 1.6732632423543772;
      return kLambda * (x >= 0 ? x : kAlpha * std::expm1(x));
    }
    case Activation::kSilu: return x / (1.0 + std::exp(-x));
    case Activation::kSoftplus: return x > 30 ? x : std::log1p(std::exp(x));
    case Activation::kHardtanh: return std::clamp(x, -1.0, 1.0);
    case Activation::kSign: return static_cast<double>((x > 0) - (x < 0));
    case Activation::kSin: return std::sin(x);
    case Activation::kRbf: return std::exp(-x * x);
    case Activation::kExp: return std::exp(x);
    case Activation::kSqrtAbs: return std::sqrt(std::abs(x));
    case Activation::kSquare: return x * x;
    case Activation::kAbs: return std::abs(x);
    case Activation::kIndicator: return std::abs(x) <= 1.0 ? 1.0 : 0.0;
    case Activation::kFourier: break;
  }
  throw PreconditionError("fourier activation needs sampled parameters");
}

FourierFeatures FourierFeatures::sample(Rng& rng, std::size_t count) {
  FourierFeatures f;
  f.a.resize(count);
  f.b.resize(count);
  f.z.resize(count);
  const double n = static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    f.b[i] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    do {
      f.a[i] = uniform(rng, 0.0, n);
    } while (f.a[i] == 0.0);
  }
  f.u = uniform(rng, 0.7, 3.0);
  for (auto& v : f.z) v = normal(rng);
  f.w = weights(f.a, f.u);
  return f;
}

std::vector<double> FourierFeatures::weights(std::span<const double> a, double u) {
  const double e = std::exp(u);
  std::vector<double> lw(a.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i) {
    lw[i] = -e * std::log(a[i]);
    top = std::max(top, lw[i]);
  }
  double norm = 0.0;
  for (auto& v : lw) {
    v = std::exp(v - top);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : lw) v /= norm;
  return lw;
}

double FourierFeatures::operator()(double x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += z[i] * w[i] * std::sin(a[i] * x + b[i]);
  return s;
}

std::vector<double> FourierFeatures::feature_map(double x) const {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = w[i] * std::sin(a[i] * x + b[i]);
  return out;
}

double TreeMechanism::operator()(std::span<const double> parent_values) const {
  std::size_t idx = 0;
  for (std::size_t level = 0; level < depth; ++level) {
    idx = parent_values[split_parent[idx]] <= threshold[idx] ? 2 * idx + 1 : 2 * idx + 2;
  }
  return leaves[idx - ((std::size_t{1} << depth) - 1)];
}

bool is_acyclic(const ScmGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> indeg(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p : g.nodes[j].parents) {
      if (p >= n) return false;
      children[p].push_back(j);
      ++indeg[j];
    }
  }
  std::vector<std::size_t> ready;
  for (std::size_t j = 0; j < n; ++j) {
    if (indeg[j] == 0) ready.push_back(j);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const std::size_t v = ready.back();
    ready.pop_back();
    ++seen;
    for (std::size_t c : children[v]) {
      if (--indeg[c] == 0) ready.push_back(c);
    }
  }
  return seen == n;
}

ScmGraph sample_dag(std::size_t nodes, const GeneratorConfig& cfg, Rng& rng) {
  if (nodes < 2) throw PreconditionError("an SCM needs at least two nodes");
  ScmGraph g;
  g.edge_prob = uniform(rng, cfg.edge_prob_lo, cfg.edge_prob_hi);
  g.nodes.resize(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    ScmNode& node = g.nodes[j];
    for (std::size_t i = 0; i < j; ++i) {
      if (uniform(rng, 0.0, 1.0) < g.edge_prob) {
        node.parents.push_back(i);
        node.weights.push_back(normal(rng));
      }
    }
    node.activation = cfg.activation ? *cfg.activation
                                     : static_cast<Activation>(uniform_int(
                                           rng, 0, static_cast<std::int64_t>(kActivationCount) - 1));
    node.sigma = cfg.zero_noise ? 0.0 : uniform(rng, cfg.sigma_lo, cfg.sigma_hi);
    if (node.activation == Activation::kFourier) node.fourier = FourierFeatures::sample(rng);
  }
  return g;
}

std::size_t sample_tree_depth(Rng& rng) { return static_cast<std::size_t>(uniform_int(rng, 1, 4)); }

TreeMechanism sample_tree(std::size_t depth, std::size_t n_parents,
                          std::span<const std::vector<double>> parent_columns, Rng& rng) {
  if (n_parents == 0 || parent_columns.size() != n_parents) {
    throw PreconditionError("a tree mechanism needs parents");
  }
  TreeMechanism t;
  t.depth = depth;
  const std::size_t internal = (std::size_t{1} << depth) - 1;
  for (std::size_t i = 0; i < internal; ++i) {
    const auto p = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n_parents) - 1));
    const auto& col = parent_columns[p];
    const auto r = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(col.size()) - 1));
    t.split_parent.push_back(p);
    t.threshold.push_back(col[r]);
  }
  const bool gaussian = uniform(rng, 0.0, 1.0) < 0.5;
  for (std::size_t i = 0; i < (std::size_t{1} << depth); ++i) {
    t.leaves.push_back(gaussian ? normal(rng) : uniform(rng, -1.0, 1.0));
  }
  return t;
}

double eval_node(std::span<const double> parent_values, const ScmNode& node, Rng& rng,
                 bool* clamped) {
  if (node.parents.empty()) return normal(rng);
  double s = 0.0;
  for (std::size_t p = 0; p < parent_values.size(); ++p) s += node.weights[p] * parent_values[p];
  double v = node.activation == Activation::kFourier ? node.fourier(s)
                                                     : apply_activation(node.activation, s);
  if (node.sigma > 0.0) v += node.sigma * normal(rng);
  return clamp_value(v, clamped);
}

std::vector<std::vector<double>> sample_values(const ScmGraph& g, std::size_t rows, Rng& rng,
                                               std::size_t* clamped) {
  std::vector<std::vector<double>> values(g.size(), std::vector<double>(rows));
  std::size_t flags = 0;
  std::vector<double> pv;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const ScmNode& node = g.nodes[j];
    for (std::size_t r = 0; r < rows; ++r) {
      pv.clear();
      for (std::size_t p : node.parents) pv.push_back(values[p][r]);
      bool c = false;
      if (g.tree && !node.parents.empty()) {
        values[j][r] = clamp_value(node.tree(pv), &c);
      } else {
        values[j][r] = eval_node(pv, node, rng, &c);
      }
      flags += c ? 1 : 0;
    }
  }
  if (clamped) *clamped = flags;
  return values;
}

TabularTask make_task(const std::vector<std::vector<double>>& feature_columns,
                      std::span<const double> target, std::size_t num_classes,
                      std::size_t n_train, Rng& rng, std::size_t max_resamples) {
  const std::size_t n = target.size();
  if (num_classes < 2) throw PreconditionError("need at least two classes");
  if (n_train == 0 || n_train >= n) throw PreconditionError("need 1 <= n_train < n");
  std::vector<double> sorted(target.begin(), target.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct(sorted);
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> cuts;
  if (distinct.size() <= num_classes) {
    // few distinct values: each value is its own class
    cuts.assign(distinct.begin() + 1, distinct.end());
  }
  for (std::size_t k = 1; k < num_classes && distinct.size() > num_classes; ++k) {
    const double c = sorted[std::min(n - 1, (k * n + num_classes - 1) / num_classes)];
    if (c > sorted.front() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
  }
  if (cuts.empty()) throw DataError("target is constant; cannot form classes");
  std::vector<std::int64_t> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = std::upper_bound(cuts.begin(), cuts.end(), target[i]) - cuts.begin();
  }
  // compact realized bins to 0..K-1
  std::vector<std::int64_t> uniq(raw);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  for (auto& v : raw) v = std::lower_bound(uniq.begin(), uniq.end(), v) - uniq.begin();
  const std::size_t k = uniq.size();
  if (k < 2) throw DataError("target realizes a single class");

  std::vector<std::size_t> order(n);
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, max_resamples); ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> present(k, false);
    for (std::size_t i = 0; i < n_train; ++i) present[static_cast<std::size_t>(raw[order[i]])] = true;
    if (std::find(present.begin(), present.end(), false) != present.end()) continue;
    TabularTask t;
    const std::size_t m = feature_columns.size();
    t.x = Tensor(Shape{n, m});
    t.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) t.x[i * m + j] = feature_columns[j][order[i]];
      t.y[i] = raw[order[i]];
    }
    t.n_train = n_train;
    t.num_classes = k;
    return t;
  }
  throw DataError("no split places every class in the training rows");
}

namespace {

struct Shape3 {
  std::size_t m, k, n_train;
};

Shape3 draw_sizes(const GeneratorConfig& cfg, Rng& rng) {
  if (cfg.features_lo < 1 || cfg.features_hi < cfg.features_lo) {
    throw ConfigError("invalid feature range");
  }
  if (cfg.classes_lo < 2 || cfg.classes_hi < cfg.classes_lo) {
    throw ConfigError("invalid class range");
  }
  if (cfg.rows < 4) throw ConfigError("episodes need at least 4 rows");
  Shape3 s;
  s.m = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(cfg.features_lo),
                                             static_cast<std::int64_t>(cfg.features_hi)));
  s.k = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(cfg.classes_lo),
                                             static_cast<std::int64_t>(cfg.classes_hi)));
  const double frac = uniform(rng, cfg.train_fraction_lo, cfg.train_fraction_hi);
  s.n_train = std::clamp<std::size_t>(static_cast<std::size_t>(frac * static_cast<double>(cfg.rows)),
                                      1, cfg.rows - 1);
  return s;
}

TabularTask generate_graph_task(const GeneratorConfig& cfg, Rng& rng, bool tree) {
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, cfg.max_resamples); ++attempt) {
    const Shape3 s = draw_sizes(cfg, rng);
    ScmGraph g = sample_dag(s.m + 1, cfg, rng);
    g.tree = tree;
    std::vector<std::size_t> children;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!g.nodes[j].parents.empty()) children.push_back(j);
    }
    if (children.empty()) continue;
    std::vector<std::vector<double>> values;
    if (tree) {
      values.assign(g.size(), std::vector<double>(cfg.rows));
      for (std::size_t j = 0; j < g.size(); ++j) {
        ScmNode& node = g.nodes[j];
        if (node.parents.empty()) {
          for (auto& v : values[j]) v = normal(rng);
          continue;
        }
        std::vector<std::vector<double>> cols;
        for (std::size_t p : node.parents) cols.push_back(values[p]);
        node.tree = sample_tree(sample_tree_depth(rng), node.parents.size(), cols, rng);
        std::vector<double> pv(node.parents.size());
        for (std::size_t r = 0; r < cfg.rows; ++r) {
          for (std::size_t p = 0; p < pv.size(); ++p) pv[p] = cols[p][r];
          values[j][r] = node.tree(pv);
        }
      }
    } else {
      values = sample_values(g, cfg.rows, rng);
    }
    const std::size_t target =
        children[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(children.size()) - 1))];
    std::vector<std::vector<double>> feats;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (j != target) feats.push_back(values[j]);
    }
    try {
      TabularTask t = make_task(feats, values[target], s.k, s.n_train, rng, cfg.max_resamples);
      t.prior = tree ? "tree" : "mlp";
      return t;
    } catch (const DataError&) {
      continue;
    }
  }
  throw DataError("could not generate a non-degenerate episode in " +
                  std::to_string(cfg.max_resamples) + " attempts");
}

}  // namespace

TabularTask generate_scm_dataset(const GeneratorConfig& cfg, Rng& rng) {
  return generate_graph_task(cfg, rng, false);
}

TabularTask generate_tree_scm_dataset(const GeneratorConfig& cfg, Rng& rng) {
  return generate_graph_task(cfg, rng, true);
}

TabularTask generate_linear_task(const GeneratorConfig& cfg, Rng& rng) {
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, cfg.max_resamples); ++attempt) {
    Shape3 s = draw_sizes(cfg, rng);
    std::vector<double> w(s.m);
    for (auto& v : w) v = normal(rng);
    std::vector<std::vector<double>> feats(s.m, std::vector<double>(cfg.rows));
    std::vector<double> score(cfg.rows);
    for (std::size_t r = 0; r < cfg.rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.m; ++j) {
        feats[j][r] = normal(rng);
        acc += w[j] * feats[j][r];
      }
      score[r] = acc > 0.0 ? 1.0 : 0.0;
    }
    try {
      TabularTask t = make_task(feats, score, 2, s.n_train, rng, cfg.max_resamples);
      t.prior = "linear";
      return t;
    } catch (const DataError&) {
      continue;
    }
  }
  throw DataError("could not generate a two-class linear episode");
}

TabularTask generate_episode(const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5c3}));
  TabularTask t;
  if (cfg.prior == "mlp") {
    t = generate_scm_dataset(cfg, rng);
  } else if (cfg.prior == "tree") {
    t = generate_tree_scm_dataset(cfg, rng);
  } else if (cfg.prior == "linear") {
    t = generate_linear_task(cfg, rng);
  } else if (cfg.prior == "mix") {
    t = uniform(rng, 0.0, 1.0) < cfg.tree_fraction ? generate_tree_scm_dataset(cfg, rng)
                                                   : generate_scm_dataset(cfg, rng);
  } else {
    throw ConfigError("unknown prior '" + cfg.prior + "'");
  }
  t.seed = seed;
  return t;
}

}  // namespace tabmsp
