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

#include "tabmsp/config.hpp"

#include "json.hpp"
#include "tabmsp/errors.hpp"

namespace tabmsp {
namespace {

using nlohmann::json;

json to_object(const ModelConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"inducing_points", c.inducing_points},
              {"col_heads", c.col_heads},
              {"isab_blocks", c.isab_blocks},
              {"col_ff", c.col_ff},
              {"skip_init_std", c.skip_init_std},
              {"n_cls", c.n_cls},
              {"n_global", c.n_global},
              {"scales", c.scales},
              {"row_blocks", c.row_blocks},
              {"row_heads", c.row_heads},
              {"row_ff", c.row_ff},
              {"window", c.window},
              {"random_links", c.random_links},
              {"rope_theta", c.rope_theta},
              {"max_features", c.max_features},
              {"memory_slots", c.memory_slots},
              {"memory_write", c.memory_write},
              {"memory_read", c.memory_read},
              {"memory_heads", c.memory_heads},
              {"memory_ff", c.memory_ff},
              {"icl_blocks", c.icl_blocks},
              {"icl_heads", c.icl_heads},
              {"icl_ff", c.icl_ff},
              {"max_classes", c.max_classes},
              {"temperature", c.temperature},
              {"label_init_gain", c.label_init_gain},
              {"dropout", c.dropout},
              {"ln_eps", c.ln_eps},
              {"seed", c.seed}};
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig from_object(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const json known = to_object(ModelConfig{});
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig c;
  try {
    read(j, "embed_dim", c.embed_dim);
    read(j, "inducing_points", c.inducing_points);
    read(j, "col_heads", c.col_heads);
    read(j, "isab_blocks", c.isab_blocks);
    read(j, "col_ff", c.col_ff);
    read(j, "skip_init_std", c.skip_init_std);
    read(j, "n_cls", c.n_cls);
    read(j, "n_global", c.n_global);
    read(j, "scales", c.scales);
    read(j, "row_blocks", c.row_blocks);
    read(j, "row_heads", c.row_heads);
    read(j, "row_ff", c.row_ff);
    read(j, "window", c.window);
    read(j, "random_links", c.random_links);
    read(j, "rope_theta", c.rope_theta);
    read(j, "max_features", c.max_features);
    read(j, "memory_slots", c.memory_slots);
    read(j, "memory_write", c.memory_write);
    read(j, "memory_read", c.memory_read);
    read(j, "memory_heads", c.memory_heads);
    read(j, "memory_ff", c.memory_ff);
    read(j, "icl_blocks", c.icl_blocks);
    read(j, "icl_heads", c.icl_heads);
    read(j, "icl_ff", c.icl_ff);
    read(j, "max_classes", c.max_classes);
    read(j, "temperature", c.temperature);
    read(j, "label_init_gain", c.label_init_gain);
    read(j, "dropout", c.dropout);
    read(j, "ln_eps", c.ln_eps);
    read(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(embed_dim > 0 && inducing_points > 0, "embed_dim and inducing_points must be positive");
  require(col_heads > 0 && embed_dim % col_heads == 0, "embed_dim must divide into col_heads");
  require(row_heads > 0 && embed_dim % row_heads == 0, "embed_dim must divide into row_heads");
  require((embed_dim / row_heads) % 2 == 0, "row head dimension must be even for RoPE");
  require(n_cls > 0, "n_cls must be positive");
  require(!scales.empty(), "at least one scale is required");
  for (auto s : scales) require(s > 0, "scales must be positive");
  require(row_blocks % scales.size() == 0 && row_blocks > 0,
          "row_blocks must split evenly across scales");
  require(max_features > 0, "max_features must be positive");
  require(memory_slots == 0 || (memory_heads > 0 && row_dim() % memory_heads == 0),
          "row_dim must divide into memory_heads");
  require(icl_heads > 0 && row_dim() % icl_heads == 0, "row_dim must divide into icl_heads");
  require(max_classes >= 2, "max_classes must be at least 2");
  require(temperature > 0.0, "temperature must be positive");
  require(label_init_gain > 0.0, "label_init_gain must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.embed_dim = 32;
  c.inducing_points = 16;
  c.col_ff = 64;
  c.scales = {1, 4};
  c.row_blocks = 4;
  c.row_ff = 64;
  c.max_features = 32;
  c.memory_slots = 8;
  c.memory_ff = 2 * c.row_dim();
  c.icl_blocks = 3;
  c.icl_ff = 2 * c.row_dim();
  c.label_init_gain = 8.0;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c = desk();
  c.icl_blocks = 2;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  if (name == "micro") return micro();
  throw ConfigError("unknown model preset '" + name + "' (expected full, desk or micro)");
}

std::string to_json(const ModelConfig& cfg) { return to_object(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return from_object(j);
}

void apply_override(ModelConfig& cfg, const std::string& key, const std::string& value) {
  json j = to_object(cfg);
  if (!j.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;
  }
  j[key] = v;
  cfg = from_object(j);
}

}  // namespace tabmsp
