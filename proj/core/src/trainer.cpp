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

#include "tabmsp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <thread>

#include "json.hpp"
#include "tabmsp/errors.hpp"

namespace tabmsp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* size_kind_name(SizeKind k) {
  switch (k) {
    case SizeKind::kFixed: return "fixed";
    case SizeKind::kLogUniform: return "log_uniform";
    case SizeKind::kUniform: return "uniform";
  }
  return "fixed";
}

SizeKind size_kind_from(const std::string& s) {
  if (s == "fixed") return SizeKind::kFixed;
  if (s == "log_uniform") return SizeKind::kLogUniform;
  if (s == "uniform") return SizeKind::kUniform;
  throw ConfigError("unknown size sampler '" + s + "'");
}

const char* schedule_name(Schedule s) {
  switch (s) {
    case Schedule::kCosine: return "cosine";
    case Schedule::kPolynomial: return "polynomial";
    case Schedule::kConstant: return "constant";
  }
  return "constant";
}

Schedule schedule_from(const std::string& s) {
  if (s == "cosine") return Schedule::kCosine;
  if (s == "polynomial") return Schedule::kPolynomial;
  if (s == "constant") return Schedule::kConstant;
  throw ConfigError("unknown schedule '" + s + "'");
}

std::optional<Activation> activation_from(const std::string& s) {
  if (s.empty()) return std::nullopt;
  for (std::size_t i = 0; i < kActivationCount; ++i) {
    if (s == activation_name(static_cast<Activation>(i))) return static_cast<Activation>(i);
  }
  throw ConfigError("unknown activation '" + s + "'");
}

json stage_object(const StageConfig& s) {
  return json{{"name", s.name},
              {"steps", s.steps},
              {"datasets_per_step", s.datasets_per_step},
              {"micro_batches", s.micro_batches},
              {"sizes", size_kind_name(s.sizes.kind)},
              {"size_lo", s.sizes.lo},
              {"size_hi", s.sizes.hi},
              {"freeze_encoders", s.freeze_encoders},
              {"schedule", schedule_name(s.schedule)},
              {"base_lr", s.base_lr},
              {"warmup_fraction", s.warmup_fraction},
              {"end_fraction", s.end_fraction},
              {"power", s.power}};
}

json generator_object(const GeneratorConfig& g) {
  return json{{"rows", g.rows},
              {"features_lo", g.features_lo},
              {"features_hi", g.features_hi},
              {"classes_lo", g.classes_lo},
              {"classes_hi", g.classes_hi},
              {"train_fraction_lo", g.train_fraction_lo},
              {"train_fraction_hi", g.train_fraction_hi},
              {"edge_prob_lo", g.edge_prob_lo},
              {"edge_prob_hi", g.edge_prob_hi},
              {"sigma_lo", g.sigma_lo},
              {"sigma_hi", g.sigma_hi},
              {"tree_fraction", g.tree_fraction},
              {"prior", g.prior},
              {"activation", g.activation ? activation_name(*g.activation) : ""},
              {"zero_noise", g.zero_noise},
              {"max_resamples", g.max_resamples}};
}

json trainer_object(const TrainerConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(stage_object(s));
  return json{{"stages", stages},
              {"generator", generator_object(c.generator)},
              {"pool_size", c.pool_size},
              {"pool_rows", c.pool_rows},
              {"clip_norm", c.clip_norm},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"queue_capacity", c.queue_capacity},
              {"checkpoint_every", c.checkpoint_every}};
}

void check_keys(const json& j, const json& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown " + what + " key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

StageConfig stage_from(const json& j) {
  check_keys(j, stage_object(StageConfig{}), "stage");
  StageConfig s;
  read(j, "name", s.name);
  read(j, "steps", s.steps);
  read(j, "datasets_per_step", s.datasets_per_step);
  read(j, "micro_batches", s.micro_batches);
  if (j.contains("sizes")) s.sizes.kind = size_kind_from(j.at("sizes").get<std::string>());
  read(j, "size_lo", s.sizes.lo);
  read(j, "size_hi", s.sizes.hi);
  read(j, "freeze_encoders", s.freeze_encoders);
  if (j.contains("schedule")) s.schedule = schedule_from(j.at("schedule").get<std::string>());
  read(j, "base_lr", s.base_lr);
  read(j, "warmup_fraction", s.warmup_fraction);
  read(j, "end_fraction", s.end_fraction);
  read(j, "power", s.power);
  return s;
}

GeneratorConfig generator_from(const json& j) {
  check_keys(j, generator_object(GeneratorConfig{}), "generator");
  GeneratorConfig g;
  read(j, "rows", g.rows);
  read(j, "features_lo", g.features_lo);
  read(j, "features_hi", g.features_hi);
  read(j, "classes_lo", g.classes_lo);
  read(j, "classes_hi", g.classes_hi);
  read(j, "train_fraction_lo", g.train_fraction_lo);
  read(j, "train_fraction_hi", g.train_fraction_hi);
  read(j, "edge_prob_lo", g.edge_prob_lo);
  read(j, "edge_prob_hi", g.edge_prob_hi);
  read(j, "sigma_lo", g.sigma_lo);
  read(j, "sigma_hi", g.sigma_hi);
  read(j, "tree_fraction", g.tree_fraction);
  read(j, "prior", g.prior);
  if (j.contains("activation")) g.activation = activation_from(j.at("activation").get<std::string>());
  read(j, "zero_noise", g.zero_noise);
  read(j, "max_resamples", g.max_resamples);
  return g;
}

TrainerConfig trainer_from(const json& j) {
  check_keys(j, trainer_object(TrainerConfig{}), "trainer config");
  TrainerConfig c;
  try {
    if (j.contains("stages")) {
      for (const auto& s : j.at("stages")) c.stages.push_back(stage_from(s));
    }
    if (j.contains("generator")) c.generator = generator_from(j.at("generator"));
    read(j, "pool_size", c.pool_size);
    read(j, "pool_rows", c.pool_rows);
    read(j, "clip_norm", c.clip_norm);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "adam_eps", c.adam_eps);
    read(j, "seed", c.seed);
    read(j, "queue_capacity", c.queue_capacity);
    read(j, "checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad trainer config value: ") + e.what());
  }
  return c;
}

json parse_value(const std::string& value) {
  try {
    return json::parse(value);
  } catch (const json::exception&) {
    return value;
  }
}

bool is_encoder_param(const std::string& name) {
  return name.rfind("col.", 0) == 0 || name.rfind("row.", 0) == 0 || name.rfind("mem.", 0) == 0;
}

}  // namespace

std::size_t SizeSampler::sample(Rng& rng) const {
  if (lo == 0 || hi < lo) throw ConfigError("size sampler needs 1 <= lo <= hi");
  switch (kind) {
    case SizeKind::kFixed: return lo;
    case SizeKind::kLogUniform: {
      const double v = std::exp(uniform(rng, std::log(static_cast<double>(lo)),
                                        std::log(static_cast<double>(hi))));
      return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(v)), lo, hi);
    }
    case SizeKind::kUniform:
      return static_cast<std::size_t>(
          uniform_int(rng, static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  }
  return lo;
}

TrainerConfig TrainerConfig::full() {
  TrainerConfig c;
  StageConfig s1{"stage1", 25000, 2048, 8, {SizeKind::kFixed, 1024, 1024}, false,
                 Schedule::kCosine, 1e-4};
  StageConfig s2{"stage2", 2000, 512, 1, {SizeKind::kLogUniform, 1024, 40000}, false,
                 Schedule::kPolynomial, 1e-5};
  StageConfig s3{"stage3", 50, 512, 1, {SizeKind::kUniform, 40000, 60000}, true,
                 Schedule::kConstant, 1e-5};
  c.stages = {s1, s2, s3};
  c.generator.rows = 60000;
  c.generator.features_hi = 100;
  c.pool_rows = 60000;
  return c;
}

TrainerConfig TrainerConfig::desk() {
  TrainerConfig c;
  // The desk curriculum opens with an in-context-only warm start.
  StageConfig s0{"icl_warmup", 300, 8, 2, {SizeKind::kFixed, 128, 128}, true,
                 Schedule::kCosine, 1e-3};
  StageConfig s1{"stage1", 600, 4, 1, {SizeKind::kFixed, 128, 128}, false,
                 Schedule::kCosine, 1e-4};
  StageConfig s2{"stage2", 100, 4, 1, {SizeKind::kLogUniform, 128, 512}, false,
                 Schedule::kPolynomial, 1e-4};
  StageConfig s3{"stage3", 20, 2, 1, {SizeKind::kUniform, 512, 768}, true,
                 Schedule::kConstant, 1e-4};
  c.stages = {s0, s1, s2, s3};
  c.generator.rows = 768;
  c.pool_rows = 768;
  return c;
}

TrainerConfig TrainerConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk" || name == "micro") return desk();
  throw ConfigError("unknown trainer preset '" + name + "'");
}

std::string to_json(const TrainerConfig& cfg) { return trainer_object(cfg).dump(2); }

TrainerConfig trainer_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("trainer config is not valid JSON: ") + e.what());
  }
  return trainer_from(j);
}

void apply_trainer_override(TrainerConfig& cfg, const std::string& key, const std::string& value) {
  json j = trainer_object(cfg);
  const json v = parse_value(value);
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    if (!j.contains(key) || key == "stages" || key == "generator") {
      throw ConfigError("unknown trainer config key '" + key + "'");
    }
    j[key] = v;
  } else {
    const std::string head = key.substr(0, dot), field = key.substr(dot + 1);
    json* target = nullptr;
    if (head == "generator") {
      target = &j["generator"];
    } else if (head.rfind("stage", 0) == 0) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(head.substr(5));
      } catch (const std::exception&) {
        throw ConfigError("bad stage key '" + key + "'");
      }
      if (idx == 0 || idx > cfg.stages.size()) throw ConfigError("no stage " + head.substr(5));
      target = &j["stages"][idx - 1];
    } else {
      throw ConfigError("unknown trainer config key '" + key + "'");
    }
    if (!target->contains(field)) throw ConfigError("unknown trainer config key '" + key + "'");
    (*target)[field] = v;
  }
  cfg = trainer_from(j);
}

double lr_schedule(const StageConfig& stage, std::size_t step, std::size_t total) {
  if (total == 0) return stage.base_lr;
  step = std::min(step, total);
  const double base = stage.base_lr;
  switch (stage.schedule) {
    case Schedule::kConstant: return base;
    case Schedule::kPolynomial: {
      const double t = static_cast<double>(step) / static_cast<double>(total);
      const double end = stage.end_fraction * base;
      return end + (base - end) * std::pow(1.0 - t, stage.power);
    }
    case Schedule::kCosine: {
      const auto warm = static_cast<std::size_t>(
          std::ceil(stage.warmup_fraction * static_cast<double>(total)));
      if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
      if (total == warm) return base;
      const double t = static_cast<double>(step - warm) / static_cast<double>(total - warm);
      return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
  }
  return base;
}

double gradient_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& [name, p] : store.items()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParameterStore& store, double max_norm) {
  const double norm = gradient_norm(store);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const auto& [name, p] : store.items()) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      Tensor t = p;
      for (double& g : t.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void Adam::step(ParameterStore& store, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, p] : store.items()) {
    if (!p.requires_grad()) continue;
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, std::make_pair(Tensor(p.shape()), Tensor(p.shape()))).first;
    }
    if (!p.has_grad()) continue;
    Tensor w = p;
    auto data = w.data();
    const auto grad = p.grad();
    auto m = it->second.first.data();
    auto v = it->second.second.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::export_state(TensorArchive& out) const {
  for (const auto& [name, mv] : moments_) {
    out.entries.emplace_back("adam.m." + name, mv.first.clone());
    out.entries.emplace_back("adam.v." + name, mv.second.clone());
  }
}

void Adam::import_state(const TensorArchive& in, std::uint64_t steps) {
  moments_.clear();
  for (const auto& [name, t] : in.entries) {
    if (name.rfind("adam.m.", 0) != 0) continue;
    const std::string p = name.substr(7);
    const Tensor* v = in.find("adam.v." + p);
    if (!v) throw IoError("checkpoint lacks second moment for " + p);
    moments_.emplace(p, std::make_pair(t.clone(), v->clone()));
  }
  t_ = steps;
}

TabularTask subsample_episode(const TabularTask& src, std::size_t rows, Rng& rng) {
  const std::size_t n = src.rows(), m = src.features();
  rows = std::min(rows, n);
  if (rows < 2) throw PreconditionError("subsample needs at least two rows");
  const double ratio = static_cast<double>(src.n_train) / static_cast<double>(n);
  std::size_t nt = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(rows)));
  nt = std::clamp<std::size_t>(nt, 1, rows - 1);
  nt = std::min(nt, src.n_train);
  const std::size_t ne = std::min(rows - nt, n - src.n_train);
  std::vector<std::size_t> train(src.n_train), test(n - src.n_train);
  std::iota(train.begin(), train.end(), 0);
  std::iota(test.begin(), test.end(), src.n_train);
  std::shuffle(train.begin(), train.end(), rng);
  std::shuffle(test.begin(), test.end(), rng);
  train.resize(nt);
  std::set<std::int64_t> seen;
  for (auto i : train) seen.insert(src.y[i]);
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < test.size() && keep.size() < ne; ++k) {
    if (seen.count(src.y[test[k]])) keep.push_back(test[k]);
  }
  if (keep.empty()) throw DataError("subsample left no query rows with known labels");
  TabularTask t;
  t.x = Tensor(Shape{nt + keep.size(), m});
  std::size_t r = 0;
  for (const auto* idx : {&train, &keep}) {
    for (auto i : *idx) {
      for (std::size_t j = 0; j < m; ++j) t.x[r * m + j] = src.x[i * m + j];
      t.y.push_back(src.y[i]);
      ++r;
    }
  }
  t.n_train = nt;
  t.num_classes = seen.size();
  t.prior = src.prior;
  t.seed = src.seed;
  return t;
}

std::vector<TabularTask> generate_pool(const GeneratorConfig& gen, std::size_t count,
                                       std::size_t rows, std::uint64_t seed) {
  GeneratorConfig g = gen;
  g.rows = rows;
  std::vector<TabularTask> pool;
  pool.reserve(count);
  for (std::size_t i = 0; i < count; ++i) pool.push_back(generate_episode(g, derive_seed(seed, {0x9001, i})));
  return pool;
}

std::string to_json(const StepRecord& r) {
  json j{{"step", r.step},  {"stage", r.stage},         {"lr", r.lr},
         {"loss", r.loss},  {"grad_norm", r.grad_norm}, {"trainable", r.trainable}};
  return j.dump();
}

Trainer::Trainer(Model& model, TrainerConfig cfg, fs::path out_dir)
    : model_(model),
      cfg_(std::move(cfg)),
      out_dir_(std::move(out_dir)),
      adam_(cfg_.beta1, cfg_.beta2, cfg_.adam_eps) {
  if (cfg_.stages.empty()) throw ConfigError("the curriculum has no stages");
  for (const auto& s : cfg_.stages) {
    if (s.datasets_per_step == 0 || s.micro_batches == 0 || s.micro_batches > s.datasets_per_step) {
      throw ConfigError("stage '" + s.name + "' needs 1 <= micro_batches <= datasets_per_step");
    }
  }
}

void Trainer::set_pool(std::vector<TabularTask> pool) {
  if (pool.empty()) throw PreconditionError("the episode pool is empty");
  pool_ = std::move(pool);
}

void Trainer::ensure_pool() {
  if (pool_.empty()) pool_ = generate_pool(cfg_.generator, cfg_.pool_size, cfg_.pool_rows, cfg_.seed);
}

std::uint64_t Trainer::mask_seed(std::size_t stage, std::size_t step) const {
  return derive_seed(cfg_.seed, {0x3a5c, stage, step});
}

std::vector<std::vector<TabularTask>> Trainer::make_batch(std::size_t stage, std::size_t step) const {
  const StageConfig& sc = cfg_.stages.at(stage);
  Rng rng(derive_seed(cfg_.seed, {0xba7c, stage, step}));
  std::vector<std::vector<TabularTask>> micro(sc.micro_batches);
  for (std::size_t d = 0; d < sc.datasets_per_step; ++d) micro[d % sc.micro_batches].emplace_back();
  for (auto& mb : micro) {
    const std::size_t rows = std::min(sc.sizes.sample(rng), cfg_.pool_rows);
    for (auto& slot : mb) {
      for (std::size_t attempt = 0;; ++attempt) {
        const auto& src = pool_.at(static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<std::int64_t>(pool_.size()) - 1)));
        try {
          slot = subsample_episode(src, rows, rng);
          break;
        } catch (const DataError&) {
          if (attempt >= 20) throw;
        }
      }
    }
  }
  return micro;
}

double Trainer::accumulate_gradients(const std::vector<std::vector<TabularTask>>& micro,
                                     std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& mb : micro) total += mb.size();
  if (total == 0) throw PreconditionError("empty batch");
  model_.parameters().zero_grad();
  ForwardOptions opts;
  opts.mask_seed = seed;
  double loss_sum = 0.0;
  for (const auto& mb : micro) {
    if (mb.empty()) continue;
    Tape tape;
    TapeScope scope(tape);
    Tensor acc;
    for (const auto& task : mb) {
      const Tensor l = model_.loss(task, opts);
      loss_sum += l.item();
      acc = acc.defined() ? add(acc, l) : l;
    }
    tape.backward(scale(acc, 1.0 / static_cast<double>(total)));
  }
  return loss_sum / static_cast<double>(total);
}

StepRecord Trainer::train_step(const std::vector<std::vector<TabularTask>>& micro, double lr,
                               std::uint64_t seed) {
  StepRecord rec;
  try {
    rec.loss = accumulate_gradients(micro, seed);
  } catch (const NumericError& e) {
    save(out_dir_ / "failure_dump.ckpt");
    throw TrainingError(std::string("non-finite value during training: ") + e.what());
  }
  if (!std::isfinite(rec.loss)) {
    save(out_dir_ / "failure_dump.ckpt");
    throw TrainingError("non-finite loss at step " + std::to_string(global_step_ + 1));
  }
  rec.grad_norm = clip_gradients(model_.parameters(), cfg_.clip_norm);
  adam_.step(model_.parameters(), lr);
  rec.lr = lr;
  for (const auto& [name, p] : model_.parameters().items()) {
    if (p.requires_grad()) rec.trainable += p.numel();
  }
  return rec;
}

void Trainer::set_frozen(bool freeze_encoders) {
  for (const auto& [name, p] : model_.parameters().items()) {
    Tensor t = p;
    t.set_requires_grad(!(freeze_encoders && is_encoder_param(name)));
  }
}

void Trainer::save(const fs::path& path) const {
  TensorArchive extra;
  adam_.export_state(extra);
  json meta{{"stage", stage_},
            {"step", step_},
            {"global_step", global_step_},
            {"adam_steps", adam_.steps()},
            {"trainer", trainer_object(cfg_)}};
  save_checkpoint(path, model_, extra, meta.dump());
}

void Trainer::resume(const LoadedCheckpoint& ckpt) {
  json meta;
  try {
    meta = json::parse(ckpt.extra_json);
    stage_ = meta.at("stage").get<std::size_t>();
    step_ = meta.at("step").get<std::size_t>();
    global_step_ = meta.at("global_step").get<std::size_t>();
    adam_.import_state(ckpt.archive, meta.at("adam_steps").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint has no trainer state: ") + e.what());
  }
  // copy weights in case the caller built the model separately
  for (const auto& [name, p] : model_.parameters().items()) {
    const Tensor* src = ckpt.archive.find(name);
    if (!src || src->shape() != p.shape()) throw IoError("checkpoint does not match the model");
    Tensor dst = p;
    std::copy(src->data().begin(), src->data().end(), dst.data().begin());
  }
}

namespace {

// Bounded single-producer queue of prepared batches.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t cap) : cap_(std::max<std::size_t>(1, cap)) {}

  void push(std::vector<std::vector<TabularTask>> b) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(b));
    not_empty_.notify_one();
  }
  void fail(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    error_ = e;
    not_empty_.notify_all();
  }
  std::vector<std::vector<TabularTask>> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !q_.empty() || error_; });
    if (q_.empty()) std::rethrow_exception(error_);
    auto b = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return b;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
  }

 private:
  std::size_t cap_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<std::vector<std::vector<TabularTask>>> q_;
  std::exception_ptr error_;
  bool closed_ = false;
};

}  // namespace

void Trainer::run() {
  std::error_code ec;
  fs::create_directories(out_dir_, ec);
  if (ec) throw IoError("cannot create " + out_dir_.string() + ": " + ec.message());
  ensure_pool();
  std::ofstream log(out_dir_ / "train_log.jsonl", global_step_ == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write the training log");

  for (; stage_ < cfg_.stages.size(); ++stage_, step_ = 0) {
    const StageConfig& sc = cfg_.stages[stage_];
    set_frozen(sc.freeze_encoders);
    BatchQueue queue(cfg_.queue_capacity);
    const std::size_t first = step_, stage = stage_;
    std::thread producer([&, first, stage] {
      try {
        for (std::size_t s = first; s < sc.steps; ++s) queue.push(make_batch(stage, s));
      } catch (...) {
        queue.fail(std::current_exception());
      }
    });
    try {
      for (; step_ < sc.steps; ++step_) {
        const auto batch = queue.pop();
        StepRecord rec =
            train_step(batch, lr_schedule(sc, step_, sc.steps), mask_seed(stage_, step_));
        rec.step = ++global_step_;
        rec.stage = stage_ + 1;
        log << to_json(rec) << '\n';
        log.flush();
        history_.push_back(rec);
        if (callback_) callback_(rec);
        if (cfg_.checkpoint_every > 0 && global_step_ % cfg_.checkpoint_every == 0) {
          ++step_;
          save(out_dir_ / "latest.ckpt");
          --step_;
        }
      }
    } catch (...) {
      queue.close();
      producer.join();
      set_frozen(false);
      throw;
    }
    queue.close();
    producer.join();
    const std::size_t done = stage_;
    ++stage_;
    step_ = 0;
    save(out_dir_ / ("stage" + std::to_string(done + 1) + ".ckpt"));
    --stage_;
  }
  set_frozen(false);
  save(out_dir_ / "model.ckpt");
}

}  // namespace tabmsp
