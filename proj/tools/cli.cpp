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

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "tabmsp/checkpoint.hpp"
#include "tabmsp/errors.hpp"
#include "tabmsp/eval_harness.hpp"
#include "tabmsp/model.hpp"
#include "tabmsp/rng.hpp"
#include "tabmsp/scm_datagen.hpp"
#include "tabmsp/table_io.hpp"

namespace tabmsp::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

// Model and trainer settings resolved from presets, an optional config
// file ({"model": {...}, "trainer": {...}}), --set overrides and --seed.
struct RunConfig {
  std::string model_preset = "desk";
  std::string trainer_preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  ModelConfig model;
  TrainerConfig trainer;

  void resolve() {
    model = ModelConfig::preset(model_preset);
    trainer = TrainerConfig::preset(trainer_preset);
    if (!config_file.empty()) {
      const json file = parse_json(slurp(config_file), config_file);
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
      for (const auto& [key, value] : file.items()) {
        if (key == "model") {
          json base = json::parse(to_json(model));
          base.merge_patch(value);
          model = model_config_from_json(base.dump());
        } else if (key == "trainer") {
          json base = json::parse(to_json(trainer));
          base.merge_patch(value);
          trainer = trainer_config_from_json(base.dump());
        } else {
          throw ConfigError("unknown config section '" + key + "' (expected model or trainer)");
        }
      }
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
      const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
      if (key.rfind("model.", 0) == 0) {
        apply_override(model, key.substr(6), value);
      } else if (key.rfind("trainer.", 0) == 0) {
        apply_trainer_override(trainer, key.substr(8), value);
      } else {
        throw ConfigError("override key '" + key + "' must start with model. or trainer.");
      }
    }
    if (seed) {
      model.seed = *seed;
      trainer.seed = *seed;
    }
    model.validate();
  }

  json effective() const {
    return {{"model", json::parse(to_json(model))}, {"trainer", json::parse(to_json(trainer))}};
  }
};

void add_config_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", rc.config_file, "JSON file with model and trainer sections")
      ->check(CLI::ExistingFile);
  cmd->add_option("--model-preset", rc.model_preset, "full, desk or micro")->capture_default_str();
  cmd->add_option("--trainer-preset", rc.trainer_preset, "full or desk")->capture_default_str();
  cmd->add_option("--set", rc.overrides, "Override such as model.embed_dim=64 or trainer.stage1.steps=10");
  cmd->add_option("--seed", rc.seed, "Seed for model initialisation and data");
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  RunConfig rc;
  std::size_t count = 10;
  std::string out;
  std::string prior;
  std::size_t rows = 0;
};

void cmd_generate(GenerateArgs& a, std::ostream& out) {
  a.rc.resolve();
  GeneratorConfig gen = a.rc.trainer.generator;
  if (!a.prior.empty()) gen.prior = a.prior;
  if (a.rows > 0) gen.rows = a.rows;
  const fs::path dir(a.out);
  make_dir(dir);
  const std::uint64_t seed = a.rc.trainer.seed;
  std::map<std::string, std::size_t> priors;
  std::map<std::size_t, std::size_t> classes;
  std::size_t total_rows = 0;
  double min_share = 1.0, max_share = 0.0;
  for (std::size_t i = 0; i < a.count; ++i) {
    const TabularTask t = generate_episode(gen, derive_seed(seed, {0x6e9, i}));
    char name[32];
    std::snprintf(name, sizeof name, "episode_%05zu", i);
    write_episode(dir / name, t);
    ++priors[t.prior];
    ++classes[t.num_classes];
    total_rows += t.rows();
    std::map<std::int64_t, std::size_t> counts;
    for (auto y : t.y) ++counts[y];
    for (const auto& [label, c] : counts) {
      const double share = static_cast<double>(c) / static_cast<double>(t.rows());
      min_share = std::min(min_share, share * static_cast<double>(t.num_classes));
      max_share = std::max(max_share, share * static_cast<double>(t.num_classes));
    }
  }
  json effective = a.rc.effective();
  effective["trainer"]["generator"]["prior"] = gen.prior;
  effective["trainer"]["generator"]["rows"] = gen.rows;
  effective["episodes"] = a.count;
  write_text(dir / "run_config.json", effective.dump(2) + "\n");
  json summary{{"command", "generate"},
               {"episodes", a.count},
               {"rows", total_rows},
               {"priors", priors},
               {"class_counts", json::object()},
               {"class_balance", {{"min_share_times_k", a.count ? min_share : 0.0},
                                  {"max_share_times_k", a.count ? max_share : 0.0}}},
               {"out", dir.string()}};
  for (const auto& [k, c] : classes) summary["class_counts"][std::to_string(k)] = c;
  out << summary.dump(2) << "\n";
}

// ---- pretrain ---------------------------------------------------------------

struct PretrainArgs {
  RunConfig rc;
  std::string out;
  std::string data;
  std::string resume;
  double max_memory_gb = 16.0;
};

std::vector<TabularTask> read_archives(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> eps;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) eps.push_back(e.path());
  }
  std::sort(eps.begin(), eps.end());
  if (eps.empty()) throw DataError("no episode archives under " + dir.string());
  std::vector<TabularTask> pool;
  for (const auto& p : eps) pool.push_back(read_episode(p));
  return pool;
}

void cmd_pretrain(PretrainArgs& a, std::ostream& out) {
  a.rc.resolve();
  const double need = estimate_training_bytes(a.rc.model, a.rc.trainer);
  const double limit = a.max_memory_gb * 1024.0 * 1024.0 * 1024.0;
  if (need > limit) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "estimated peak memory %.1f GiB exceeds the %.1f GiB limit",
                  need / (1024.0 * 1024.0 * 1024.0), a.max_memory_gb);
    throw ConfigError(msg);
  }
  const fs::path dir(a.out);
  make_dir(dir);
  std::unique_ptr<Model> owned;
  std::optional<LoadedCheckpoint> ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    a.rc.model = ck->model->config();
  } else {
    owned = std::make_unique<Model>(a.rc.model);
  }
  Model& model = ck ? *ck->model : *owned;
  write_text(dir / "run_config.json", a.rc.effective().dump(2) + "\n");
  Trainer trainer(model, a.rc.trainer, dir);
  if (!a.data.empty()) trainer.set_pool(read_archives(a.data));
  if (ck) trainer.resume(*ck);
  trainer.run();
  const auto& h = trainer.history();
  json summary{{"command", "pretrain"},
               {"steps", h.size()},
               {"parameters", model.parameters().numel()},
               {"first_loss", h.empty() ? 0.0 : h.front().loss},
               {"last_loss", h.empty() ? 0.0 : h.back().loss},
               {"checkpoint", (dir / "model.ckpt").string()},
               {"log", (dir / "train_log.jsonl").string()}};
  out << summary.dump(2) << "\n";
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, train, test, label, out;
  std::uint64_t mask_seed = 0;
};

// Label vocabulary: integer labels keep their values, anything else is
// coded by sorted order.
struct LabelVocab {
  bool integral = true;
  std::vector<std::string> names;

  static LabelVocab fit(const std::vector<std::string>& cells) {
    LabelVocab v;
    for (const auto& c : cells) {
      std::int64_t x;
      std::size_t used = 0;
      try {
        x = std::stoll(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      (void)x;
      if (used == 0 || used != c.size()) v.integral = false;
    }
    if (!v.integral) {
      std::set<std::string> s(cells.begin(), cells.end());
      v.names.assign(s.begin(), s.end());
    }
    return v;
  }
  std::int64_t encode(const std::string& c) const {
    if (integral) return std::stoll(c);
    auto it = std::lower_bound(names.begin(), names.end(), c);
    if (it == names.end() || *it != c) throw DataError("unknown label '" + c + "'");
    return it - names.begin();
  }
  std::string decode(std::int64_t v) const {
    return integral ? std::to_string(v) : names.at(static_cast<std::size_t>(v));
  }
};

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const CsvTable train = read_csv(a.train), test = read_csv(a.test);
  const std::size_t label_col = train.column(a.label);
  std::vector<std::string> features;
  for (std::size_t j = 0; j < train.header.size(); ++j) {
    if (j != label_col) features.push_back(train.header[j]);
  }
  if (features.empty()) throw SchemaError("the training table has no feature columns");
  if (train.rows.empty() || test.rows.empty()) throw DataError("train and test tables need at least one row");
  for (const auto& f : features) test.column(f);
  const EncodedTables enc = encode_features(train, test, features);
  std::vector<std::string> cells;
  for (const auto& r : train.rows) cells.push_back(r[label_col]);
  const LabelVocab vocab = LabelVocab::fit(cells);
  std::vector<std::int64_t> y;
  for (const auto& c : cells) y.push_back(vocab.encode(c));

  const std::size_t nt = train.rows.size(), ne = test.rows.size(), m = features.size();
  Tensor x({nt + ne, m});
  std::copy(enc.train.data().begin(), enc.train.data().end(), x.data().begin());
  std::copy(enc.test.data().begin(), enc.test.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(nt * m));
  const Prediction p = ck.model->predict(x, y, {.mask_seed = a.mask_seed});

  const auto& labels = p.codec.labels();
  CsvTable result;
  result.header.push_back("prediction");
  for (auto l : labels) result.header.push_back("p_" + vocab.decode(l));
  for (std::size_t i = 0; i < ne; ++i) {
    std::vector<std::string> row{vocab.decode(p.labels[i])};
    for (std::size_t k = 0; k < labels.size(); ++k) row.push_back(format_double(p.probs[i * labels.size() + k]));
    result.rows.push_back(std::move(row));
  }
  if (a.out.empty()) {
    out << "prediction";
    for (std::size_t k = 1; k < result.header.size(); ++k) out << ',' << result.header[k];
    out << '\n';
    for (const auto& r : result.rows) {
      for (std::size_t k = 0; k < r.size(); ++k) out << (k ? "," : "") << r[k];
      out << '\n';
    }
    return;
  }
  write_csv(a.out, result);
  json summary{{"command", "predict"},       {"rows", ne},
               {"classes", labels.size()},   {"hierarchical", labels.size() > ck.model->config().max_classes},
               {"mask_seed", a.mask_seed},   {"model", json::parse(to_json(ck.model->config()))},
               {"out", a.out}};
  out << summary.dump(2) << "\n";
}

// ---- inspect-mask -----------------------------------------------------------

struct MaskArgs {
  std::size_t length = 0, special = 0, window = 0, links = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_inspect_mask(const MaskArgs& a, std::ostream& out) {
  const std::string grid = render_mask(build_block_sparse_mask(a.length, a.special, a.window, a.links, a.seed));
  if (a.out.empty()) {
    out << grid;
  } else {
    write_text(a.out, grid);
  }
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string predictions, truth, out;
  std::string truth_column = "label";
  std::string prediction_column = "prediction";
};

std::vector<std::string> column_cells(const fs::path& path, const std::string& column) {
  const CsvTable t = read_csv(path);
  const std::size_t c = t.column(column);
  std::vector<std::string> v;
  for (const auto& r : t.rows) v.push_back(r.at(c));
  return v;
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const fs::path truth_dir(a.truth), pred_dir(a.predictions);
  if (!fs::is_directory(truth_dir)) throw IoError("truth directory " + a.truth + " does not exist");
  if (!fs::is_directory(pred_dir)) throw IoError("predictions directory " + a.predictions + " does not exist");
  std::map<std::string, std::vector<std::string>> truth;
  for (const auto& e : fs::directory_iterator(truth_dir)) {
    if (e.path().extension() == ".csv") truth[e.path().stem().string()] = column_cells(e.path(), a.truth_column);
  }
  if (truth.empty()) throw CoverageError("no truth files under " + a.truth);
  std::vector<fs::path> models;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (e.is_directory()) models.push_back(e.path());
  }
  std::sort(models.begin(), models.end());
  if (models.empty()) throw CoverageError("no model directories under " + a.predictions);

  std::map<std::string, std::int64_t> ids;
  auto id = [&](const std::string& s) { return ids.emplace(s, static_cast<std::int64_t>(ids.size())).first->second; };
  std::vector<EvalRecord> records;
  for (const auto& mdir : models) {
    const std::string model = mdir.filename().string();
    std::set<std::string> seen;
    for (const auto& e : fs::directory_iterator(mdir)) {
      if (e.path().extension() != ".csv") continue;
      const std::string ds = e.path().stem().string();
      auto it = truth.find(ds);
      if (it == truth.end()) throw CoverageError("model " + model + " has predictions for unknown dataset " + ds);
      const auto pred = column_cells(e.path(), a.prediction_column);
      if (pred.size() != it->second.size()) {
        throw SchemaError("model " + model + " dataset " + ds + ": " + std::to_string(pred.size()) +
                          " predictions for " + std::to_string(it->second.size()) + " truth rows");
      }
      std::vector<std::int64_t> p, t;
      for (const auto& s : pred) p.push_back(id(s));
      for (const auto& s : it->second) t.push_back(id(s));
      records.push_back({ds, model, accuracy(p, t), weighted_f1(p, t)});
      seen.insert(ds);
    }
    for (const auto& [ds, _] : truth) {
      if (!seen.count(ds)) throw CoverageError("model " + model + " is missing dataset " + ds);
    }
  }
  std::sort(records.begin(), records.end(), [](const EvalRecord& x, const EvalRecord& y) {
    return std::tie(x.model, x.dataset) < std::tie(y.model, y.dataset);
  });
  const auto ranks = mean_rank(records);
  json report{{"datasets", truth.size()}, {"models", json::object()}, {"records", json::array()}};
  std::map<std::string, std::pair<double, double>> means;
  for (const auto& r : records) {
    report["records"].push_back({{"model", r.model}, {"dataset", r.dataset}, {"accuracy", r.accuracy},
                                 {"weighted_f1", r.weighted_f1}});
    means[r.model].first += r.accuracy / static_cast<double>(truth.size());
    means[r.model].second += r.weighted_f1 / static_cast<double>(truth.size());
  }
  CsvTable csv{{"model", "mean_accuracy", "mean_weighted_f1", "mean_rank"}, {}};
  for (const auto& [model, acc_f1] : means) {
    report["models"][model] = {{"mean_accuracy", acc_f1.first},
                               {"mean_weighted_f1", acc_f1.second},
                               {"mean_rank", ranks.at(model)}};
    csv.rows.push_back({model, format_double(acc_f1.first), format_double(acc_f1.second),
                        format_double(ranks.at(model))});
  }
  if (!a.out.empty()) {
    make_dir(a.out);
    write_text(fs::path(a.out) / "report.json", report.dump(2) + "\n");
    write_csv(fs::path(a.out) / "report.csv", csv);
  }
  out << report.dump(2) << "\n";
}

}  // namespace

std::string render_mask(const SparseMask& mask) {
  std::string s = "P1\n" + std::to_string(mask.size) + " " + std::to_string(mask.size) + "\n";
  for (std::size_t i = 0; i < mask.size; ++i) {
    for (std::size_t j = 0; j < mask.size; ++j) {
      if (j > 0) s += ' ';
      s += mask.mask.allowed(i, j) ? '1' : '0';
    }
    s += '\n';
  }
  return s;
}

std::string error_json(const std::exception& e) {
  std::string kind = "internal";
  if (const auto* te = dynamic_cast<const Error*>(&e)) kind = te->kind();
  return json{{"error", kind}, {"message", e.what()}}.dump();
}

double estimate_training_bytes(const ModelConfig& m, const TrainerConfig& t) {
  const double params = static_cast<double>(Model(m).parameters().numel());
  double rows = 0.0;
  for (const auto& s : t.stages) rows = std::max(rows, static_cast<double>(s.sizes.hi));
  rows = std::min(rows, static_cast<double>(t.pool_rows));
  const double feats = static_cast<double>(std::min(t.generator.features_hi, m.max_features));
  const double d = static_cast<double>(m.embed_dim), dr = static_cast<double>(m.row_dim());
  const double tokens = feats + static_cast<double>(m.reserved_slots());
  // Taped intermediates per stage, counted in doubles.
  const double col = rows * feats * d * 16.0 * static_cast<double>(m.isab_blocks) +
                     rows * feats * static_cast<double>(m.inducing_points) * static_cast<double>(m.col_heads) * 4.0;
  const double row = rows * tokens * (tokens * static_cast<double>(m.row_heads) + 12.0 * d) *
                     static_cast<double>(m.row_blocks);
  const double icl = rows * (rows * static_cast<double>(m.icl_heads) + 12.0 * dr) *
                     static_cast<double>(m.icl_blocks);
  return 8.0 * (4.0 * params + col + row + icl);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tabular in-context classification with multi-scale sparse attention", "tabmsp"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* g = app.add_subcommand("generate", "Write synthetic episode archives");
  g->alias("generate-data");
  add_config_options(g, gen.rc);
  g->add_option("--n", gen.count, "Number of episodes")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--prior", gen.prior, "mlp, tree, mix or linear");
  g->add_option("--rows", gen.rows, "Rows per episode");

  PretrainArgs pre;
  CLI::App* p = app.add_subcommand("pretrain", "Run the pretraining curriculum");
  add_config_options(p, pre.rc);
  p->add_option("--out", pre.out, "Output directory for checkpoints and the log")->required();
  p->add_option("--data", pre.data, "Directory of episode archives to train on");
  p->add_option("--resume", pre.resume, "Checkpoint written by an interrupted run")->check(CLI::ExistingFile);
  p->add_option("--max-memory-gb", pre.max_memory_gb, "Refuse configurations estimated above this")
      ->capture_default_str();

  PredictArgs pred;
  CLI::App* pr = app.add_subcommand("predict", "Zero-shot prediction on CSV tables");
  pr->add_option("--checkpoint", pred.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--train", pred.train, "Labelled context CSV")->required()->check(CLI::ExistingFile);
  pr->add_option("--test", pred.test, "Query CSV")->required()->check(CLI::ExistingFile);
  pr->add_option("--label", pred.label, "Label column of the training CSV")->required();
  pr->add_option("--out", pred.out, "Predictions CSV; stdout when omitted");
  pr->add_option("--seed,--mask-seed", pred.mask_seed, "Random-link seed")->capture_default_str();

  MaskArgs mask;
  CLI::App* mk = app.add_subcommand("inspect-mask", "Print a row-attention mask as a PBM grid");
  mk->add_option("--length", mask.length, "Sequence length L")->required();
  mk->add_option("--special", mask.special, "Number of CLS and GLOBAL tokens")->required();
  mk->add_option("--window", mask.window, "Half-width w of the local window")->capture_default_str();
  mk->add_option("--links", mask.links, "Random links r per feature token")->capture_default_str();
  mk->add_option("--seed", mask.seed, "Random-link seed")->capture_default_str();
  mk->add_option("--out", mask.out, "Output file; stdout when omitted");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Score prediction files against truth files");
  e->add_option("--predictions", ev.predictions, "Directory with one sub-directory of CSVs per model")->required();
  e->add_option("--truth", ev.truth, "Directory with one CSV per dataset")->required();
  e->add_option("--out", ev.out, "Directory for report.json and report.csv");
  e->add_option("--truth-column", ev.truth_column)->capture_default_str();
  e->add_option("--prediction-column", ev.prediction_column)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << json{{"error", "usage"}, {"message", pe.what()}}.dump() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) {
      cmd_generate(gen, out);
    } else if (p->parsed()) {
      cmd_pretrain(pre, out);
    } else if (pr->parsed()) {
      cmd_predict(pred, out);
    } else if (mk->parsed()) {
      cmd_inspect_mask(mask, out);
    } else if (e->parsed()) {
      cmd_eval(ev, out);
    }
  } catch (const std::exception& ex) {
    err << error_json(ex) << "\n";
    return kExitFailure;
  }
  return 0;
}

}  // namespace tabmsp::cli
