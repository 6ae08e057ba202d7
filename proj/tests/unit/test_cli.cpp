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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "tabmsp/checkpoint.hpp"
#include "tabmsp/errors.hpp"
#include "tabmsp/table_io.hpp"
#include "test_support.hpp"

namespace tabmsp {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tabmsp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

const char* kTinyConfig = R"({
  "model": {"embed_dim": 8, "inducing_points": 4, "col_heads": 2, "isab_blocks": 1, "col_ff": 16,
            "n_cls": 2, "n_global": 2, "scales": [1, 2], "row_blocks": 2, "row_heads": 2, "row_ff": 16,
            "window": 2, "random_links": 1, "max_features": 8, "memory_slots": 2, "memory_heads": 2,
            "memory_ff": 16, "icl_blocks": 1, "icl_heads": 2, "icl_ff": 16, "max_classes": 3},
  "trainer": {"pool_size": 6, "pool_rows": 48,
              "generator": {"rows": 48, "features_hi": 4, "classes_hi": 3},
              "stages": [
                {"name": "stage1", "steps": 3, "datasets_per_step": 2, "micro_batches": 1,
                 "sizes": "fixed", "size_lo": 24, "size_hi": 24, "freeze_encoders": false,
                 "schedule": "cosine", "base_lr": 0.001},
                {"name": "stage2", "steps": 2, "datasets_per_step": 2, "micro_batches": 2,
                 "sizes": "log_uniform", "size_lo": 16, "size_hi": 40, "freeze_encoders": false,
                 "schedule": "polynomial", "base_lr": 0.0001},
                {"name": "stage3", "steps": 2, "datasets_per_step": 2, "micro_batches": 1,
                 "sizes": "uniform", "size_lo": 30, "size_hi": 48, "freeze_encoders": true,
                 "schedule": "constant", "base_lr": 0.0001}]}
})";

TEST_F(Cli, UsageErrorsAreJsonWithExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{{}, {"bogus"}, {"inspect-mask", "--length", "x"}}) {
    Result r = run(args);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("{\"error\":\"usage\"", 0), 0u) << r.err;
  }
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, InspectMaskDenseHasNoBlanks) {
  Result r = run({"inspect-mask", "--length", "6", "--special", "6"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.find('0', 6), std::string::npos);
  EXPECT_EQ(r.out.rfind("P1\n6 6\n", 0), 0u);
}

TEST_F(Cli, InspectMaskDiagonalAndSpecialCross) {
  Result r = run({"inspect-mask", "--length", "5", "--special", "2", "--window", "0", "--links", "0"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out,
            "P1\n5 5\n"
            "1 1 1 1 1\n"
            "1 1 1 1 1\n"
            "1 1 1 0 0\n"
            "1 1 0 1 0\n"
            "1 1 0 0 1\n");
}

TEST_F(Cli, InspectMaskMatchesEnumerationOracle) {
  const std::size_t len = 14, ns = 3, w = 2, r = 2;
  Result res = run({"inspect-mask", "--length", "14", "--special", "3", "--window", "2", "--links", "2",
                    "--seed", "11", "--out", (dir_ / "m.pbm").string()});
  ASSERT_EQ(res.code, 0);
  SparseMask m = build_block_sparse_mask(len, ns, w, r, 11);
  std::string want = "P1\n14 14\n";
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      bool a = i == j || i < ns || j < ns || (i > j ? i - j : j - i) <= w;
      if (i >= ns) {
        for (auto l : m.links[i - ns]) a = a || l == j;
      }
      want += std::string(j ? " " : "") + (a ? "1" : "0");
    }
    want += "\n";
  }
  EXPECT_EQ(slurp(dir_ / "m.pbm"), want);
}

TEST_F(Cli, InspectMaskSurfacesPreconditions) {
  Result r = run({"inspect-mask", "--length", "4", "--special", "5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("{\"error\":\"precondition\"", 0), 0u) << r.err;
}

TEST_F(Cli, GenerateIsDeterministicAndWellFormed) {
  for (const char* out : {"a", "b"}) {
    Result r = run({"generate", "--n", "4", "--seed", "7", "--rows", "64", "--out", (dir_ / out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("\"episodes\": 4"), std::string::npos);
  }
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    if (!e.is_directory()) continue;
    for (const char* f : {"X.csv", "y.csv", "meta.json"}) {
      EXPECT_EQ(slurp(e.path() / f), slurp(dir_ / "b" / e.path().filename() / f));
    }
    TabularTask t = read_episode(e.path());
    EXPECT_EQ(t.rows(), 64u);
    std::set<std::int64_t> train(t.y.begin(), t.y.begin() + static_cast<std::ptrdiff_t>(t.n_train));
    EXPECT_EQ(train.size(), t.num_classes);
    for (double v : t.x.data()) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_TRUE(fs::exists(dir_ / "a" / "run_config.json"));
}

TEST_F(Cli, GenerateTreePriorIsRecorded) {
  ASSERT_EQ(run({"generate-data", "--n", "3", "--prior", "tree", "--rows", "40", "--out", dir_.string()}).code, 0);
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (!e.is_directory()) continue;
    EXPECT_NE(slurp(e.path() / "meta.json").find("\"tree\""), std::string::npos);
    ++seen;
  }
  EXPECT_EQ(seen, 3u);
}

TEST_F(Cli, GenerateRejectsUnknownOverridesAndUnwritablePaths) {
  Result r = run({"generate", "--out", (dir_ / "x").string(), "--set", "trainer.generator.rowz=3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("{\"error\":\"config\"", 0), 0u) << r.err;
  write(dir_ / "file", "x");
  r = run({"generate", "--n", "1", "--out", (dir_ / "file" / "sub").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("{\"error\":\"io\"", 0), 0u) << r.err;
}

TEST_F(Cli, PretrainWritesArtifactsAndResumeReproduces) {
  write(dir_ / "tiny.json", kTinyConfig);
  const std::string cfg = (dir_ / "tiny.json").string();
  Result r = run({"pretrain", "--config", cfg, "--seed", "5", "--out", (dir_ / "full").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"steps\": 7"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "full" / "run_config.json").find("\"embed_dim\": 8"), std::string::npos);
  std::vector<std::string> lines;
  {
    std::istringstream log(slurp(dir_ / "full" / "train_log.jsonl"));
    for (std::string l; std::getline(log, l);) lines.push_back(l);
  }
  ASSERT_EQ(lines.size(), 7u);
  const auto trainable = [](const std::string& l) { return std::stoul(l.substr(l.find("\"trainable\":") + 12)); };
  EXPECT_LT(trainable(lines[5]), trainable(lines[0]));
  EXPECT_EQ(trainable(lines[4]), trainable(lines[0]));

  r = run({"pretrain", "--config", cfg, "--seed", "5", "--out", (dir_ / "resumed").string(), "--resume",
           (dir_ / "full" / "stage1.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  LoadedCheckpoint a = load_checkpoint(dir_ / "full" / "model.ckpt");
  LoadedCheckpoint b = load_checkpoint(dir_ / "resumed" / "model.ckpt");
  for (const auto& [name, p] : a.model->parameters().items()) {
    ASSERT_TRUE(testing::bitwise_equal(p.data(), b.model->parameters().find(name).data())) << name;
  }
}

TEST_F(Cli, PretrainRefusesOversizedConfigurations) {
  Result r = run({"pretrain", "--model-preset", "full", "--trainer-preset", "full", "--out", dir_.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("estimated peak memory"), std::string::npos) << r.err;
  EXPECT_GT(cli::estimate_training_bytes(ModelConfig::full(), TrainerConfig::full()),
            cli::estimate_training_bytes(ModelConfig::desk(), TrainerConfig::desk()));
}

TEST_F(Cli, PretrainOnArchivedEpisodes) {
  write(dir_ / "tiny.json", kTinyConfig);
  ASSERT_EQ(run({"generate", "--n", "3", "--rows", "48", "--config", (dir_ / "tiny.json").string(), "--out",
                 (dir_ / "data").string()}).code, 0);
  Result r = run({"pretrain", "--config", (dir_ / "tiny.json").string(), "--data", (dir_ / "data").string(),
                  "--out", (dir_ / "run").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  r = run({"pretrain", "--config", (dir_ / "tiny.json").string(), "--data", (dir_ / "none").string(),
           "--out", (dir_ / "run2").string()});
  EXPECT_EQ(r.code, 1);
}

// Trains the tiny model on linear episodes so that predict has something
// better than chance to report.
fs::path linear_checkpoint(const fs::path& dir) {
  write(dir / "lin.json", kTinyConfig);
  Result r = run({"pretrain", "--config", (dir / "lin.json").string(), "--out", (dir / "lin").string(),
                  "--set", "trainer.generator.prior=linear", "--set", "trainer.generator.classes_hi=2",
                  "--set", "trainer.generator.zero_noise=true", "--set", "trainer.pool_size=64",
                  "--set", "trainer.stage1.steps=2000", "--set", "trainer.stage1.base_lr=0.003",
                  "--set", "trainer.stage1.datasets_per_step=4", "--set", "trainer.stage1.freeze_encoders=true"});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir / "lin" / "model.ckpt";
}

void write_sign_tables(const fs::path& dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                       const std::vector<std::string>& names) {
  Rng rng(seed);
  std::ofstream tr(dir / "train.csv"), te(dir / "test.csv");
  tr << "f0,f1,label\n";
  te << "f0,f1\n";
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    const double a = uniform(rng, -1, 1), b = uniform(rng, -1, 1);
    const std::string& y = names[a > 0 ? 1 : 0];
    if (i < n_train) {
      tr << format_double(a) << ',' << format_double(b) << ',' << y << '\n';
    } else {
      te << format_double(a) << ',' << format_double(b) << '\n';
    }
  }
}

TEST_F(Cli, PredictSignLabelsAboveChanceWithDistributions) {
  const fs::path ck = linear_checkpoint(dir_);
  write_sign_tables(dir_, 60, 100, 3, {"0", "1"});
  Result r = run({"predict", "--checkpoint", ck.string(), "--train", (dir_ / "train.csv").string(), "--test",
                  (dir_ / "test.csv").string(), "--label", "label", "--out", (dir_ / "pred.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  CsvTable pred = read_csv(dir_ / "pred.csv"), test = read_csv(dir_ / "test.csv");
  ASSERT_EQ(pred.header, (std::vector<std::string>{"prediction", "p_0", "p_1"}));
  ASSERT_EQ(pred.rows.size(), 100u);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    double s = 0.0, v;
    for (std::size_t k = 1; k < 3; ++k) {
      ASSERT_TRUE(parse_double(pred.rows[i][k], v));
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    ASSERT_TRUE(parse_double(test.rows[i][0], v));
    correct += pred.rows[i][0] == (v > 0 ? "1" : "0");
  }
  EXPECT_GT(correct, 60u);
}

TEST_F(Cli, PredictKeepsTheOriginalVocabulary) {
  write(dir_ / "tiny.json", kTinyConfig);
  ASSERT_EQ(run({"pretrain", "--config", (dir_ / "tiny.json").string(), "--set", "trainer.stage1.steps=1",
                 "--set", "trainer.stage2.steps=1", "--set", "trainer.stage3.steps=1", "--out",
                 (dir_ / "m").string()}).code, 0);
  const std::string ck = (dir_ / "m" / "model.ckpt").string();
  std::ofstream(dir_ / "train.csv") << "x,label\n0.1,2\n0.5,5\n0.9,9\n0.2,2\n";
  std::ofstream(dir_ / "test.csv") << "x\n0.3\n0.8\n";
  Result r = run({"predict", "--checkpoint", ck, "--train", (dir_ / "train.csv").string(), "--test",
                  (dir_ / "test.csv").string(), "--label", "label"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "prediction,p_2,p_5,p_9");
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    const std::string p = line.substr(0, line.find(','));
    EXPECT_TRUE(p == "2" || p == "5" || p == "9") << p;
  }
  std::ofstream(dir_ / "words.csv") << "x,label\n0.1,cat\n0.5,dog\n0.9,eel\n0.2,fox\n0.7,gnu\n";
  r = run({"predict", "--checkpoint", ck, "--train", (dir_ / "words.csv").string(), "--test",
           (dir_ / "test.csv").string(), "--label", "label"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "prediction,p_cat,p_dog,p_eel,p_fox,p_gnu");

  std::ofstream(dir_ / "bad.csv") << "y\n0.3\n";
  r = run({"predict", "--checkpoint", ck, "--train", (dir_ / "train.csv").string(), "--test",
           (dir_ / "bad.csv").string(), "--label", "label"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("{\"error\":\"schema\"", 0), 0u) << r.err;
}

TEST_F(Cli, EvalSelfAndTwoModelScenario) {
  fs::create_directories(dir_ / "truth");
  fs::create_directories(dir_ / "pred" / "oracle");
  fs::create_directories(dir_ / "pred" / "guess");
  std::ofstream(dir_ / "truth" / "d1.csv") << "label\na\nb\nb\na\n";
  std::ofstream(dir_ / "truth" / "d2.csv") << "label\n1\n1\n2\n";
  std::ofstream(dir_ / "pred" / "oracle" / "d1.csv") << "prediction\na\nb\nb\na\n";
  std::ofstream(dir_ / "pred" / "oracle" / "d2.csv") << "prediction\n1\n1\n2\n";
  // d1: 2/4 correct; d2: 2/3 correct
  std::ofstream(dir_ / "pred" / "guess" / "d1.csv") << "prediction\na\na\nb\nb\n";
  std::ofstream(dir_ / "pred" / "guess" / "d2.csv") << "prediction\n1\n1\n1\n";
  Result r = run({"eval", "--predictions", (dir_ / "pred").string(), "--truth", (dir_ / "truth").string(),
                  "--out", (dir_ / "report").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  CsvTable rep = read_csv(dir_ / "report" / "report.csv");
  ASSERT_EQ(rep.header, (std::vector<std::string>{"model", "mean_accuracy", "mean_weighted_f1", "mean_rank"}));
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0][0], "guess");
  double v;
  ASSERT_TRUE(parse_double(rep.rows[0][1], v));
  EXPECT_NEAR(v, (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  // d2 guess F1: class 1 P=2/3 R=1 -> 0.8 (support 2), class 2 -> 0 (support 1)
  ASSERT_TRUE(parse_double(rep.rows[0][2], v));
  EXPECT_NEAR(v, (0.5 + 1.6 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(rep.rows[0][3], "2");
  EXPECT_EQ(rep.rows[1][0], "oracle");
  EXPECT_EQ(rep.rows[1][1], "1");
  EXPECT_EQ(rep.rows[1][3], "1");
  const std::string first = slurp(dir_ / "report" / "report.json");
  ASSERT_EQ(run({"eval", "--predictions", (dir_ / "pred").string(), "--truth", (dir_ / "truth").string(),
                 "--out", (dir_ / "report").string()}).code, 0);
  EXPECT_EQ(slurp(dir_ / "report" / "report.json"), first);

  fs::remove(dir_ / "pred" / "guess" / "d2.csv");
  r = run({"eval", "--predictions", (dir_ / "pred").string(), "--truth", (dir_ / "truth").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("{\"error\":\"coverage\"", 0), 0u) << r.err;
}

}  // namespace
}  // namespace tabmsp
