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

#include "tabmsp/table_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tabmsp/errors.hpp"

namespace tabmsp {

namespace fs = std::filesystem;

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split_record(std::istream& in, bool& ok) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false, any = false;
  ok = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!any) return out;
  if (quoted) throw SchemaError("unterminated quoted field");
  out.push_back(std::move(field));
  ok = true;
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  bool ok = false;
  t.header = split_record(in, ok);
  if (!ok || t.header.empty()) throw SchemaError(path.string() + " has no header row");
  std::size_t line = 1;
  while (true) {
    auto rec = split_record(in, ok);
    if (!ok) break;
    ++line;
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != t.header.size()) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + " has " +
                        std::to_string(rec.size()) + " fields, expected " +
                        std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(rec));
  }
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i) out << ',';
      out << quote(rec[i]);
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_double(const std::string& s, double& out) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  if (b == e) return false;
  if (s[b] == '+') ++b;
  const auto res = std::from_chars(s.data() + b, s.data() + e, out);
  return res.ec == std::errc() && res.ptr == s.data() + e;
}

EncodedTables encode_features(const CsvTable& train, const CsvTable& test,
                              const std::vector<std::string>& columns) {
  const std::size_t m = columns.size(), nr = train.rows.size(), ne = test.rows.size();
  EncodedTables out{Tensor(Shape{nr, m}), Tensor(Shape{ne, m})};
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t ci = train.column(columns[j]);
    const std::size_t ce = test.column(columns[j]);
    bool numeric = true;
    double v;
    for (const auto& r : train.rows) {
      if (!parse_double(r[ci], v)) {
        numeric = false;
        break;
      }
    }
    if (numeric) {
      for (std::size_t i = 0; i < nr; ++i) {
        parse_double(train.rows[i][ci], v);
        out.train[i * m + j] = v;
      }
      for (std::size_t i = 0; i < ne; ++i) {
        if (!parse_double(test.rows[i][ce], v)) {
          throw SchemaError("column '" + columns[j] + "' is numeric in train but test row " +
                            std::to_string(i + 1) + " holds '" + test.rows[i][ce] + "'");
        }
        out.test[i * m + j] = v;
      }
      continue;
    }
    std::vector<std::string> cats;
    for (const auto& r : train.rows) cats.push_back(r[ci]);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    auto code = [&](const std::string& s) {
      const auto it = std::lower_bound(cats.begin(), cats.end(), s);
      return it != cats.end() && *it == s ? static_cast<double>(it - cats.begin()) : -1.0;
    };
    for (std::size_t i = 0; i < nr; ++i) out.train[i * m + j] = code(train.rows[i][ci]);
    for (std::size_t i = 0; i < ne; ++i) out.test[i * m + j] = code(test.rows[i][ce]);
  }
  return out;
}

void write_episode(const fs::path& dir, const TabularTask& task) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t n = task.rows(), m = task.features();
  CsvTable x;
  for (std::size_t j = 0; j < m; ++j) x.header.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> r;
    for (std::size_t j = 0; j < m; ++j) r.push_back(format_double(task.x[i * m + j]));
    x.rows.push_back(std::move(r));
  }
  write_csv(dir / "X.csv", x);
  CsvTable y;
  y.header = {"label"};
  for (auto v : task.y) y.rows.push_back({std::to_string(v)});
  write_csv(dir / "y.csv", y);
  nlohmann::ordered_json meta;
  meta["prior"] = task.prior;
  meta["seed"] = task.seed;
  meta["num_classes"] = task.num_classes;
  meta["n_train"] = task.n_train;
  meta["rows"] = n;
  meta["features"] = m;
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write meta.json in " + dir.string());
  out << meta.dump(2) << '\n';
}

TabularTask read_episode(const fs::path& dir) {
  const CsvTable x = read_csv(dir / "X.csv");
  const CsvTable y = read_csv(dir / "y.csv");
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("cannot open " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json in " + dir.string() + ": " + e.what());
  }
  if (x.rows.size() != y.rows.size()) throw SchemaError("X.csv and y.csv row counts differ");
  TabularTask t;
  const std::size_t n = x.rows.size(), m = x.header.size();
  t.x = Tensor(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!parse_double(x.rows[i][j], t.x[i * m + j])) {
        throw SchemaError("non-numeric cell in " + (dir / "X.csv").string());
      }
    }
    double v;
    if (!parse_double(y.rows[i][0], v)) throw SchemaError("non-numeric label in y.csv");
    t.y.push_back(static_cast<std::int64_t>(v));
  }
  try {
    t.prior = meta.at("prior").get<std::string>();
    t.seed = meta.at("seed").get<std::uint64_t>();
    t.num_classes = meta.at("num_classes").get<std::size_t>();
    t.n_train = meta.at("n_train").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("meta.json in " + dir.string() + ": " + e.what());
  }
  if (t.n_train == 0 || t.n_train >= n) throw SchemaError("meta.json n_train out of range");
  return t;
}

}  // namespace tabmsp
