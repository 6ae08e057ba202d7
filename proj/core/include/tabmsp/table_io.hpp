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

#include <filesystem>
#include <string>
#include <vector>

#include "tabmsp/task.hpp"
#include "tabmsp/tensor.hpp"

namespace tabmsp {

// Header row plus string cells. Quoted fields follow RFC 4180.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws SchemaError when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Shortest representation that parses back to the same double.
std::string format_double(double v);
bool parse_double(const std::string& s, double& out);

// Numeric matrices for `columns` of train and test. A column with any
// non-numeric training cell is categorical: codes follow the sorted
// training categories and unseen test categories map to -1.
struct EncodedTables {
  Tensor train;
  Tensor test;
};
EncodedTables encode_features(const CsvTable& train, const CsvTable& test,
                              const std::vector<std::string>& columns);

// Episode archive: X.csv, y.csv and meta.json in one directory.
void write_episode(const std::filesystem::path& dir, const TabularTask& task);
TabularTask read_episode(const std::filesystem::path& dir);

}  // namespace tabmsp
