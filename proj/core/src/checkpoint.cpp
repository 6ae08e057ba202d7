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

#include "tabmsp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tabmsp/errors.hpp"

namespace tabmsp {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'T', 'M', 'S', 'P', 'C', 'K', 'P', 'T'};

// FNV-1a over the payload.
struct Hasher {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void feed(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(const T& v) {
    raw(&v, sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    hash.feed(p, n);
  }
  Hasher hash;

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, const fs::path& path) : in_(in), path_(path) {}
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw IoError(path_.string() + " is truncated");
    }
    hash.feed(p, n);
  }
  Hasher hash;

 private:
  std::istream& in_;
  const fs::path& path_;
};

}  // namespace

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [k, v] : entries) {
    if (k == name) return &v;
  }
  return nullptr;
}

fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

void write_tensor_archive(const fs::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    Writer w(out);
    w.raw(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(archive.entries.size());
    for (const auto& [name, t] : archive.entries) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
      w.raw(name.data(), name.size());
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) w.put<std::uint64_t>(d);
      w.raw(t.data().data(), t.numel() * sizeof(double));
    }
    const std::uint64_t sum = w.hash.h;
    out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

TensorArchive read_tensor_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  if (count > (1u << 24)) throw IoError(path.string() + " is corrupt (entry count)");
  TensorArchive a;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = r.get<std::uint32_t>();
    if (len > 4096) throw IoError(path.string() + " is corrupt (name length)");
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError(path.string() + " is corrupt (rank)");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      numel *= d;
      if (numel > (std::uint64_t{1} << 34)) throw IoError(path.string() + " is corrupt (shape)");
    }
    std::vector<double> data(numel);
    r.raw(data.data(), numel * sizeof(double));
    a.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const std::uint64_t expect = r.hash.h;
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (in.gcount() != sizeof(stored)) throw IoError(path.string() + " is truncated");
  if (stored != expect) throw IoError(path.string() + " failed its checksum");
  return a;
}

void save_checkpoint(const fs::path& path, const Model& model, const TensorArchive& extra_tensors,
                     const std::string& extra_json) {
  TensorArchive a;
  for (const auto& [name, t] : model.parameters().items()) a.entries.emplace_back(name, t);
  for (const auto& e : extra_tensors.entries) a.entries.push_back(e);
  write_tensor_archive(path, a);

  nlohmann::ordered_json side;
  side["format"] = "tabmsp-checkpoint";
  side["version"] = kCheckpointVersion;
  side["config"] = nlohmann::ordered_json::parse(to_json(model.config()));
  try {
    side["extra"] = nlohmann::ordered_json::parse(extra_json);
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError(std::string("extra checkpoint metadata is not JSON: ") + e.what());
  }
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("missing checkpoint sidecar " + sidecar_path(path).string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint sidecar: " + std::string(e.what()));
  }
  if (side.value("format", "") != "tabmsp-checkpoint") {
    throw IoError(sidecar_path(path).string() + " is not a checkpoint sidecar");
  }
  LoadedCheckpoint out;
  out.model = std::make_unique<Model>(model_config_from_json(side.at("config").dump()));
  out.archive = read_tensor_archive(path);
  for (auto& [name, t] : out.model->parameters().items()) {
    const Tensor* src = out.archive.find(name);
    if (!src) throw IoError("checkpoint lacks parameter " + name);
    if (src->shape() != t.shape()) {
      throw IoError("parameter " + name + " has shape " + shape_str(src->shape()) +
                    ", expected " + shape_str(t.shape()));
    }
    Tensor dst = t;  // shared handle
    std::copy(src->data().begin(), src->data().end(), dst.data().begin());
  }
  out.extra_json = side.contains("extra") ? side["extra"].dump() : "{}";
  return out;
}

}  // namespace tabmsp
