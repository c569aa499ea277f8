// Copyright 2026 The GroundNLQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "groundnlq/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "groundnlq/error.h"

namespace groundnlq {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'G', 'N', 'L', 'Q', 'P', 'A', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::ostream& out, U value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in, const fs::path& path) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) throw FormatError(path.string() + ": truncated parameter blob");
  return value;
}

}  // namespace

ModelConfig Checkpoint::model_config() const {
  if (!manifest.contains("model")) throw FormatError("checkpoint manifest lacks a model config");
  try {
    return manifest.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

void write_parameter_blob(const fs::path& path, const std::map<std::string, MatrixD>& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, value] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(value.cols()));
    out.write(reinterpret_cast<const char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::map<std::string, MatrixD> read_parameter_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + ": not a parameter blob");
  if (get<std::uint32_t>(in, path) != kVersion) throw FormatError(path.string() + ": unsupported blob version");
  const auto count = get<std::uint64_t>(in, path);
  std::map<std::string, MatrixD> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (rows > (1u << 24) || cols > (1u << 24)) throw FormatError(path.string() + ": implausible tensor shape");
    MatrixD m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw FormatError(path.string() + ": truncated parameter blob");
    params.emplace(std::move(name), std::move(m));
  }
  return params;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  write_parameter_blob(dir / "params.bin", ckpt.parameters);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << ckpt.manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  Checkpoint ckpt;
  ckpt.parameters = read_parameter_blob(dir / "params.bin");
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  ckpt.manifest = Json::parse(in, nullptr, false);
  if (ckpt.manifest.is_discarded()) throw ParseError("malformed manifest in " + dir.string());
  return ckpt;
}

Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (!(ckpt.model_config() == expected)) {
    throw ConfigError("checkpoint " + dir.string() + " was trained with a different model config");
  }
  return ckpt;
}

}  // namespace groundnlq
