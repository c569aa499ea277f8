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

#ifndef GROUNDNLQ_CHECKPOINT_H_
#define GROUNDNLQ_CHECKPOINT_H_

#include <filesystem>
#include <map>
#include <string>

#include "groundnlq/config.h"
#include "groundnlq/tensor.h"

namespace groundnlq {

// Parameter values plus a JSON manifest. On disk a checkpoint is a
// directory holding params.bin and manifest.json.
//
// params.bin layout (little-endian):
//   "GNLQPARM" | u32 version | u64 count |
//   count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64 }
struct Checkpoint {
  std::map<std::string, MatrixD> parameters;
  Json manifest;

  ModelConfig model_config() const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
// Rejects a checkpoint whose manifest records a different model config.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected);

void write_parameter_blob(const std::filesystem::path& path, const std::map<std::string, MatrixD>& params);
std::map<std::string, MatrixD> read_parameter_blob(const std::filesystem::path& path);

}  // namespace groundnlq

#endif  // GROUNDNLQ_CHECKPOINT_H_
