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

#ifndef GROUNDNLQ_CONFIG_H_
#define GROUNDNLQ_CONFIG_H_

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace groundnlq {

using Json = nlohmann::ordered_json;

enum class Variant { kBase, kStar };
enum class Split { kPretrain, kTrain, kVal, kTest };
enum class Stage { kPretrain, kFinetune };
enum class NmsMode { kSoftGaussian, kHard };

std::string to_string(Variant v);
std::string to_string(Split s);
std::string to_string(Stage s);
std::string to_string(NmsMode m);
Variant parse_variant(const std::string& s);
Split parse_split(const std::string& s);
Stage parse_stage(const std::string& s);
NmsMode parse_nms_mode(const std::string& s);

struct ModelConfig {
  int d_model = 256;
  int n_heads = 4;
  int window = 9;
  int n_text_blocks = 4;
  int n_video_blocks = 4;
  int n_pyramid_blocks = 6;
  int ffn_expansion = 4;
  double dropout = 0.0;
  Variant variant = Variant::kBase;
  int d_video_in = 0;
  int d_text_in = 0;

  int num_levels() const { return n_pyramid_blocks + 1; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Half-open (lower, upper] interval in snippet units.
struct RegressionRange {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  bool operator==(const RegressionRange&) const = default;
};

struct AssignmentConfig {
  std::vector<RegressionRange> regression_ranges = {
      {0, 4}, {4, 8}, {8, 16}, {16, 32}, {32, 64}, {64, 128},
      {128, std::numeric_limits<double>::infinity()}};
  double center_sampling_radius = 1.5;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double reg_loss_weight = 1.0;

  void validate() const;
  bool operator==(const AssignmentConfig&) const = default;
};

struct DecodeConfig {
  double score_threshold = 1e-3;
  int pre_nms_topk = 2000;
  NmsMode nms = NmsMode::kSoftGaussian;
  double soft_sigma = 0.9;
  double hard_iou = 0.5;
  int keep_topk = 5;

  void validate() const;
  bool operator==(const DecodeConfig&) const = default;
};

// Defaults are sized for a CPU run. Larger runs raise batch_size and the
// model width and keep the schedule.
struct TrainConfig {
  Stage stage = Stage::kPretrain;
  int total_epochs = 10;
  int warmup_epochs = 4;
  double max_lr = 2e-4;
  int batch_size = 8;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<std::string> init_checkpoint;
  bool reinit_heads = false;
  Split eval_split = Split::kVal;

  static TrainConfig for_stage(Stage stage);
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Narration window jittering. Defaults are placeholders: the published
// procedure does not state them.
struct JitterConfig {
  double center_sigma_frac = 0.25;
  double width_scale_min = 0.75;
  double width_scale_max = 1.25;
  std::uint64_t seed = 0;

  bool is_identity() const {
    return center_sigma_frac == 0.0 && width_scale_min == 1.0 && width_scale_max == 1.0;
  }
  void validate() const;
  bool operator==(const JitterConfig&) const = default;
};

struct SyntheticConfig {
  int num_videos = 16;
  std::pair<int, int> t_range = {96, 160};
  int d = 32;
  int d_t = 16;
  std::pair<int, int> l_range = {6, 12};
  int queries_per_video = 1;
  double signal_gain = 2.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  // Shared across splits so that every split plants through the same map.
  std::uint64_t embedding_seed = 0;
  double snippet_duration_sec = 0.53;
  Split split = Split::kTrain;
  std::string id_prefix;

  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const AssignmentConfig& c);
void from_json(const Json& j, AssignmentConfig& c);
void to_json(Json& j, const DecodeConfig& c);
void from_json(const Json& j, DecodeConfig& c);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const JitterConfig& c);
void from_json(const Json& j, JitterConfig& c);
void to_json(Json& j, const SyntheticConfig& c);
void from_json(const Json& j, SyntheticConfig& c);

// Applies "a.b.c=value" to a config document. The key path must already
// exist. The value is parsed as JSON when possible, else taken as a string.
void apply_override(Json& doc, const std::string& assignment);

}  // namespace groundnlq

#endif  // GROUNDNLQ_CONFIG_H_
