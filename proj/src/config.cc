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

#include "groundnlq/config.h"

#include <cmath>
#include <set>
#include <sstream>

#include "groundnlq/error.h"

namespace groundnlq {

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Variant> kVariants[] = {{Variant::kBase, "base"}, {Variant::kStar, "star"}};
constexpr EnumName<Split> kSplits[] = {
    {Split::kPretrain, "pretrain"}, {Split::kTrain, "train"}, {Split::kVal, "val"}, {Split::kTest, "test"}};
constexpr EnumName<Stage> kStages[] = {{Stage::kPretrain, "pretrain"}, {Stage::kFinetune, "finetune"}};
constexpr EnumName<NmsMode> kNmsModes[] = {{NmsMode::kSoftGaussian, "soft_gaussian"}, {NmsMode::kHard, "hard"}};

template <typename E, size_t N>
std::string name_of(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, size_t N>
E parse_enum(const EnumName<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(std::string(section) + ": unknown key '" + it.key() + "'");
  }
}

template <typename V>
void read(const Json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    it->get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string to_string(Variant v) { return name_of(kVariants, v); }
std::string to_string(Split s) { return name_of(kSplits, s); }
std::string to_string(Stage s) { return name_of(kStages, s); }
std::string to_string(NmsMode m) { return name_of(kNmsModes, m); }
Variant parse_variant(const std::string& s) { return parse_enum(kVariants, s, "variant"); }
Split parse_split(const std::string& s) { return parse_enum(kSplits, s, "split"); }
Stage parse_stage(const std::string& s) { return parse_enum(kStages, s, "stage"); }
NmsMode parse_nms_mode(const std::string& s) { return parse_enum(kNmsModes, s, "nms mode"); }

void ModelConfig::validate() const {
  require(d_model > 0, "model.d_model must be positive");
  require(n_heads > 0 && d_model % n_heads == 0, "model.n_heads must divide model.d_model");
  require(d_model % 2 == 0, "model.d_model must be even for sinusoidal positions");
  require(window >= 1 && window % 2 == 1, "model.window must be odd and >= 1");
  require(n_text_blocks >= 0 && n_video_blocks >= 0 && n_pyramid_blocks >= 0, "block counts must be >= 0");
  require(ffn_expansion >= 1, "model.ffn_expansion must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "model.dropout must be in [0, 1)");
  require(d_video_in >= 1, "model.d_video_in must be >= 1");
  require(d_text_in >= 1, "model.d_text_in must be >= 1");
}

void AssignmentConfig::validate() const {
  require(!regression_ranges.empty(), "assign.regression_ranges must not be empty");
  require(regression_ranges.front().lower == 0.0, "assign.regression_ranges must start at 0");
  for (size_t i = 0; i < regression_ranges.size(); ++i) {
    const auto& r = regression_ranges[i];
    require(r.upper > r.lower, "assign.regression_ranges must be increasing");
    if (i + 1 < regression_ranges.size()) {
      require(r.upper == regression_ranges[i + 1].lower, "assign.regression_ranges must be contiguous");
    }
  }
  require(std::isinf(regression_ranges.back().upper), "assign.regression_ranges must extend to infinity");
  require(center_sampling_radius > 0.0, "assign.center_sampling_radius must be positive");
  require(focal_alpha >= 0.0 && focal_alpha <= 1.0, "assign.focal_alpha must be in [0, 1]");
  require(focal_gamma >= 0.0, "assign.focal_gamma must be >= 0");
  require(reg_loss_weight >= 0.0, "assign.reg_loss_weight must be >= 0");
}

void DecodeConfig::validate() const {
  require(score_threshold > 0.0 && score_threshold < 1.0, "decode.score_threshold must be in (0, 1)");
  require(hard_iou > 0.0 && hard_iou < 1.0, "decode.hard_iou must be in (0, 1)");
  require(soft_sigma > 0.0, "decode.soft_sigma must be positive");
  require(pre_nms_topk >= 1 && keep_topk >= 1, "decode top-k values must be >= 1");
}

TrainConfig TrainConfig::for_stage(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == Stage::kFinetune) {
    c.max_lr = 1e-4;
    c.reinit_heads = true;
    c.eval_split = Split::kVal;
  }
  return c;
}

void TrainConfig::validate() const {
  require(total_epochs >= 1, "train.total_epochs must be >= 1");
  require(warmup_epochs >= 0 && warmup_epochs < total_epochs, "train.warmup_epochs must be < train.total_epochs");
  require(max_lr > 0.0, "train.max_lr must be positive");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
  require(grad_clip > 0.0, "train.grad_clip must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "train.adam_eps must be positive");
}

void JitterConfig::validate() const {
  require(center_sigma_frac >= 0.0, "jitter.center_sigma_frac must be >= 0");
  require(width_scale_min > 0.0 && width_scale_min <= width_scale_max, "jitter width scales must satisfy 0 < min <= max");
}

void SyntheticConfig::validate() const {
  require(num_videos >= 1, "synth.num_videos must be >= 1");
  require(t_range.first >= 1 && t_range.first <= t_range.second, "synth.t_range must be a nonempty range of positive lengths");
  require(l_range.first >= 1 && l_range.first <= l_range.second, "synth.l_range must be a nonempty range of positive lengths");
  require(d >= 1 && d_t >= 1, "synth feature widths must be >= 1");
  require(queries_per_video >= 1, "synth.queries_per_video must be >= 1");
  require(signal_gain >= 0.0, "synth.signal_gain must be >= 0");
  require(noise_sigma > 0.0, "synth.noise_sigma must be positive");
  require(snippet_duration_sec > 0.0, "synth.snippet_duration_sec must be positive");
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"d_model", c.d_model},         {"n_heads", c.n_heads},
           {"window", c.window},           {"n_text_blocks", c.n_text_blocks},
           {"n_video_blocks", c.n_video_blocks}, {"n_pyramid_blocks", c.n_pyramid_blocks},
           {"ffn_expansion", c.ffn_expansion},   {"dropout", c.dropout},
           {"variant", to_string(c.variant)},    {"d_video_in", c.d_video_in},
           {"d_text_in", c.d_text_in}};
}

void from_json(const Json& j, ModelConfig& c) {
  reject_unknown(j, {"d_model", "n_heads", "window", "n_text_blocks", "n_video_blocks", "n_pyramid_blocks",
                     "ffn_expansion", "dropout", "variant", "d_video_in", "d_text_in"},
                 "model");
  read(j, "d_model", c.d_model);
  read(j, "n_heads", c.n_heads);
  read(j, "window", c.window);
  read(j, "n_text_blocks", c.n_text_blocks);
  read(j, "n_video_blocks", c.n_video_blocks);
  read(j, "n_pyramid_blocks", c.n_pyramid_blocks);
  read(j, "ffn_expansion", c.ffn_expansion);
  read(j, "dropout", c.dropout);
  std::string variant = to_string(c.variant);
  read(j, "variant", variant);
  c.variant = parse_variant(variant);
  read(j, "d_video_in", c.d_video_in);
  read(j, "d_text_in", c.d_text_in);
}

void to_json(Json& j, const AssignmentConfig& c) {
  Json ranges = Json::array();
  for (const auto& r : c.regression_ranges) {
    ranges.push_back(Json::array({r.lower, std::isinf(r.upper) ? Json(nullptr) : Json(r.upper)}));
  }
  j = Json{{"regression_ranges", ranges},
           {"center_sampling_radius", c.center_sampling_radius},
           {"focal_alpha", c.focal_alpha},
           {"focal_gamma", c.focal_gamma},
           {"reg_loss_weight", c.reg_loss_weight}};
}

void from_json(const Json& j, AssignmentConfig& c) {
  reject_unknown(j, {"regression_ranges", "center_sampling_radius", "focal_alpha", "focal_gamma", "reg_loss_weight"},
                 "assign");
  if (auto it = j.find("regression_ranges"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("assign.regression_ranges must be an array");
    c.regression_ranges.clear();
    for (const auto& r : *it) {
      if (!r.is_array() || r.size() != 2 || !r[0].is_number()) {
        throw ConfigError("assign.regression_ranges entries must be [lower, upper|null]");
      }
      RegressionRange range;
      range.lower = r[0].get<double>();
      range.upper = r[1].is_null() ? std::numeric_limits<double>::infinity() : r[1].get<double>();
      c.regression_ranges.push_back(range);
    }
  }
  read(j, "center_sampling_radius", c.center_sampling_radius);
  read(j, "focal_alpha", c.focal_alpha);
  read(j, "focal_gamma", c.focal_gamma);
  read(j, "reg_loss_weight", c.reg_loss_weight);
}

void to_json(Json& j, const DecodeConfig& c) {
  j = Json{{"score_threshold", c.score_threshold}, {"pre_nms_topk", c.pre_nms_topk},
           {"nms", to_string(c.nms)},              {"soft_sigma", c.soft_sigma},
           {"hard_iou", c.hard_iou},               {"keep_topk", c.keep_topk}};
}

void from_json(const Json& j, DecodeConfig& c) {
  reject_unknown(j, {"score_threshold", "pre_nms_topk", "nms", "soft_sigma", "hard_iou", "keep_topk"}, "decode");
  read(j, "score_threshold", c.score_threshold);
  read(j, "pre_nms_topk", c.pre_nms_topk);
  std::string nms = to_string(c.nms);
  read(j, "nms", nms);
  c.nms = parse_nms_mode(nms);
  read(j, "soft_sigma", c.soft_sigma);
  read(j, "hard_iou", c.hard_iou);
  read(j, "keep_topk", c.keep_topk);
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"stage", to_string(c.stage)},
           {"total_epochs", c.total_epochs},
           {"warmup_epochs", c.warmup_epochs},
           {"max_lr", c.max_lr},
           {"batch_size", c.batch_size},
           {"weight_decay", c.weight_decay},
           {"grad_clip", c.grad_clip},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"init_checkpoint", c.init_checkpoint ? Json(*c.init_checkpoint) : Json(nullptr)},
           {"reinit_heads", c.reinit_heads},
           {"eval_split", to_string(c.eval_split)}};
}

void from_json(const Json& j, TrainConfig& c) {
  reject_unknown(j, {"stage", "total_epochs", "warmup_epochs", "max_lr", "batch_size", "weight_decay", "grad_clip",
                     "adam_beta1", "adam_beta2", "adam_eps", "seed", "init_checkpoint", "reinit_heads", "eval_split"},
                 "train");
  std::string stage = to_string(c.stage);
  read(j, "stage", stage);
  c.stage = parse_stage(stage);
  read(j, "total_epochs", c.total_epochs);
  read(j, "warmup_epochs", c.warmup_epochs);
  read(j, "max_lr", c.max_lr);
  read(j, "batch_size", c.batch_size);
  read(j, "weight_decay", c.weight_decay);
  read(j, "grad_clip", c.grad_clip);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "seed", c.seed);
  if (auto it = j.find("init_checkpoint"); it != j.end()) {
    if (it->is_null()) {
      c.init_checkpoint.reset();
    } else if (it->is_string()) {
      c.init_checkpoint = it->get<std::string>();
    } else {
      throw ConfigError("train.init_checkpoint must be a string or null");
    }
  }
  read(j, "reinit_heads", c.reinit_heads);
  std::string split = to_string(c.eval_split);
  read(j, "eval_split", split);
  c.eval_split = parse_split(split);
}

void to_json(Json& j, const JitterConfig& c) {
  j = Json{{"center_sigma_frac", c.center_sigma_frac},
           {"width_scale_min", c.width_scale_min},
           {"width_scale_max", c.width_scale_max},
           {"seed", c.seed}};
}

void from_json(const Json& j, JitterConfig& c) {
  reject_unknown(j, {"center_sigma_frac", "width_scale_min", "width_scale_max", "seed"}, "jitter");
  read(j, "center_sigma_frac", c.center_sigma_frac);
  read(j, "width_scale_min", c.width_scale_min);
  read(j, "width_scale_max", c.width_scale_max);
  read(j, "seed", c.seed);
}

void to_json(Json& j, const SyntheticConfig& c) {
  j = Json{{"num_videos", c.num_videos},
           {"t_range", Json::array({c.t_range.first, c.t_range.second})},
           {"d", c.d},
           {"d_t", c.d_t},
           {"l_range", Json::array({c.l_range.first, c.l_range.second})},
           {"queries_per_video", c.queries_per_video},
           {"signal_gain", c.signal_gain},
           {"noise_sigma", c.noise_sigma},
           {"seed", c.seed},
           {"embedding_seed", c.embedding_seed},
           {"snippet_duration_sec", c.snippet_duration_sec},
           {"split", to_string(c.split)},
           {"id_prefix", c.id_prefix}};
}

void from_json(const Json& j, SyntheticConfig& c) {
  reject_unknown(j, {"num_videos", "t_range", "d", "d_t", "l_range", "queries_per_video", "signal_gain",
                     "noise_sigma", "seed", "embedding_seed", "snippet_duration_sec", "split", "id_prefix"},
                 "synth");
  read(j, "num_videos", c.num_videos);
  read(j, "t_range", c.t_range);
  read(j, "d", c.d);
  read(j, "d_t", c.d_t);
  read(j, "l_range", c.l_range);
  read(j, "queries_per_video", c.queries_per_video);
  read(j, "signal_gain", c.signal_gain);
  read(j, "noise_sigma", c.noise_sigma);
  read(j, "seed", c.seed);
  read(j, "embedding_seed", c.embedding_seed);
  read(j, "snippet_duration_sec", c.snippet_duration_sec);
  std::string split = to_string(c.split);
  read(j, "split", split);
  c.split = parse_split(split);
  read(j, "id_prefix", c.id_prefix);
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json* node = &doc;
  std::stringstream path(key);
  std::string part;
  while (std::getline(path, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("override references unknown key '" + key + "'");
    node = &(*node)[part];
  }
  Json parsed = Json::parse(raw, nullptr, false);
  *node = parsed.is_discarded() ? Json(raw) : parsed;
}

}  // namespace groundnlq
