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

#ifndef GROUNDNLQ_DATA_H_
#define GROUNDNLQ_DATA_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "groundnlq/config.h"
#include "groundnlq/tensor.h"

namespace groundnlq {

inline constexpr double kDefaultSnippetSec = 0.53;
// Half-width, in snippets, of the window placed around a narration that
// has no clip boundary.
inline constexpr int kNarrationHalfWindowSnippets = 4;

struct Moment {
  double start_sec = 0.0;
  double end_sec = 0.0;

  double width() const { return end_sec - start_sec; }
  double center() const { return 0.5 * (start_sec + end_sec); }
  bool valid() const { return start_sec >= 0.0 && start_sec < end_sec; }
  bool operator==(const Moment&) const = default;
};

// Dense per-snippet features; rows past the valid prefix are padding.
struct FeatureSequence {
  std::string video_id;
  MatrixF data;  // T x D
  double snippet_duration_sec = kDefaultSnippetSec;
  Mask valid_mask;

  int length() const { return static_cast<int>(data.rows()); }
  int width() const { return static_cast<int>(data.cols()); }
  int valid_length() const { return count_valid(valid_mask); }
  double duration_sec() const { return valid_length() * snippet_duration_sec; }
  void validate() const;
};

struct QueryTokens {
  std::string query_id;
  MatrixF data;  // L x D_t
  Mask valid_mask;

  int length() const { return static_cast<int>(data.rows()); }
  int width() const { return static_cast<int>(data.cols()); }
  void validate() const;
};

struct GroundingSample {
  std::string video_id;
  std::string query_id;
  Moment moment;
  Split split = Split::kTrain;
  bool operator==(const GroundingSample&) const = default;
};

struct FeatureMeta {
  int length = 0;
  double snippet_duration_sec = kDefaultSnippetSec;
  double duration_sec() const { return length * snippet_duration_sec; }
};

using FeatureIndex = std::map<std::string, FeatureMeta>;

struct Dataset {
  std::map<std::string, FeatureSequence> videos;
  std::map<std::string, QueryTokens> queries;
  std::vector<GroundingSample> samples;

  std::vector<GroundingSample> split(Split s) const;
  FeatureIndex feature_index() const;
};

// JSON Lines annotations. Records carrying only timestamp_sec get the
// default narration window. With a feature index, moments are clamped to
// the video extent.
std::vector<GroundingSample> load_annotations(const std::filesystem::path& path,
                                              const FeatureIndex* features = nullptr);
void write_annotations(const std::filesystem::path& path, const std::vector<GroundingSample>& samples);

// Raw little-endian float32 raster plus a JSON shape sidecar.
FeatureSequence load_feature_file(const std::filesystem::path& raster);
QueryTokens load_query_file(const std::filesystem::path& raster);
void write_feature_file(const std::filesystem::path& raster, const FeatureSequence& features);
void write_query_file(const std::filesystem::path& raster, const QueryTokens& query);

// Layout: <dir>/annotations.jsonl, <dir>/features/<video_id>.{f32,json},
// <dir>/queries/<query_id>.{f32,json}. Loading is parallel, capped by the
// GROUNDNLQ_NUM_WORKERS environment variable.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

Moment jitter_boundaries(const Moment& moment, double video_duration_sec, const JitterConfig& cfg,
                         std::mt19937_64& rng, double min_width_sec = kDefaultSnippetSec);

struct Narration {
  std::string video_id;
  std::string narration_id;
  double timestamp_sec = 0.0;
  std::optional<Moment> clip_bounds;
};

struct CorpusResult {
  std::vector<GroundingSample> samples;
  int skipped = 0;
};

// One pretraining sample per narration whose video has metadata.
CorpusResult build_pretrain_corpus(const std::vector<Narration>& narrations, const JitterConfig& jitter,
                                   const FeatureIndex& features);
std::vector<Narration> load_narrations(const std::filesystem::path& path);

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg);

}  // namespace groundnlq

#endif  // GROUNDNLQ_DATA_H_
