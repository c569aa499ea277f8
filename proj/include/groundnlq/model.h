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

#ifndef GROUNDNLQ_MODEL_H_
#define GROUNDNLQ_MODEL_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/encoder.h"
#include "groundnlq/heads.h"
#include "groundnlq/pyramid.h"

namespace groundnlq {

// Prior foreground probability encoded in the initial classification bias.
inline constexpr double kClassPrior = 0.01;

template <typename T>
struct ForwardResult {
  EmbeddedSequence<T> text;
  EmbeddedSequence<T> video;
  Pyramid<T> pyramid;
  HeadOutputs<T> heads;
};

// The full grounding network: projections, text and video encoders,
// multi-scale pyramid and shared prediction heads. Parameters are named
// tensors; a model is movable but not copyable (tapes point into it).
template <typename T>
class GroundingModel {
 public:
  explicit GroundingModel(const ModelConfig& cfg, std::uint64_t seed = 0);
  GroundingModel(const GroundingModel&) = delete;
  GroundingModel& operator=(const GroundingModel&) = delete;
  GroundingModel(GroundingModel&&) = default;
  GroundingModel& operator=(GroundingModel&&) = default;

  const ModelConfig& config() const { return cfg_; }

  ForwardResult<T> forward(Tape<T>& tape, const FeatureSequence& video, const QueryTokens& query);

  ParameterList<T> parameters();
  ParameterList<T> head_parameters();
  Parameter<T>* find(const std::string& name);

  void initialize(std::uint64_t seed);
  void reinitialize_heads(std::uint64_t seed);
  void zero_grad();

  // Name -> values, as float64 regardless of T.
  std::map<std::string, MatrixD> state() const;
  // Every parameter must be present with a matching shape; head parameters
  // are left untouched when skip_heads is set.
  void load_state(const std::map<std::string, MatrixD>& state, bool skip_heads = false);

  TextProjection<T>& text_projection() { return text_proj_; }
  VideoProjection<T>& video_projection() { return video_proj_; }
  std::vector<TextBlock<T>>& text_blocks() { return text_blocks_; }
  std::vector<VideoBlock<T>>& video_blocks() { return video_blocks_; }
  std::vector<PyramidBlock<T>>& pyramid_blocks() { return pyramid_blocks_; }
  PredictionHead<T>& cls_head() { return cls_head_; }
  PredictionHead<T>& reg_head() { return reg_head_; }

  static bool is_head_parameter(const std::string& name);

 private:
  void init_head_biases();

  ModelConfig cfg_;
  TextProjection<T> text_proj_;
  VideoProjection<T> video_proj_;
  std::vector<TextBlock<T>> text_blocks_;
  std::vector<VideoBlock<T>> video_blocks_;
  std::vector<PyramidBlock<T>> pyramid_blocks_;
  PredictionHead<T> cls_head_;
  PredictionHead<T> reg_head_;
};

}  // namespace groundnlq

#endif  // GROUNDNLQ_MODEL_H_
