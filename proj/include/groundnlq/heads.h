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

#ifndef GROUNDNLQ_HEADS_H_
#define GROUNDNLQ_HEADS_H_

#include <vector>

#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/pyramid.h"

namespace groundnlq {

// Logit written at padded positions in place of -inf.
inline constexpr double kInvalidLogit = -1e4;

template <typename T>
struct HeadLevel {
  Var<T> logits;     // T_l x 1, pre-sigmoid
  Var<T> distances;  // T_l x 2, (start, end) offsets in stride units, >= 0
  Mask mask;
  int stride = 1;
};

template <typename T>
struct HeadOutputs {
  std::vector<HeadLevel<T>> levels;
};

// conv(k3) -> layer norm -> ReLU -> conv(k3) to `channels` outputs.
template <typename T>
struct PredictionHead {
  Conv1d<T> conv1;
  LayerNorm<T> norm;
  Conv1d<T> conv2;

  PredictionHead() = default;
  PredictionHead(const std::string& name, int width, int channels);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const Mask& mask);
  void collect(ParameterList<T>& out);
};

// One classification head and one regression head shared by every level.
template <typename T>
HeadOutputs<T> head_forward(const Pyramid<T>& pyramid, PredictionHead<T>& cls_head, PredictionHead<T>& reg_head);

struct LevelTargets {
  Mask foreground;
  MatrixD targets;  // T_l x 2, meaningful only on foreground rows
  int stride = 1;
};

struct LabelTargets {
  std::vector<LevelTargets> levels;
  int num_foreground() const;
};

// Anchor-free assignment over the pyramid of a length-T video. A location
// at level l, index i sits at t = (i + 0.5) * 2^l snippets and is
// foreground iff it lies inside the moment, its farther boundary distance
// falls in the level's regression range, and it is within the center
// sampling radius (waived for moments shorter than the sampling span).
// When nothing qualifies the level-0 location nearest the moment center is
// used.
LabelTargets assign_labels(int length, double snippet_duration_sec, const Moment& moment,
                           const AssignmentConfig& cfg);

// Sigmoid focal loss over valid positions, normalized by max(1, #fg).
template <typename T>
Var<T> focal_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets, const AssignmentConfig& cfg);

// Mean distance-IoU loss over foreground positions; 0 without foreground.
template <typename T>
Var<T> diou_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets);

template <typename T>
struct LossBreakdown {
  Var<T> total;
  double classification = 0.0;
  double regression = 0.0;
  int num_foreground = 0;
};

template <typename T>
LossBreakdown<T> total_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets, const AssignmentConfig& cfg);

}  // namespace groundnlq

#endif  // GROUNDNLQ_HEADS_H_
