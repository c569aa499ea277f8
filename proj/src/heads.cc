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

#include "groundnlq/heads.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "groundnlq/error.h"

namespace groundnlq {

namespace {

// Floor for fallback targets when the nearest location falls just outside
// a sub-snippet moment.
constexpr double kMinTarget = 1e-3;

}  // namespace

template <typename T>
PredictionHead<T>::PredictionHead(const std::string& name, int width, int channels)
    : conv1(name + ".conv1", width, width), norm(name + ".norm", width), conv2(name + ".conv2", width, channels) {}

template <typename T>
Var<T> PredictionHead<T>::operator()(Tape<T>& tape, const Var<T>& x, const Mask& mask) {
  Var<T> h = ag::relu(norm(tape, conv1(tape, x, mask)));
  return conv2(tape, h, mask);
}

template <typename T>
void PredictionHead<T>::collect(ParameterList<T>& out) {
  conv1.collect(out);
  norm.collect(out);
  conv2.collect(out);
}

template <typename T>
HeadOutputs<T> head_forward(const Pyramid<T>& pyramid, PredictionHead<T>& cls_head, PredictionHead<T>& reg_head) {
  HeadOutputs<T> out;
  for (const auto& level : pyramid.levels) {
    Tape<T>& tape = *level.data.tape();
    HeadLevel<T> h;
    h.logits = ag::fill_invalid(cls_head(tape, level.data, level.mask), level.mask, static_cast<T>(kInvalidLogit));
    h.distances = ag::mask_rows(ag::softplus(reg_head(tape, level.data, level.mask)), level.mask);
    h.mask = level.mask;
    h.stride = level.stride;
    out.levels.push_back(std::move(h));
  }
  return out;
}

int LabelTargets::num_foreground() const {
  int n = 0;
  for (const auto& l : levels) n += count_valid(l.foreground);
  return n;
}

LabelTargets assign_labels(int length, double snippet_duration_sec, const Moment& moment, const AssignmentConfig& cfg) {
  if (length < 1) throw ValidationError("assign_labels: length must be >= 1");
  if (!(snippet_duration_sec > 0.0)) throw ValidationError("assign_labels: snippet duration must be positive");
  if (!moment.valid()) throw ValidationError("assign_labels: invalid moment");
  const double s = moment.start_sec / snippet_duration_sec;
  const double e = moment.end_sec / snippet_duration_sec;
  const double center = 0.5 * (s + e);

  LabelTargets out;
  const int num_levels = static_cast<int>(cfg.regression_ranges.size());
  for (int l = 0; l < num_levels; ++l) {
    const int n = pyramid_level_length(length, l);
    const double stride = std::ldexp(1.0, l);
    const RegressionRange& range = cfg.regression_ranges[static_cast<size_t>(l)];
    const double radius = cfg.center_sampling_radius * stride;
    const bool short_moment = (e - s) < 2.0 * radius;
    LevelTargets lt;
    lt.foreground.assign(static_cast<size_t>(n), 0);
    lt.targets = MatrixD::Zero(n, 2);
    lt.stride = static_cast<int>(stride);
    for (int i = 0; i < n; ++i) {
      const double t = (i + 0.5) * stride;
      if (t < s || t > e) continue;
      const double reach = std::max(t - s, e - t);
      if (!(reach > range.lower && reach <= range.upper)) continue;
      if (!short_moment && std::abs(t - center) > radius) continue;
      lt.foreground[static_cast<size_t>(i)] = 1;
      lt.targets(i, 0) = (t - s) / stride;
      lt.targets(i, 1) = (e - t) / stride;
    }
    out.levels.push_back(std::move(lt));
  }

  if (out.num_foreground() == 0) {
    int best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < length; ++i) {
      const double gap = std::abs(i + 0.5 - center);
      if (gap < best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    const double t = best + 0.5;
    LevelTargets& l0 = out.levels.front();
    l0.foreground[static_cast<size_t>(best)] = 1;
    l0.targets(best, 0) = std::max(t - s, kMinTarget);
    l0.targets(best, 1) = std::max(e - t, kMinTarget);
  }
  return out;
}

template <typename T>
Var<T> focal_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets, const AssignmentConfig& cfg) {
  if (outputs.levels.size() != targets.levels.size()) throw std::invalid_argument("focal_loss: level count mismatch");
  Var<T> total;
  for (size_t l = 0; l < outputs.levels.size(); ++l) {
    const auto& h = outputs.levels[l];
    Var<T> term = ag::focal_loss_sum(h.logits, targets.levels[l].foreground, h.mask, static_cast<T>(cfg.focal_alpha),
                                     static_cast<T>(cfg.focal_gamma));
    total = total.valid() ? ag::add(total, term) : term;
  }
  const int fg = targets.num_foreground();
  return ag::scale(total, static_cast<T>(1.0 / std::max(1, fg)));
}

template <typename T>
Var<T> diou_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets) {
  if (outputs.levels.size() != targets.levels.size()) throw std::invalid_argument("diou_loss: level count mismatch");
  Var<T> total;
  for (size_t l = 0; l < outputs.levels.size(); ++l) {
    const auto& h = outputs.levels[l];
    Var<T> term = ag::diou_loss_sum(h.distances, targets.levels[l].targets.cast<T>().eval(), targets.levels[l].foreground);
    total = total.valid() ? ag::add(total, term) : term;
  }
  const int fg = targets.num_foreground();
  return ag::scale(total, static_cast<T>(fg > 0 ? 1.0 / fg : 0.0));
}

template <typename T>
LossBreakdown<T> total_loss(const HeadOutputs<T>& outputs, const LabelTargets& targets, const AssignmentConfig& cfg) {
  LossBreakdown<T> out;
  Var<T> cls = focal_loss(outputs, targets, cfg);
  Var<T> reg = diou_loss(outputs, targets);
  out.classification = static_cast<double>(cls.value()(0, 0));
  out.regression = static_cast<double>(reg.value()(0, 0));
  out.num_foreground = targets.num_foreground();
  out.total = ag::add(cls, ag::scale(reg, static_cast<T>(cfg.reg_loss_weight)));
  return out;
}

template struct PredictionHead<float>;
template struct PredictionHead<double>;
template HeadOutputs<float> head_forward(const Pyramid<float>&, PredictionHead<float>&, PredictionHead<float>&);
template HeadOutputs<double> head_forward(const Pyramid<double>&, PredictionHead<double>&, PredictionHead<double>&);
template Var<float> focal_loss(const HeadOutputs<float>&, const LabelTargets&, const AssignmentConfig&);
template Var<double> focal_loss(const HeadOutputs<double>&, const LabelTargets&, const AssignmentConfig&);
template Var<float> diou_loss(const HeadOutputs<float>&, const LabelTargets&);
template Var<double> diou_loss(const HeadOutputs<double>&, const LabelTargets&);
template LossBreakdown<float> total_loss(const HeadOutputs<float>&, const LabelTargets&, const AssignmentConfig&);
template LossBreakdown<double> total_loss(const HeadOutputs<double>&, const LabelTargets&, const AssignmentConfig&);

}  // namespace groundnlq
