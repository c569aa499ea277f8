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

#include "groundnlq/model.h"

#include <cmath>

#include "groundnlq/error.h"

namespace groundnlq {

template <typename T>
GroundingModel<T>::GroundingModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      text_proj_(cfg),
      video_proj_(cfg),
      cls_head_("cls_head", cfg.d_model, 1),
      reg_head_("reg_head", cfg.d_model, 2) {
  cfg_.validate();
  for (int i = 0; i < cfg.n_text_blocks; ++i) text_blocks_.emplace_back("text_encoder." + std::to_string(i), cfg);
  for (int i = 0; i < cfg.n_video_blocks; ++i) video_blocks_.emplace_back("video_encoder." + std::to_string(i), cfg);
  for (int i = 0; i < cfg.n_pyramid_blocks; ++i) pyramid_blocks_.emplace_back("pyramid." + std::to_string(i), cfg);
  initialize(seed);
}

template <typename T>
ForwardResult<T> GroundingModel<T>::forward(Tape<T>& tape, const FeatureSequence& video, const QueryTokens& query) {
  ForwardResult<T> r;
  r.text = text_encoder_forward(project_text(tape, query, cfg_, text_proj_), cfg_, text_blocks_);
  if (count_valid(r.text.mask) == 0) throw ValidationError("query " + query.query_id + " has no valid token");
  r.video = video_encoder_forward(project_video(tape, video, cfg_, video_proj_), &r.text, cfg_, video_blocks_);
  r.pyramid = multiscale_forward(r.video, r.text, cfg_, pyramid_blocks_);
  r.heads = head_forward(r.pyramid, cls_head_, reg_head_);
  return r;
}

template <typename T>
ParameterList<T> GroundingModel<T>::parameters() {
  ParameterList<T> out;
  text_proj_.collect(out);
  video_proj_.collect(out);
  for (auto& b : text_blocks_) b.collect(out);
  for (auto& b : video_blocks_) b.collect(out);
  for (auto& b : pyramid_blocks_) b.collect(out);
  cls_head_.collect(out);
  reg_head_.collect(out);
  return out;
}

template <typename T>
ParameterList<T> GroundingModel<T>::head_parameters() {
  ParameterList<T> out;
  cls_head_.collect(out);
  reg_head_.collect(out);
  return out;
}

template <typename T>
Parameter<T>* GroundingModel<T>::find(const std::string& name) {
  for (Parameter<T>* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename T>
void GroundingModel<T>::init_head_biases() {
  cls_head_.conv2.bias.value.setConstant(static_cast<T>(-std::log((1.0 - kClassPrior) / kClassPrior)));
}

template <typename T>
void GroundingModel<T>::initialize(std::uint64_t seed) {
  initialize_parameters(parameters(), seed);
  init_head_biases();
}

template <typename T>
void GroundingModel<T>::reinitialize_heads(std::uint64_t seed) {
  initialize_parameters(head_parameters(), seed);
  init_head_biases();
}

template <typename T>
void GroundingModel<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
bool GroundingModel<T>::is_head_parameter(const std::string& name) {
  return name.rfind("cls_head.", 0) == 0 || name.rfind("reg_head.", 0) == 0;
}

template <typename T>
std::map<std::string, MatrixD> GroundingModel<T>::state() const {
  std::map<std::string, MatrixD> out;
  for (Parameter<T>* p : const_cast<GroundingModel*>(this)->parameters()) out[p->name] = p->value.template cast<double>();
  return out;
}

template <typename T>
void GroundingModel<T>::load_state(const std::map<std::string, MatrixD>& state, bool skip_heads) {
  for (Parameter<T>* p : parameters()) {
    if (skip_heads && is_head_parameter(p->name)) continue;
    auto it = state.find(p->name);
    if (it == state.end()) throw ValidationError("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ValidationError("checkpoint parameter " + p->name + " has a different shape");
    }
    p->value = it->second.template cast<T>();
  }
}

template class GroundingModel<float>;
template class GroundingModel<double>;

}  // namespace groundnlq
