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

#include "groundnlq/encoder.h"

#include <cmath>

#include "groundnlq/error.h"

namespace groundnlq {

MatrixD sinusoidal_positions(int length, int width) {
  if (length < 1) throw ValidationError("sinusoidal_positions: length must be >= 1");
  if (width < 2 || width % 2 != 0) throw ValidationError("sinusoidal_positions: width must be even");
  MatrixD table(length, width);
  for (int i = 0; i < width / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / width);
    for (int pos = 0; pos < length; ++pos) {
      table(pos, 2 * i) = std::sin(pos * freq);
      table(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return table;
}

template <typename T>
VideoProjection<T>::VideoProjection(const ModelConfig& cfg)
    : conv1("video_proj.conv1", cfg.d_video_in, cfg.d_model),
      norm1("video_proj.norm1", cfg.d_model),
      conv2("video_proj.conv2", cfg.d_model, cfg.d_model),
      norm2("video_proj.norm2", cfg.d_model) {}

template <typename T>
void VideoProjection<T>::collect(ParameterList<T>& out) {
  conv1.collect(out);
  norm1.collect(out);
  conv2.collect(out);
  norm2.collect(out);
}

template <typename T>
TextProjection<T>::TextProjection(const ModelConfig& cfg)
    : fc1("text_proj.fc1", cfg.d_text_in, cfg.d_model),
      norm1("text_proj.norm1", cfg.d_model),
      fc2("text_proj.fc2", cfg.d_model, cfg.d_model),
      norm2("text_proj.norm2", cfg.d_model) {}

template <typename T>
void TextProjection<T>::collect(ParameterList<T>& out) {
  fc1.collect(out);
  norm1.collect(out);
  fc2.collect(out);
  norm2.collect(out);
}

template <typename T>
TextBlock<T>::TextBlock(const std::string& name, const ModelConfig& cfg)
    : attn_norm(name + ".attn_norm", cfg.d_model),
      attn(name + ".attn", cfg.d_model, cfg.n_heads),
      ffn_norm(name + ".ffn_norm", cfg.d_model),
      ffn(name + ".ffn", cfg.d_model, cfg.ffn_expansion) {}

template <typename T>
void TextBlock<T>::collect(ParameterList<T>& out) {
  attn_norm.collect(out);
  attn.collect(out);
  ffn_norm.collect(out);
  ffn.collect(out);
}

template <typename T>
VideoBlock<T>::VideoBlock(const std::string& name, const ModelConfig& cfg)
    : local_norm(name + ".local_norm", cfg.d_model),
      local_attn(name + ".local_attn", cfg.d_model, cfg.n_heads),
      cross_norm(name + ".cross_norm", cfg.d_model),
      cross_attn(name + ".cross_attn", cfg.d_model, cfg.n_heads),
      ffn_norm(name + ".ffn_norm", cfg.d_model),
      ffn(name + ".ffn", cfg.d_model, cfg.ffn_expansion) {}

template <typename T>
void VideoBlock<T>::collect(ParameterList<T>& out) {
  local_norm.collect(out);
  local_attn.collect(out);
  cross_norm.collect(out);
  cross_attn.collect(out);
  ffn_norm.collect(out);
  ffn.collect(out);
}

template <typename T>
EmbeddedSequence<T> project_video(Tape<T>& tape, const FeatureSequence& f, const ModelConfig& cfg,
                                  VideoProjection<T>& params) {
  if (f.width() != cfg.d_video_in) {
    throw ConfigError("video feature width " + std::to_string(f.width()) + " does not match model.d_video_in " +
                      std::to_string(cfg.d_video_in));
  }
  const Mask& mask = f.valid_mask;
  Var<T> x = tape.constant(f.data.template cast<T>());
  x = ag::mask_rows(ag::relu(params.norm1(tape, params.conv1(tape, x, mask))), mask);
  x = ag::relu(params.norm2(tape, params.conv2(tape, x, mask)));
  Var<T> pos = tape.constant(sinusoidal_positions(f.length(), cfg.d_model).template cast<T>());
  return {ag::mask_rows(ag::add(x, pos), mask), mask};
}

template <typename T>
EmbeddedSequence<T> project_text(Tape<T>& tape, const QueryTokens& q, const ModelConfig& cfg,
                                 TextProjection<T>& params) {
  if (q.width() != cfg.d_text_in) {
    throw ConfigError("text feature width " + std::to_string(q.width()) + " does not match model.d_text_in " +
                      std::to_string(cfg.d_text_in));
  }
  Var<T> x = tape.constant(q.data.template cast<T>());
  x = ag::relu(params.norm1(tape, params.fc1(tape, x)));
  x = ag::relu(params.norm2(tape, params.fc2(tape, x)));
  return {ag::mask_rows(x, q.valid_mask), q.valid_mask};
}

template <typename T>
EmbeddedSequence<T> local_self_attention(const EmbeddedSequence<T>& x, int window, MultiHeadAttention<T>& params) {
  Tape<T>& tape = *x.data.tape();
  Var<T> out = params(tape, x.data, x.data, AttentionPattern::local(x.mask, window));
  return {ag::mask_rows(out, x.mask), x.mask};
}

template <typename T>
EmbeddedSequence<T> cross_attention(const EmbeddedSequence<T>& x, const EmbeddedSequence<T>& kv,
                                    MultiHeadAttention<T>& params) {
  if (count_valid(kv.mask) == 0) throw ValidationError("cross_attention: key/value sequence has no valid token");
  Tape<T>& tape = *x.data.tape();
  Var<T> out = params(tape, x.data, kv.data, AttentionPattern::dense(x.mask, kv.mask));
  return {ag::mask_rows(out, x.mask), x.mask};
}

template <typename T>
EmbeddedSequence<T> text_encoder_forward(const EmbeddedSequence<T>& text, const ModelConfig& cfg,
                                         std::vector<TextBlock<T>>& blocks) {
  Tape<T>& tape = *text.data.tape();
  const T rate = static_cast<T>(cfg.dropout);
  const AttentionPattern pattern = AttentionPattern::dense(text.mask, text.mask);
  Var<T> x = text.data;
  for (auto& block : blocks) {
    Var<T> normed = block.attn_norm(tape, x);
    Var<T> a = block.attn(tape, normed, normed, pattern);
    x = ag::add(x, ag::dropout(ag::mask_rows(a, text.mask), rate));
    Var<T> f = block.ffn(tape, block.ffn_norm(tape, x), rate);
    x = ag::mask_rows(ag::add(x, ag::dropout(f, rate)), text.mask);
  }
  return {x, text.mask};
}

template <typename T>
EmbeddedSequence<T> video_encoder_forward(const EmbeddedSequence<T>& video, const EmbeddedSequence<T>* text,
                                          const ModelConfig& cfg, std::vector<VideoBlock<T>>& blocks) {
  Tape<T>& tape = *video.data.tape();
  const T rate = static_cast<T>(cfg.dropout);
  EmbeddedSequence<T> x = video;
  for (auto& block : blocks) {
    EmbeddedSequence<T> normed{block.local_norm(tape, x.data), x.mask};
    x.data = ag::add(x.data, ag::dropout(local_self_attention(normed, cfg.window, block.local_attn).data, rate));
    if (text != nullptr) {
      EmbeddedSequence<T> q{block.cross_norm(tape, x.data), x.mask};
      x.data = ag::add(x.data, ag::dropout(cross_attention(q, *text, block.cross_attn).data, rate));
    }
    Var<T> f = block.ffn(tape, block.ffn_norm(tape, x.data), rate);
    x.data = ag::mask_rows(ag::add(x.data, ag::dropout(f, rate)), x.mask);
  }
  return x;
}

#define GROUNDNLQ_INSTANTIATE_ENCODER(T)                                                                        \
  template struct VideoProjection<T>;                                                                           \
  template struct TextProjection<T>;                                                                            \
  template struct TextBlock<T>;                                                                                 \
  template struct VideoBlock<T>;                                                                                \
  template EmbeddedSequence<T> project_video(Tape<T>&, const FeatureSequence&, const ModelConfig&,              \
                                             VideoProjection<T>&);                                              \
  template EmbeddedSequence<T> project_text(Tape<T>&, const QueryTokens&, const ModelConfig&, TextProjection<T>&); \
  template EmbeddedSequence<T> local_self_attention(const EmbeddedSequence<T>&, int, MultiHeadAttention<T>&);   \
  template EmbeddedSequence<T> cross_attention(const EmbeddedSequence<T>&, const EmbeddedSequence<T>&,          \
                                               MultiHeadAttention<T>&);                                         \
  template EmbeddedSequence<T> text_encoder_forward(const EmbeddedSequence<T>&, const ModelConfig&,             \
                                                    std::vector<TextBlock<T>>&);                                \
  template EmbeddedSequence<T> video_encoder_forward(const EmbeddedSequence<T>&, const EmbeddedSequence<T>*,    \
                                                     const ModelConfig&, std::vector<VideoBlock<T>>&);

GROUNDNLQ_INSTANTIATE_ENCODER(float)
GROUNDNLQ_INSTANTIATE_ENCODER(double)

}  // namespace groundnlq
