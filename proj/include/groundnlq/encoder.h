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

#ifndef GROUNDNLQ_ENCODER_H_
#define GROUNDNLQ_ENCODER_H_

#include <vector>

#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/layers.h"

namespace groundnlq {

// A projected/encoded sequence on a tape: [N x d_model] plus validity.
template <typename T>
struct EmbeddedSequence {
  Var<T> data;
  Mask mask;

  int length() const { return static_cast<int>(data.rows()); }
};

// Fixed sin/cos table: (pos, 2i) = sin(pos / 10000^(2i/d)),
// (pos, 2i+1) = cos(pos / 10000^(2i/d)). Throws ValidationError on odd d.
MatrixD sinusoidal_positions(int length, int width);

template <typename T>
struct VideoProjection {
  Conv1d<T> conv1;
  LayerNorm<T> norm1;
  Conv1d<T> conv2;
  LayerNorm<T> norm2;

  VideoProjection() = default;
  explicit VideoProjection(const ModelConfig& cfg);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct TextProjection {
  Linear<T> fc1;
  LayerNorm<T> norm1;
  Linear<T> fc2;
  LayerNorm<T> norm2;

  TextProjection() = default;
  explicit TextProjection(const ModelConfig& cfg);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct TextBlock {
  LayerNorm<T> attn_norm;
  MultiHeadAttention<T> attn;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;

  TextBlock() = default;
  TextBlock(const std::string& name, const ModelConfig& cfg);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct VideoBlock {
  LayerNorm<T> local_norm;
  MultiHeadAttention<T> local_attn;
  LayerNorm<T> cross_norm;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;

  VideoBlock() = default;
  VideoBlock(const std::string& name, const ModelConfig& cfg);
  void collect(ParameterList<T>& out);
};

// Two masked kernel-3 convolutions, each followed by layer norm and ReLU,
// then sinusoidal positions. Invalid rows of the result are zero.
template <typename T>
EmbeddedSequence<T> project_video(Tape<T>& tape, const FeatureSequence& f, const ModelConfig& cfg,
                                  VideoProjection<T>& params);

// Two position-wise linear layers with layer norm and ReLU; no positions.
template <typename T>
EmbeddedSequence<T> project_text(Tape<T>& tape, const QueryTokens& q, const ModelConfig& cfg,
                                 TextProjection<T>& params);

template <typename T>
EmbeddedSequence<T> local_self_attention(const EmbeddedSequence<T>& x, int window, MultiHeadAttention<T>& params);

// Queries from x, keys/values from the valid rows of kv. Throws
// ValidationError when kv has no valid row.
template <typename T>
EmbeddedSequence<T> cross_attention(const EmbeddedSequence<T>& x, const EmbeddedSequence<T>& kv,
                                    MultiHeadAttention<T>& params);

// Pre-norm blocks: x += MHA(LN(x)); x += FFN(LN(x)).
template <typename T>
EmbeddedSequence<T> text_encoder_forward(const EmbeddedSequence<T>& text, const ModelConfig& cfg,
                                         std::vector<TextBlock<T>>& blocks);

// Pre-norm blocks: x += LocalMHA(LN(x)); x += Cross(LN(x), text);
// x += FFN(LN(x)). A null `text` skips the cross-modal sub-layer.
template <typename T>
EmbeddedSequence<T> video_encoder_forward(const EmbeddedSequence<T>& video, const EmbeddedSequence<T>* text,
                                          const ModelConfig& cfg, std::vector<VideoBlock<T>>& blocks);

}  // namespace groundnlq

#endif  // GROUNDNLQ_ENCODER_H_
