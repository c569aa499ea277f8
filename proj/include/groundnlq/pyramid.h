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

#ifndef GROUNDNLQ_PYRAMID_H_
#define GROUNDNLQ_PYRAMID_H_

#include <vector>

#include "groundnlq/encoder.h"

namespace groundnlq {

template <typename T>
struct PyramidLevel {
  Var<T> data;  // T_l x d_model
  Mask mask;
  int stride = 1;  // 2^l level-0 snippets per position

  int length() const { return static_cast<int>(data.rows()); }
};

template <typename T>
struct Pyramid {
  std::vector<PyramidLevel<T>> levels;
};

// Level-l length for an input of `length` rows: ceil-halving, never below 1.
int pyramid_level_length(int length, int level);

// Output mask of masked_max_pool.
Mask pool_mask(const Mask& mask);

// Stride-2 max pooling; output has ceil(T/2) rows. Sources flagged invalid
// are ignored; outputs with no valid source are invalid and zero.
template <typename T>
EmbeddedSequence<T> masked_max_pool(const EmbeddedSequence<T>& x);

// One multi-scale block: LocalMHA (pre-norm residual) -> max-pool ->
// [star only: cross-attention with text] -> FFN.
template <typename T>
struct PyramidBlock {
  LayerNorm<T> attn_norm;
  MultiHeadAttention<T> attn;
  bool has_cross = false;
  LayerNorm<T> cross_norm;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;

  PyramidBlock() = default;
  PyramidBlock(const std::string& name, const ModelConfig& cfg);
  void collect(ParameterList<T>& out);
};

// Level 0 is `video`; level l is block l applied to level l-1.
template <typename T>
Pyramid<T> multiscale_forward(const EmbeddedSequence<T>& video, const EmbeddedSequence<T>& text,
                              const ModelConfig& cfg, std::vector<PyramidBlock<T>>& blocks);

}  // namespace groundnlq

#endif  // GROUNDNLQ_PYRAMID_H_
