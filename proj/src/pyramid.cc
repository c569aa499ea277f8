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

#include "groundnlq/pyramid.h"

namespace groundnlq {

int pyramid_level_length(int length, int level) {
  int n = length;
  for (int l = 0; l < level; ++l) n = (n + 1) / 2;
  return n < 1 ? 1 : n;
}

Mask pool_mask(const Mask& mask) {
  const size_t n = mask.size();
  Mask out((n + 1) / 2, 0);
  for (size_t p = 0; p < out.size(); ++p) {
    const bool a = mask[2 * p] != 0;
    const bool b = 2 * p + 1 < n && mask[2 * p + 1] != 0;
    out[p] = (a || b) ? 1 : 0;
  }
  return out;
}

template <typename T>
EmbeddedSequence<T> masked_max_pool(const EmbeddedSequence<T>& x) {
  return {ag::max_pool2(x.data, x.mask), pool_mask(x.mask)};
}

template <typename T>
PyramidBlock<T>::PyramidBlock(const std::string& name, const ModelConfig& cfg)
    : attn_norm(name + ".attn_norm", cfg.d_model),
      attn(name + ".attn", cfg.d_model, cfg.n_heads),
      has_cross(cfg.variant == Variant::kStar),
      ffn_norm(name + ".ffn_norm", cfg.d_model),
      ffn(name + ".ffn", cfg.d_model, cfg.ffn_expansion) {
  if (has_cross) {
    cross_norm = LayerNorm<T>(name + ".cross_norm", cfg.d_model);
    cross_attn = MultiHeadAttention<T>(name + ".cross_attn", cfg.d_model, cfg.n_heads);
  }
}

template <typename T>
void PyramidBlock<T>::collect(ParameterList<T>& out) {
  attn_norm.collect(out);
  attn.collect(out);
  if (has_cross) {
    cross_norm.collect(out);
    cross_attn.collect(out);
  }
  ffn_norm.collect(out);
  ffn.collect(out);
}

template <typename T>
Pyramid<T> multiscale_forward(const EmbeddedSequence<T>& video, const EmbeddedSequence<T>& text,
                              const ModelConfig& cfg, std::vector<PyramidBlock<T>>& blocks) {
  Tape<T>& tape = *video.data.tape();
  const T rate = static_cast<T>(cfg.dropout);
  Pyramid<T> pyramid;
  pyramid.levels.push_back({video.data, video.mask, 1});
  EmbeddedSequence<T> x = video;
  int stride = 1;
  for (auto& block : blocks) {
    EmbeddedSequence<T> normed{block.attn_norm(tape, x.data), x.mask};
    x.data = ag::add(x.data, ag::dropout(local_self_attention(normed, cfg.window, block.attn).data, rate));
    x = masked_max_pool(x);
    if (block.has_cross) {
      EmbeddedSequence<T> q{block.cross_norm(tape, x.data), x.mask};
      x.data = ag::add(x.data, ag::dropout(cross_attention(q, text, block.cross_attn).data, rate));
    }
    Var<T> f = block.ffn(tape, block.ffn_norm(tape, x.data), rate);
    x.data = ag::mask_rows(ag::add(x.data, ag::dropout(f, rate)), x.mask);
    stride *= 2;
    pyramid.levels.push_back({x.data, x.mask, stride});
  }
  return pyramid;
}

template EmbeddedSequence<float> masked_max_pool(const EmbeddedSequence<float>&);
template EmbeddedSequence<double> masked_max_pool(const EmbeddedSequence<double>&);
template struct PyramidBlock<float>;
template struct PyramidBlock<double>;
template Pyramid<float> multiscale_forward(const EmbeddedSequence<float>&, const EmbeddedSequence<float>&,
                                           const ModelConfig&, std::vector<PyramidBlock<float>>&);
template Pyramid<double> multiscale_forward(const EmbeddedSequence<double>&, const EmbeddedSequence<double>&,
                                            const ModelConfig&, std::vector<PyramidBlock<double>>&);

}  // namespace groundnlq
