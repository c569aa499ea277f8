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

#ifndef GROUNDNLQ_LAYERS_H_
#define GROUNDNLQ_LAYERS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "groundnlq/autograd.h"

namespace groundnlq {

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

// y = x W + b, applied to every row.
template <typename T>
struct Linear {
  Parameter<T> weight;  // in x out
  Parameter<T> bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int width);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x);
  void collect(ParameterList<T>& out);
};

// Kernel-3, stride-1, same-padded temporal convolution. Rows flagged invalid
// in the mask are zeroed before the convolution, so padding never leaks into
// valid outputs.
template <typename T>
struct Conv1d {
  Parameter<T> weight;  // (3 * in) x out, taps ordered [t-1, t, t+1]
  Parameter<T> bias;    // 1 x out

  Conv1d() = default;
  Conv1d(const std::string& name, int in, int out);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const Mask& mask);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int width, int heads);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const Var<T>& kv,
                    const AttentionPattern& pattern);
  void collect(ParameterList<T>& out);
};

template <typename T>
struct FeedForward {
  Linear<T> hidden;
  Linear<T> output;

  FeedForward() = default;
  FeedForward(const std::string& name, int width, int expansion);
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, T dropout_rate);
  void collect(ParameterList<T>& out);
};

// Deterministic per-name initialization: each tensor draws from its own
// generator seeded by (seed, name), so adding or removing a layer does not
// shift the initial values of any other layer.
//   *.weight  Xavier-uniform over (fan_in, fan_out) = (rows, cols)
//   *.bias    zeros
//   *.gamma   ones
//   *.beta    zeros
template <typename T>
void initialize_parameters(const ParameterList<T>& params, std::uint64_t seed);

std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

}  // namespace groundnlq

#endif  // GROUNDNLQ_LAYERS_H_
