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

#include "groundnlq/layers.h"

#include <cmath>
#include <random>
#include <stdexcept>

namespace groundnlq {

namespace {

template <typename T>
Parameter<T> make_parameter(const std::string& name, int rows, int cols, bool decay) {
  Parameter<T> p;
  p.name = name;
  p.value = Matrix<T>::Zero(rows, cols);
  p.grad = Matrix<T>::Zero(rows, cols);
  p.decay = decay;
  return p;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer over the combined value
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out)
    : weight(make_parameter<T>(name + ".weight", in, out, true)),
      bias(make_parameter<T>(name + ".bias", 1, out, false)) {}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, const Var<T>& x) {
  return ag::add_row(ag::matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int width)
    : gamma(make_parameter<T>(name + ".gamma", 1, width, false)),
      beta(make_parameter<T>(name + ".beta", 1, width, false)) {
  gamma.value.setOnes();
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Tape<T>& tape, const Var<T>& x) {
  return ag::layer_norm(x, tape.parameter(gamma), tape.parameter(beta));
}

template <typename T>
void LayerNorm<T>::collect(ParameterList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
Conv1d<T>::Conv1d(const std::string& name, int in, int out)
    : weight(make_parameter<T>(name + ".weight", 3 * in, out, true)),
      bias(make_parameter<T>(name + ".bias", 1, out, false)) {}

template <typename T>
Var<T> Conv1d<T>::operator()(Tape<T>& tape, const Var<T>& x, const Mask& mask) {
  Var<T> cols = ag::stack_neighbors(ag::mask_rows(x, mask));
  return ag::add_row(ag::matmul(cols, tape.parameter(weight)), tape.parameter(bias));
}

template <typename T>
void Conv1d<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, int width, int heads)
    : query(name + ".query", width, width),
      key(name + ".key", width, width),
      value(name + ".value", width, width),
      output(name + ".output", width, width),
      heads(heads) {
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("heads must divide width");
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Tape<T>& tape, const Var<T>& x, const Var<T>& kv,
                                         const AttentionPattern& pattern) {
  Var<T> q = query(tape, x);
  Var<T> k = key(tape, kv);
  Var<T> v = value(tape, kv);
  return output(tape, ag::attention(q, k, v, heads, pattern));
}

template <typename T>
void MultiHeadAttention<T>::collect(ParameterList<T>& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

template <typename T>
FeedForward<T>::FeedForward(const std::string& name, int width, int expansion)
    : hidden(name + ".hidden", width, width * expansion),
      output(name + ".output", width * expansion, width) {}

template <typename T>
Var<T> FeedForward<T>::operator()(Tape<T>& tape, const Var<T>& x, T dropout_rate) {
  Var<T> h = ag::dropout(ag::relu(hidden(tape, x)), dropout_rate);
  return output(tape, h);
}

template <typename T>
void FeedForward<T>::collect(ParameterList<T>& out) {
  hidden.collect(out);
  output.collect(out);
}

template <typename T>
void initialize_parameters(const ParameterList<T>& params, std::uint64_t seed) {
  for (Parameter<T>* p : params) {
    if (ends_with(p->name, ".weight")) {
      std::mt19937_64 rng(name_seed(seed, p->name));
      const double fan_in = static_cast<double>(p->value.rows());
      const double fan_out = static_cast<double>(p->value.cols());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<T>(dist(rng));
    } else if (ends_with(p->name, ".gamma")) {
      p->value.setOnes();
    } else {
      p->value.setZero();
    }
    p->zero_grad();
  }
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Conv1d<float>;
template struct Conv1d<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template void initialize_parameters<float>(const ParameterList<float>&, std::uint64_t);
template void initialize_parameters<double>(const ParameterList<double>&, std::uint64_t);

}  // namespace groundnlq
