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

#ifndef GROUNDNLQ_TENSOR_H_
#define GROUNDNLQ_TENSOR_H_

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace groundnlq {

// Sequences are stored one time step per row.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Per-position validity flag (1 = valid). Valid positions always form a
// prefix of the sequence.
using Mask = std::vector<std::uint8_t>;

inline int count_valid(const Mask& mask) {
  int n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

inline Mask prefix_mask(int length, int valid) {
  Mask mask(static_cast<size_t>(length), 0);
  for (int i = 0; i < valid && i < length; ++i) mask[static_cast<size_t>(i)] = 1;
  return mask;
}

bool is_prefix_mask(const Mask& mask);

}  // namespace groundnlq

#endif  // GROUNDNLQ_TENSOR_H_
