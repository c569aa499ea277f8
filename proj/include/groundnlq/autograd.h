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

#ifndef GROUNDNLQ_AUTOGRAD_H_
#define GROUNDNLQ_AUTOGRAD_H_

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "groundnlq/tensor.h"

namespace groundnlq {

// A trainable tensor. Gradients accumulate across backward passes until
// zero_grad() is called.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool decay = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

// Handle to a node on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for backward().
template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat value);
  Var<T> parameter(Parameter<T>& p);
  Var<T> record(Mat value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(const Var<T>& v) const {
    return recording_ && nodes_[static_cast<size_t>(v.id())].requires_grad;
  }

  template <typename Expr>
  void accumulate(const Var<T>& v, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(value(v.id()).rows(), value(v.id()).cols());
    n.grad.noalias() += g;
  }

  // Seeds d(root)/d(root) = 1 and propagates into Parameter::grad.
  // `root` must be 1x1.
  void backward(const Var<T>& root);

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  // Dropout state. Dropout is the identity unless training is on.
  void set_training(bool training, std::mt19937_64* rng) {
    training_ = training;
    rng_ = rng;
  }
  bool training() const { return training_; }
  std::mt19937_64* rng() const { return rng_; }

  // Branch choices of the non-smooth ops (ReLU sign, pooling argmax,
  // interval min/max), one bit vector per op call. When recording, each op
  // appends the choices it made; when replaying, each op takes its choices
  // from the log instead, which evaluates the smooth piece of the function
  // selected at recording time.
  using BranchLog = std::vector<std::vector<bool>>;
  void record_branches(BranchLog* log) {
    log_ = log;
    replay_ = false;
    cursor_ = 0;
  }
  void replay_branches(const BranchLog* log) {
    log_ = const_cast<BranchLog*>(log);
    replay_ = true;
    cursor_ = 0;
  }
  bool tracks_branches() const { return log_ != nullptr; }
  std::vector<bool> branch(std::vector<bool> taken) {
    if (log_ == nullptr) return taken;
    if (!replay_) {
      log_->push_back(taken);
      return taken;
    }
    if (cursor_ >= log_->size() || (*log_)[cursor_].size() != taken.size()) {
      throw std::logic_error("branch replay does not match the recorded graph");
    }
    return (*log_)[cursor_++];
  }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Parameter<T>* param = nullptr;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_;
  bool training_ = false;
  std::mt19937_64* rng_ = nullptr;
  BranchLog* log_ = nullptr;
  bool replay_ = false;
  size_t cursor_ = 0;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}

// Which keys each query row may attend to: keys in [begin[i], end[i]) that
// are also flagged in key_valid. Rows with query_valid[i] == 0 produce zeros.
struct AttentionPattern {
  std::vector<int> begin;
  std::vector<int> end;
  Mask query_valid;
  Mask key_valid;

  // Self-attention restricted to |i - j| <= (window - 1) / 2.
  static AttentionPattern local(const Mask& mask, int window);
  // Every valid query sees every valid key.
  static AttentionPattern dense(const Mask& query_mask, const Mask& key_mask);
};

namespace ag {

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
// Adds a 1 x C row to every row of a.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma,
                                        const Var<T>& beta, T eps = T(1e-5));
template <typename T> Var<T> mask_rows(const Var<T>& x, const Mask& mask);
// Invalid rows are overwritten with `fill`; they carry no gradient.
template <typename T> Var<T> fill_invalid(const Var<T>& x, const Mask& mask, T fill);
// Row i of the result is [x(i-1), x(i), x(i+1)] with zeros past either end.
template <typename T> Var<T> stack_neighbors(const Var<T>& x);
template <typename T> Var<T> dropout(const Var<T>& x, T rate);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 const AttentionPattern& pattern);
// Stride-2 max pooling over rows; invalid sources are ignored and output rows
// with no valid source are zero.
template <typename T> Var<T> max_pool2(const Var<T>& x, const Mask& mask);

// Sigmoid focal loss summed over positions with valid[i] != 0.
template <typename T>
Var<T> focal_loss_sum(const Var<T>& logits, const Mask& foreground, const Mask& valid,
                      T alpha, T gamma);
// Distance-IoU loss summed over foreground rows. Rows of `pred` and
// `target` are (start distance, end distance) from a common location.
template <typename T>
Var<T> diou_loss_sum(const Var<T>& pred, const Matrix<T>& target, const Mask& foreground);

}  // namespace ag

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return ag::add(a, b);
}

}  // namespace groundnlq

#endif  // GROUNDNLQ_AUTOGRAD_H_
