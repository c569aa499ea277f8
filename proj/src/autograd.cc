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

#include "groundnlq/autograd.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace groundnlq {

bool is_prefix_mask(const Mask& mask) {
  bool seen_invalid = false;
  for (auto m : mask) {
    if (!m) {
      seen_invalid = true;
    } else if (seen_invalid) {
      return false;
    }
  }
  return true;
}

template <typename T>
Var<T> Tape<T>::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::record(Mat value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const auto& in : inputs) {
      if (nodes_[static_cast<size_t>(in.id())].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (!recording_) throw std::logic_error("backward() on a non-recording tape");
  const Mat& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) throw std::logic_error("backward() needs a scalar root");
  Node& r = nodes_[static_cast<size_t>(root.id())];
  if (!r.requires_grad) return;
  r.grad = Mat::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

void check_same_tape(const void* a, const void* b) {
  if (a != b) throw std::logic_error("operands live on different tapes");
}

}  // namespace

AttentionPattern AttentionPattern::local(const Mask& mask, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("window must be odd and >= 1");
  const int n = static_cast<int>(mask.size());
  const int radius = (window - 1) / 2;
  AttentionPattern p;
  p.begin.resize(static_cast<size_t>(n));
  p.end.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    p.begin[static_cast<size_t>(i)] = std::max(0, i - radius);
    p.end[static_cast<size_t>(i)] = std::min(n, i + radius + 1);
  }
  p.query_valid = mask;
  p.key_valid = mask;
  return p;
}

AttentionPattern AttentionPattern::dense(const Mask& query_mask, const Mask& key_mask) {
  AttentionPattern p;
  p.begin.assign(query_mask.size(), 0);
  p.end.assign(query_mask.size(), static_cast<int>(key_mask.size()));
  p.query_valid = query_mask;
  p.key_valid = key_mask;
  return p;
}

namespace ag {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check_same_tape(a.tape(), b.tape());
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_tape(a.tape(), b.tape());
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  Matrix<T> out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  check_same_tape(a.tape(), row.tape());
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Matrix<T> out = a.value() * factor;
  return a.tape()->record(std::move(out), {a}, [a, factor](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g * factor);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tape<T>* tape = a.tape();
  if (!tape->tracks_branches()) {
    Matrix<T> out = a.value().cwiseMax(T(0));
    return tape->record(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
      t.accumulate(a, (a.value().array() > T(0)).select(g, T(0)));
    });
  }
  const auto& v = a.value();
  std::vector<bool> bits(static_cast<size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) bits[static_cast<size_t>(i)] = v.data()[i] > 0;
  bits = tape->branch(std::move(bits));
  Matrix<T> on(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) on.data()[i] = bits[static_cast<size_t>(i)] ? T(1) : T(0);
  Matrix<T> out = v.cwiseProduct(on);
  return tape->record(std::move(out), {a}, [a, on = std::move(on)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(on));
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T x) { return stable_softplus(x); });
  return a.tape()->record(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](T x) { return stable_sigmoid(x); })));
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  if (gamma.cols() != c || beta.cols() != c) throw std::invalid_argument("layer_norm: width mismatch");
  Matrix<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = xv.row(i).mean();
    const T var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Matrix<T>& g) {
        if (t.needs_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
        if (t.needs_grad(x)) {
          Matrix<T> dxhat = g.array().rowwise() * gamma.value().row(0).array();
          Matrix<T> dx(dxhat.rows(), dxhat.cols());
          for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
            const T m1 = dxhat.row(i).mean();
            const T m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<T>(dxhat.cols());
            dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
          }
          t.accumulate(x, dx);
        }
      });
}

template <typename T>
Var<T> mask_rows(const Var<T>& x, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != x.rows()) throw std::invalid_argument("mask_rows: length mismatch");
  Matrix<T> out = x.value();
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) out.row(static_cast<Eigen::Index>(i)).setZero();
  }
  return x.tape()->record(std::move(out), {x}, [x, mask](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gx = g;
    for (size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) gx.row(static_cast<Eigen::Index>(i)).setZero();
    }
    t.accumulate(x, gx);
  });
}

template <typename T>
Var<T> fill_invalid(const Var<T>& x, const Mask& mask, T fill) {
  if (static_cast<Eigen::Index>(mask.size()) != x.rows()) throw std::invalid_argument("fill_invalid: length mismatch");
  Matrix<T> out = x.value();
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) out.row(static_cast<Eigen::Index>(i)).setConstant(fill);
  }
  return x.tape()->record(std::move(out), {x}, [x, mask](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gx = g;
    for (size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) gx.row(static_cast<Eigen::Index>(i)).setZero();
    }
    t.accumulate(x, gx);
  });
}

template <typename T>
Var<T> stack_neighbors(const Var<T>& x) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  Matrix<T> out = Matrix<T>::Zero(n, 3 * c);
  if (n > 1) {
    out.block(1, 0, n - 1, c) = xv.topRows(n - 1);
    out.block(0, 2 * c, n - 1, c) = xv.bottomRows(n - 1);
  }
  out.block(0, c, n, c) = xv;
  return x.tape()->record(std::move(out), {x}, [x, n, c](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gx = g.block(0, c, n, c);
    if (n > 1) {
      gx.topRows(n - 1) += g.block(1, 0, n - 1, c);
      gx.bottomRows(n - 1) += g.block(0, 2 * c, n - 1, c);
    }
    t.accumulate(x, gx);
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T rate) {
  Tape<T>* tape = x.tape();
  if (!tape->training() || rate <= T(0)) return x;
  if (rate >= T(1)) throw std::invalid_argument("dropout rate must be < 1");
  if (tape->rng() == nullptr) throw std::logic_error("dropout needs a generator while training");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  Matrix<T> m(x.rows(), x.cols());
  const T inv = T(1) / (T(1) - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*tape->rng()) ? inv : T(0);
  Matrix<T> out = x.value().cwiseProduct(m);
  return tape->record(std::move(out), {x}, [x, m = std::move(m)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, g.cwiseProduct(m));
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Matrix<T> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, Matrix<T>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 const AttentionPattern& pattern) {
  check_same_tape(q.tape(), k.tape());
  check_same_tape(q.tape(), v.tape());
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const int n = static_cast<int>(qv.rows());
  const int m = static_cast<int>(kv.rows());
  const int d = static_cast<int>(qv.cols());
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: heads must divide width");
  if (kv.cols() != d || vv.cols() != d || vv.rows() != m) throw std::invalid_argument("attention: shape mismatch");
  if (static_cast<int>(pattern.begin.size()) != n || static_cast<int>(pattern.query_valid.size()) != n ||
      static_cast<int>(pattern.key_valid.size()) != m) {
    throw std::invalid_argument("attention: pattern does not match operands");
  }
  const int dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  // probs[offset[i] + h * span_i + (j - begin_i)] for visible (i, j).
  std::vector<size_t> offset(static_cast<size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    const size_t span = pattern.query_valid[static_cast<size_t>(i)]
                            ? static_cast<size_t>(pattern.end[static_cast<size_t>(i)] - pattern.begin[static_cast<size_t>(i)])
                            : 0;
    offset[static_cast<size_t>(i) + 1] = offset[static_cast<size_t>(i)] + span * static_cast<size_t>(heads);
  }
  auto probs = std::make_shared<std::vector<T>>(offset.back(), T(0));
  Matrix<T> out = Matrix<T>::Zero(n, d);

  for (int i = 0; i < n; ++i) {
    if (!pattern.query_valid[static_cast<size_t>(i)]) continue;
    const int b = pattern.begin[static_cast<size_t>(i)];
    const int e = pattern.end[static_cast<size_t>(i)];
    const int span = e - b;
    for (int h = 0; h < heads; ++h) {
      T* p = probs->data() + offset[static_cast<size_t>(i)] + static_cast<size_t>(h * span);
      const auto qi = qv.row(i).segment(h * dh, dh);
      T max_score = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (int j = b; j < e; ++j) {
        if (!pattern.key_valid[static_cast<size_t>(j)]) continue;
        const T s = qi.dot(kv.row(j).segment(h * dh, dh)) * sc;
        p[j - b] = s;
        max_score = std::max(max_score, s);
        any = true;
      }
      if (!any) continue;
      T total = 0;
      for (int j = b; j < e; ++j) {
        if (!pattern.key_valid[static_cast<size_t>(j)]) continue;
        p[j - b] = std::exp(p[j - b] - max_score);
        total += p[j - b];
      }
      auto oi = out.row(i).segment(h * dh, dh);
      for (int j = b; j < e; ++j) {
        if (!pattern.key_valid[static_cast<size_t>(j)]) continue;
        p[j - b] /= total;
        oi += p[j - b] * vv.row(j).segment(h * dh, dh);
      }
    }
  }

  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dh, sc, pattern, offset = std::move(offset), probs](Tape<T>& t, const Matrix<T>& g) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        const int n = static_cast<int>(qv.rows());
        Matrix<T> dq = Matrix<T>::Zero(qv.rows(), qv.cols());
        Matrix<T> dk = Matrix<T>::Zero(kv.rows(), kv.cols());
        Matrix<T> dv = Matrix<T>::Zero(vv.rows(), vv.cols());
        std::vector<T> dp;
        for (int i = 0; i < n; ++i) {
          if (!pattern.query_valid[static_cast<size_t>(i)]) continue;
          const int b = pattern.begin[static_cast<size_t>(i)];
          const int e = pattern.end[static_cast<size_t>(i)];
          const int span = e - b;
          dp.assign(static_cast<size_t>(span), T(0));
          for (int h = 0; h < heads; ++h) {
            const T* p = probs->data() + offset[static_cast<size_t>(i)] + static_cast<size_t>(h * span);
            const auto gi = g.row(i).segment(h * dh, dh);
            T weighted = 0;
            for (int j = b; j < e; ++j) {
              if (!pattern.key_valid[static_cast<size_t>(j)]) continue;
              dp[static_cast<size_t>(j - b)] = gi.dot(vv.row(j).segment(h * dh, dh));
              weighted += p[j - b] * dp[static_cast<size_t>(j - b)];
              dv.row(j).segment(h * dh, dh) += p[j - b] * gi;
            }
            auto dqi = dq.row(i).segment(h * dh, dh);
            const auto qi = qv.row(i).segment(h * dh, dh);
            for (int j = b; j < e; ++j) {
              if (!pattern.key_valid[static_cast<size_t>(j)]) continue;
              const T ds = p[j - b] * (dp[static_cast<size_t>(j - b)] - weighted) * sc;
              dqi += ds * kv.row(j).segment(h * dh, dh);
              dk.row(j).segment(h * dh, dh) += ds * qi;
            }
          }
        }
        if (t.needs_grad(q)) t.accumulate(q, dq);
        if (t.needs_grad(k)) t.accumulate(k, dk);
        if (t.needs_grad(v)) t.accumulate(v, dv);
      });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x, const Mask& mask) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  if (static_cast<Eigen::Index>(mask.size()) != n) throw std::invalid_argument("max_pool2: mask length mismatch");
  const Eigen::Index n_out = (n + 1) / 2;
  Matrix<T> out = Matrix<T>::Zero(n_out, c);
  // argmax source row per output element, -1 where the output is invalid.
  std::vector<int> source(static_cast<size_t>(n_out * c), -1);
  std::vector<bool> bits;
  for (Eigen::Index p = 0; p < n_out; ++p) {
    const Eigen::Index a = 2 * p;
    const Eigen::Index b = 2 * p + 1;
    if (mask[static_cast<size_t>(a)] && b < n && mask[static_cast<size_t>(b)]) {
      for (Eigen::Index j = 0; j < c; ++j) bits.push_back(xv(b, j) > xv(a, j));
    }
  }
  bits = x.tape()->branch(std::move(bits));
  size_t next = 0;
  for (Eigen::Index p = 0; p < n_out; ++p) {
    const Eigen::Index a = 2 * p;
    const Eigen::Index b = 2 * p + 1;
    const bool va = mask[static_cast<size_t>(a)] != 0;
    const bool vb = b < n && mask[static_cast<size_t>(b)] != 0;
    if (!va && !vb) continue;
    for (Eigen::Index j = 0; j < c; ++j) {
      Eigen::Index src = va ? a : b;
      if (va && vb && bits[next++]) src = b;
      out(p, j) = xv(src, j);
      source[static_cast<size_t>(p * c + j)] = static_cast<int>(src);
    }
  }
  return x.tape()->record(std::move(out), {x}, [x, c, n_out, source = std::move(source)](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gx = Matrix<T>::Zero(x.rows(), x.cols());
    for (Eigen::Index p = 0; p < n_out; ++p) {
      for (Eigen::Index j = 0; j < c; ++j) {
        const int src = source[static_cast<size_t>(p * c + j)];
        if (src >= 0) gx(src, j) += g(p, j);
      }
    }
    t.accumulate(x, gx);
  });
}

template <typename T>
Var<T> focal_loss_sum(const Var<T>& logits, const Mask& foreground, const Mask& valid, T alpha, T gamma) {
  const auto& lv = logits.value();
  const Eigen::Index n = lv.size();
  if (static_cast<Eigen::Index>(foreground.size()) != n || static_cast<Eigen::Index>(valid.size()) != n) {
    throw std::invalid_argument("focal_loss_sum: length mismatch");
  }
  T total = 0;
  Matrix<T> dlogit = Matrix<T>::Zero(lv.rows(), lv.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    const T x = lv.data()[i];
    const T p = stable_sigmoid(x);
    const T q = stable_sigmoid(-x);
    if (foreground[static_cast<size_t>(i)]) {
      const T sp = stable_softplus(-x);  // -log p
      const T qg = std::pow(q, gamma);
      total += alpha * qg * sp;
      dlogit.data()[i] = alpha * (-gamma * p * qg * sp - qg * q);
    } else {
      const T sp = stable_softplus(x);  // -log(1 - p)
      const T pg = std::pow(p, gamma);
      total += (T(1) - alpha) * pg * sp;
      dlogit.data()[i] = (T(1) - alpha) * (gamma * pg * q * sp + pg * p);
    }
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  return logits.tape()->record(std::move(out), {logits}, [logits, dlogit = std::move(dlogit)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(logits, dlogit * g(0, 0));
  });
}

template <typename T>
Var<T> diou_loss_sum(const Var<T>& pred, const Matrix<T>& target, const Mask& foreground) {
  const auto& pv = pred.value();
  const Eigen::Index n = pv.rows();
  if (pv.cols() != 2 || target.rows() != n || target.cols() != 2 ||
      static_cast<Eigen::Index>(foreground.size()) != n) {
    throw std::invalid_argument("diou_loss_sum: shape mismatch");
  }
  T total = 0;
  Matrix<T> dpred = Matrix<T>::Zero(n, 2);
  std::vector<bool> bits;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!foreground[static_cast<size_t>(i)]) continue;
    const T ps = -pv(i, 0), pe = pv(i, 1), gs = -target(i, 0), ge = target(i, 1);
    bits.push_back(pe < ge);
    bits.push_back(ps > gs);
    bits.push_back(std::min(pe, ge) - std::max(ps, gs) > 0);
    bits.push_back(pe > ge);
    bits.push_back(ps < gs);
  }
  bits = pred.tape()->branch(std::move(bits));
  size_t next = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!foreground[static_cast<size_t>(i)]) continue;
    const T ps = -pv(i, 0);
    const T pe = pv(i, 1);
    const T gs = -target(i, 0);
    const T ge = target(i, 1);

    const bool pe_inner = bits[next++];
    const bool ps_inner = bits[next++];
    const bool overlap = bits[next++];
    const bool pe_outer = bits[next++];
    const bool ps_outer = bits[next++];
    const T inter = overlap ? (pe_inner ? pe : ge) - (ps_inner ? ps : gs) : T(0);
    const T uni = (pe - ps) + (ge - gs) - inter;

    T iou = 0, diou_dpe = 0, diou_dps = 0;
    if (uni > 0) {
      iou = inter / uni;
      const T di_dpe = overlap && pe_inner ? T(1) : T(0);
      const T di_dps = overlap && ps_inner ? T(-1) : T(0);
      const T du_dpe = T(1) - di_dpe;
      const T du_dps = T(-1) - di_dps;
      diou_dpe = (di_dpe * uni - inter * du_dpe) / (uni * uni);
      diou_dps = (di_dps * uni - inter * du_dps) / (uni * uni);
    }

    const T enclose =
        std::max((pe_outer ? pe : ge) - (ps_outer ? ps : gs), std::numeric_limits<T>::epsilon());
    const T dc_dpe = pe_outer ? T(1) : T(0);
    const T dc_dps = ps_outer ? T(-1) : T(0);
    const T gap = T(0.5) * (ps + pe - gs - ge);
    const T c2 = enclose * enclose;
    const T penalty = gap * gap / c2;
    const T dr_dpe = gap / c2 - T(2) * gap * gap * dc_dpe / (c2 * enclose);
    const T dr_dps = gap / c2 - T(2) * gap * gap * dc_dps / (c2 * enclose);

    total += T(1) - iou + penalty;
    dpred(i, 0) = -(-diou_dps + dr_dps);
    dpred(i, 1) = -diou_dpe + dr_dpe;
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  return pred.tape()->record(std::move(out), {pred}, [pred, dpred = std::move(dpred)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(pred, dpred * g(0, 0));
  });
}

#define GROUNDNLQ_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> softplus(const Var<T>&);                                                       \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                    \
  template Var<T> mask_rows(const Var<T>&, const Mask&);                                         \
  template Var<T> fill_invalid(const Var<T>&, const Mask&, T);                                   \
  template Var<T> stack_neighbors(const Var<T>&);                                                \
  template Var<T> dropout(const Var<T>&, T);                                                     \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int,                    \
                            const AttentionPattern&);                                            \
  template Var<T> max_pool2(const Var<T>&, const Mask&);                                         \
  template Var<T> focal_loss_sum(const Var<T>&, const Mask&, const Mask&, T, T);                 \
  template Var<T> diou_loss_sum(const Var<T>&, const Matrix<T>&, const Mask&);

GROUNDNLQ_INSTANTIATE_OPS(float)
GROUNDNLQ_INSTANTIATE_OPS(double)

}  // namespace ag

template class Tape<float>;
template class Tape<double>;

}  // namespace groundnlq
