/* Copyright 2026 The vcot Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VCOT_OPS_HPP_
#define VCOT_OPS_HPP_

#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "vcot/autodiff.hpp"

namespace vcot::ops {

/// y = x W + b, with b broadcast over rows.
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Mat<T>& X = g.value(x);
  const Mat<T>& W = g.value(w);
  if (X.cols() != W.rows()) throw InvalidInput("linear: shape mismatch");
  Mat<T> y = X * W;
  y.rowwise() += g.value(b).row(0);
  return g.record(std::move(y), {x, w, b}, [x, w, b](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    if (gr.requires_grad(x)) gr.accumulate(x, dy * gr.value(w).transpose());
    if (gr.requires_grad(w)) gr.accumulate(w, gr.value(x).transpose() * dy);
    if (gr.requires_grad(b)) gr.accumulate(b, dy.colwise().sum());
  });
}

/// y = M x for a constant matrix M.
template <typename T>
Var left_multiply(Graph<T>& g, const Mat<T>& m, Var x) {
  if (m.cols() != g.value(x).rows()) throw InvalidInput("left_multiply: shape mismatch");
  Mat<T> y = m * g.value(x);
  return g.record(std::move(y), {x}, [m, x](Graph<T>& gr) {
    gr.accumulate(x, m.transpose() * gr.out_grad());
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  if (g.value(a).rows() != g.value(b).rows() || g.value(a).cols() != g.value(b).cols())
    throw InvalidInput("add: shape mismatch");
  Mat<T> y = g.value(a) + g.value(b);
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr) {
    gr.accumulate(a, gr.out_grad());
    gr.accumulate(b, gr.out_grad());
  });
}

/// y[r] = x[r] + table[index[r]]; rows with index -1 are passed through.
template <typename T>
Var add_rows(Graph<T>& g, Var x, Var table, std::vector<int> index) {
  const Mat<T>& X = g.value(x);
  const Mat<T>& tab = g.value(table);
  if (static_cast<Eigen::Index>(index.size()) != X.rows() || tab.cols() != X.cols())
    throw InvalidInput("add_rows: shape mismatch");
  Mat<T> y = X;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    if (index[r] >= tab.rows()) throw InvalidInput("add_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) += tab.row(index[r]);
  }
  return g.record(std::move(y), {x, table}, [x, table, index = std::move(index)](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    gr.accumulate(x, dy);
    if (!gr.requires_grad(table)) return;
    Mat<T>& dt = gr.grad_buffer(table);
    for (std::size_t r = 0; r < index.size(); ++r)
      if (index[r] >= 0) dt.row(index[r]) += dy.row(static_cast<Eigen::Index>(r));
  });
}

/// y[r] = x[index[r]].
template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::vector<int> index) {
  const Mat<T>& X = g.value(x);
  Mat<T> y(static_cast<Eigen::Index>(index.size()), X.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= X.rows()) throw InvalidInput("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) = X.row(index[r]);
  }
  return g.record(std::move(y), {x}, [x, index = std::move(index)](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    Mat<T>& dx = gr.grad_buffer(x);
    for (std::size_t r = 0; r < index.size(); ++r)
      dx.row(index[r]) += dy.row(static_cast<Eigen::Index>(r));
  });
}

/// Row-wise concatenation.
template <typename T>
Var vstack(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("vstack: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = g.value(parts[0]).cols();
  for (Var p : parts) {
    if (g.value(p).cols() != cols) throw InvalidInput("vstack: column mismatch");
    rows += g.value(p).rows();
  }
  Mat<T> y(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    y.middleRows(at, g.value(p).rows()) = g.value(p);
    at += g.value(p).rows();
  }
  return g.record(std::move(y), parts, [parts](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index r = gr.value(p).rows();
      if (gr.requires_grad(p)) gr.accumulate(p, dy.middleRows(off, r));
      off += r;
    }
  });
}

/// Column-wise (channel) concatenation.
template <typename T>
Var hstack(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("hstack: no inputs");
  const Eigen::Index rows = g.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (g.value(p).rows() != rows) throw InvalidInput("hstack: row mismatch");
    cols += g.value(p).cols();
  }
  Mat<T> y(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    y.middleCols(at, g.value(p).cols()) = g.value(p);
    at += g.value(p).cols();
  }
  return g.record(std::move(y), parts, [parts](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index c = gr.value(p).cols();
      if (gr.requires_grad(p)) gr.accumulate(p, dy.middleCols(off, c));
      off += c;
    }
  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const Mat<T>& X = g.value(x);
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  Mat<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mu = X.row(r).mean();
    const auto centered = (X.row(r).array() - mu).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(d);
    rstd(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * rstd(r);
  }
  Mat<T> y = xhat;
  y.array().rowwise() *= g.value(gamma).row(0).array();
  y.rowwise() += g.value(beta).row(0);
  return g.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& gr) {
    const Mat<T>& dy = gr.out_grad();
    if (gr.requires_grad(gamma))
      gr.accumulate(gamma, (dy.array() * xhat.array()).colwise().sum().matrix());
    if (gr.requires_grad(beta)) gr.accumulate(beta, dy.colwise().sum());
    if (!gr.requires_grad(x)) return;
    Mat<T> dxhat = dy;
    dxhat.array().rowwise() *= gr.value(gamma).row(0).array();
    const auto d = static_cast<T>(xhat.cols());
    Mat<T> dx(xhat.rows(), xhat.cols());
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      const T m1 = dxhat.row(r).sum() / d;
      const T m2 = dxhat.row(r).dot(xhat.row(r)) / d;
      dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    gr.accumulate(x, dx);
  });
}

namespace detail {
template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = T(0.044715);
}  // namespace detail

/// Tanh-approximated GELU.
template <typename T>
Var gelu(Graph<T>& g, Var x) {
  const Mat<T>& X = g.value(x);
  Mat<T> t = (detail::kGeluC<T> * (X.array() + detail::kGeluA<T> * X.array().cube())).tanh().matrix();
  Mat<T> y = (T(0.5) * X.array() * (T(1) + t.array())).matrix();
  return g.record(std::move(y), {x}, [x, t = std::move(t)](Graph<T>& gr) {
    const auto X = gr.value(x).array();
    const auto ta = t.array();
    const auto dydx = T(0.5) * (T(1) + ta) +
                      T(0.5) * X * (T(1) - ta.square()) * detail::kGeluC<T> *
                          (T(1) + T(3) * detail::kGeluA<T> * X.square());
    gr.accumulate(x, (gr.out_grad().array() * dydx).matrix());
  });
}

/// Multi-head scaled dot-product attention over a fused [Q | K | V] input of
/// width 3d. `probs`, when given, receives the per-head attention matrices.
template <typename T>
Var attention(Graph<T>& g, Var qkv, int heads, bool causal,
              std::vector<Mat<T>>* probs = nullptr) {
  const Mat<T>& QKV = g.value(qkv);
  const Eigen::Index n = QKV.rows();
  if (QKV.cols() % 3 != 0) throw InvalidInput("attention: width must be 3d");
  const Eigen::Index d = QKV.cols() / 3;
  if (heads < 1 || d % heads != 0) throw InvalidInput("attention: d not divisible by heads");
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  std::vector<Mat<T>> P(static_cast<std::size_t>(heads));
  Mat<T> out(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto Q = QKV.middleCols(h * dh, dh);
    const auto K = QKV.middleCols(d + h * dh, dh);
    const auto V = QKV.middleCols(2 * d + h * dh, dh);
    Mat<T> S = (Q * K.transpose()) * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lim = causal ? i + 1 : n;
      auto row = S.row(i).head(lim);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp().matrix();
      row /= row.sum();
      if (lim < n) S.row(i).tail(n - lim).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = S * V;
    P[static_cast<std::size_t>(h)] = std::move(S);
  }
  if (probs) *probs = P;
  return g.record(std::move(out), {qkv}, [qkv, heads, d, dh, scale, P = std::move(P)](Graph<T>& gr) {
    const Mat<T>& dO = gr.out_grad();
    const Mat<T>& QKV = gr.value(qkv);
    Mat<T> dQKV(QKV.rows(), QKV.cols());
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& Ph = P[static_cast<std::size_t>(h)];
      const auto Q = QKV.middleCols(h * dh, dh);
      const auto K = QKV.middleCols(d + h * dh, dh);
      const auto V = QKV.middleCols(2 * d + h * dh, dh);
      const auto dOh = dO.middleCols(h * dh, dh);
      Mat<T> dP = dOh * V.transpose();
      dQKV.middleCols(2 * d + h * dh, dh).noalias() = Ph.transpose() * dOh;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dP.array() * Ph.array()).rowwise().sum();
      Mat<T> dS = (Ph.array() * (dP.colwise() - rs).array()).matrix() * scale;
      dQKV.middleCols(h * dh, dh).noalias() = dS * K;
      dQKV.middleCols(d + h * dh, dh).noalias() = dS.transpose() * Q;
    }
    gr.accumulate(qkv, dQKV);
  });
}

/// Mean over `rows` of -log softmax(logits[row])[target].
template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, std::vector<int> rows, std::vector<int> targets) {
  if (rows.empty()) throw InvalidInput("cross_entropy: no scored positions");
  if (rows.size() != targets.size()) throw InvalidInput("cross_entropy: rows/targets mismatch");
  const Mat<T>& L = g.value(logits);
  const auto count = static_cast<T>(rows.size());
  Mat<T> probs(static_cast<Eigen::Index>(rows.size()), L.cols());
  T total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= L.rows() || targets[i] < 0 || targets[i] >= L.cols())
      throw InvalidInput("cross_entropy: index out of range");
    const auto row = L.row(rows[i]);
    const T mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    const T z = e.sum();
    probs.row(static_cast<Eigen::Index>(i)) = (e / z).matrix();
    total += std::log(z) + mx - row(targets[i]);
  }
  Mat<T> y(1, 1);
  y(0, 0) = total / count;
  return g.record(std::move(y), {logits},
                  [logits, rows = std::move(rows), targets = std::move(targets),
                   probs = std::move(probs), count](Graph<T>& gr) {
    const T s = gr.out_grad()(0, 0) / count;
    Mat<T>& dl = gr.grad_buffer(logits);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      dl.row(rows[i]) += s * probs.row(static_cast<Eigen::Index>(i));
      dl(rows[i], targets[i]) -= s;
    }
  });
}

/// Scalar sum(x .* weights) for a constant weight matrix; used to probe
/// gradients of intermediate tensors.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Mat<T>& weights) {
  if (weights.rows() != g.value(x).rows() || weights.cols() != g.value(x).cols())
    throw InvalidInput("weighted_sum: shape mismatch");
  Mat<T> y(1, 1);
  y(0, 0) = (g.value(x).array() * weights.array()).sum();
  return g.record(std::move(y), {x}, [x, weights](Graph<T>& gr) {
    gr.accumulate(x, weights * gr.out_grad()(0, 0));
  });
}

}  // namespace vcot::ops

#endif  // VCOT_OPS_HPP_
