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

#ifndef VCOT_AUTODIFF_HPP_
#define VCOT_AUTODIFF_HPP_

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Rows are tokens/cells, columns are channels throughout.

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vcot/errors.hpp"

namespace vcot {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using ParamId = int;

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParamStore {
 public:
  ParamId add(const std::string& name, Mat<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    const auto id = static_cast<ParamId>(values_.size());
    index_.emplace(name, id);
    names_.push_back(name);
    values_.push_back(std::move(value));
    return id;
  }

  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Mat<T>& value(ParamId id) { return values_[static_cast<std::size_t>(id)]; }
  const Mat<T>& value(ParamId id) const { return values_[static_cast<std::size_t>(id)]; }
  const std::string& name(ParamId id) const { return names_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return values_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<Mat<T>> values_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, ParamId> index_;
};

/// One gradient matrix per parameter, aligned with a ParamStore.
template <typename T>
struct Grads {
  std::vector<Mat<T>> g;

  explicit Grads(const ParamStore<T>& store) { reset(store); }
  void reset(const ParamStore<T>& store) {
    g.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
      g[i] = Mat<T>::Zero(store.value(static_cast<ParamId>(i)).rows(),
                          store.value(static_cast<ParamId>(i)).cols());
  }
  void set_zero() {
    for (auto& m : g) m.setZero();
  }
  Grads& operator+=(const Grads& o) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
    return *this;
  }
  Grads& operator*=(T s) {
    for (auto& m : g) m *= s;
    return *this;
  }
  T squared_norm() const {
    T s = 0;
    for (const auto& m : g) s += m.squaredNorm();
    return s;
  }
  bool all_finite() const {
    for (const auto& m : g)
      if (!m.allFinite()) return false;
    return true;
  }
};

struct Var {
  int id = -1;
};

/// Records values of one forward computation and replays it backwards.
template <typename T>
class Graph {
 public:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    ParamId param = -1;
    std::function<void(Graph&)> backward;
  };

  explicit Graph(const ParamStore<T>* params = nullptr) : params_(params) {}

  Var constant(Mat<T> value) { return push(std::move(value), false); }

  Var param(ParamId id) {
    if (!params_) throw ConfigError("graph has no parameter store");
    auto it = param_nodes_.find(id);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(params_->value(id), true);
    nodes_[static_cast<std::size_t>(v.id)].param = id;
    param_nodes_.emplace(id, v.id);
    return v;
  }
  Var param(const std::string& name) { return param(params_->id(name)); }

  /// Leaf whose gradient is wanted but which is not a parameter.
  Var input(Mat<T> value) { return push(std::move(value), true); }

  const Mat<T>& value(Var v) const { return node(v).value; }
  const Mat<T>& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of `v` (allocating on first use).
  void accumulate(Var v, const Mat<T>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }
  // Lazily zero-initialized gradient, for scatter-style backward passes.
  Mat<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var record(Mat<T> value, std::vector<Var> inputs,
             std::function<void(Graph&)> backward) {
    bool rg = false;
    for (Var in : inputs) rg = rg || node(in).requires_grad;
    Var out = push(std::move(value), rg);
    if (rg) nodes_[static_cast<std::size_t>(out.id)].backward = std::move(backward);
    return out;
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and back-propagates. Parameter
  /// gradients are added into `out` when given.
  void backward(Var root, Grads<T>* out = nullptr) {
    Node& r = node(root);
    if (r.value.size() != 1) throw InvalidInput("backward: root must be scalar");
    r.grad = Mat<T>::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.backward) continue;
      current_ = i;
      n.backward(*this);
    }
    if (out) {
      for (const auto& [pid, nid] : param_nodes_) {
        const Node& n = nodes_[static_cast<std::size_t>(nid)];
        if (n.grad.size() != 0) out->g[static_cast<std::size_t>(pid)] += n.grad;
      }
    }
  }

  /// Output gradient of the node whose backward is currently running.
  const Mat<T>& out_grad() const { return nodes_[static_cast<std::size_t>(current_)].grad; }

 private:
  Var push(Mat<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  const ParamStore<T>* params_;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, int> param_nodes_;
  int current_ = -1;
};

}  // namespace vcot

#endif  // VCOT_AUTODIFF_HPP_
