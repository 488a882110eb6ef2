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

#ifndef VCOT_TRANSFORMER_HPP_
#define VCOT_TRANSFORMER_HPP_

// Pre-norm transformer block shared by the patch encoders and the decoder.

#include <cmath>
#include <string>
#include <vector>

#include "vcot/autodiff.hpp"
#include "vcot/ops.hpp"
#include "vcot/rng.hpp"

namespace vcot {

template <typename T>
Mat<T> random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

struct LinearIds {
  ParamId w = -1;
  ParamId b = -1;
};

struct NormIds {
  ParamId gamma = -1;
  ParamId beta = -1;
};

template <typename T>
LinearIds add_linear(ParamStore<T>& store, const std::string& prefix, int in, int out,
                     Rng& rng, double gain = 1.0) {
  LinearIds ids;
  ids.w = store.add(prefix + ".w", random_normal<T>(in, out, gain / std::sqrt(double(in)), rng));
  ids.b = store.add(prefix + ".b", Mat<T>::Zero(1, out));
  return ids;
}

template <typename T>
NormIds add_norm(ParamStore<T>& store, const std::string& prefix, int dim) {
  NormIds ids;
  ids.gamma = store.add(prefix + ".g", Mat<T>::Ones(1, dim));
  ids.beta = store.add(prefix + ".b", Mat<T>::Zero(1, dim));
  return ids;
}

template <typename T>
Var apply(Graph<T>& g, const LinearIds& l, Var x) {
  return ops::linear(g, x, g.param(l.w), g.param(l.b));
}

template <typename T>
Var apply(Graph<T>& g, const NormIds& n, Var x) {
  return ops::layer_norm(g, x, g.param(n.gamma), g.param(n.beta));
}

struct BlockIds {
  NormIds ln1;
  LinearIds qkv;
  LinearIds out;
  NormIds ln2;
  LinearIds fc1;
  LinearIds fc2;
};

template <typename T>
BlockIds add_block(ParamStore<T>& store, const std::string& prefix, int dim, int hidden,
                   int depth, Rng& rng) {
  // Residual branch outputs are scaled down with depth.
  const double res_gain = 1.0 / std::sqrt(2.0 * depth);
  BlockIds b;
  b.ln1 = add_norm(store, prefix + ".ln1", dim);
  b.qkv = add_linear(store, prefix + ".qkv", dim, 3 * dim, rng);
  b.out = add_linear(store, prefix + ".attn_out", dim, dim, rng, res_gain);
  b.ln2 = add_norm(store, prefix + ".ln2", dim);
  b.fc1 = add_linear(store, prefix + ".fc1", dim, hidden, rng);
  b.fc2 = add_linear(store, prefix + ".fc2", hidden, dim, rng, res_gain);
  return b;
}

/// x + Attn(LN(x)), then + MLP(LN(.)).
template <typename T>
Var block_forward(Graph<T>& g, const BlockIds& b, Var x, int heads, bool causal,
                  std::vector<Mat<T>>* probs = nullptr) {
  Var h = apply(g, b.qkv, apply(g, b.ln1, x));
  h = ops::attention(g, h, heads, causal, probs);
  x = ops::add(g, x, apply(g, b.out, h));
  Var m = apply(g, b.fc2, ops::gelu(g, apply(g, b.fc1, apply(g, b.ln2, x))));
  return ops::add(g, x, m);
}

}  // namespace vcot

#endif  // VCOT_TRANSFORMER_HPP_
