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

#ifndef VCOT_TESTS_SUPPORT_HPP_
#define VCOT_TESTS_SUPPORT_HPP_

// Shared fixtures: tiny model configs, random images and boxes, and the
// central finite-difference checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vcot/model.hpp"
#include "vcot/rng.hpp"
#include "vcot/synth.hpp"

namespace vcot::testing {

/// G=4, decoder dim 16. The second expert has an 8x8 patch grid, so the
/// fusion path exercises a real interpolation.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.experts = {ExpertConfig{16, 4, 8, 1, 2, 16}, ExpertConfig{16, 2, 8, 1, 2, 16}};
  c.encoder.fusion_grid = 4;
  c.encoder.projector_hidden = 16;
  c.encoder.decoder_dim = 16;
  c.decoder.model_dim = 16;
  c.decoder.n_layers = 2;
  c.decoder.n_heads = 2;
  c.decoder.mlp_hidden = 32;
  c.decoder.vocab_size = Vocab().size();
  c.decoder.max_seq_len = 128;
  return c;
}

inline ImageTensor random_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(side, side, 3);
  for (float& v : img.values) v = static_cast<float>(rng.uniform());
  return img;
}

/// Random valid box with strictly positive area, on the 1e-3 lattice when
/// `quantized`.
inline BBox random_box(Rng& rng, bool quantized = false) {
  for (;;) {
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
    BBox box{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    if (quantized) box = quantize_box(box);
    if (box.area() > 0.0) return box;
  }
}

inline ConversationSample tiny_sample(const Vocab& v) {
  ConversationSample s;
  s.image_seed = 7;
  s.question = v.encode_words("what color is the circle");
  s.gt_boxes = {BBox{0.125, 0.25, 0.5, 0.625}};
  s.answer = v.encode_words("red");
  return s;
}

struct FdResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / (||analytic|| + ||numeric||)
  double analytic_norm = 0.0;
  int checked = 0;
};

/// Compares the analytic gradient of `loss` wrt parameter `id` with central
/// differences on up to `max_entries` evenly spaced entries.
inline FdResult fd_check(ParamStore<double>& params, ParamId id, const Mat<double>& analytic,
                         const std::function<double()>& loss, int max_entries = 24, double h = 1e-5) {
  Mat<double>& p = params.value(id);
  const Eigen::Index n = p.size();
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
  double diff2 = 0, a2 = 0, n2 = 0;
  FdResult r;
  for (Eigen::Index k = 0; k < n; k += stride) {
    const double saved = p.data()[k];
    p.data()[k] = saved + h;
    const double up = loss();
    p.data()[k] = saved - h;
    const double down = loss();
    p.data()[k] = saved;
    const double num = (up - down) / (2 * h);
    const double ana = analytic.data()[k];
    diff2 += (ana - num) * (ana - num);
    a2 += ana * ana;
    n2 += num * num;
    ++r.checked;
  }
  r.analytic_norm = std::sqrt(a2);
  const double denom = std::sqrt(a2) + std::sqrt(n2);
  r.rel_error = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
  return r;
}

}  // namespace vcot::testing

#endif  // VCOT_TESTS_SUPPORT_HPP_
