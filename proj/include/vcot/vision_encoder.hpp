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

#ifndef VCOT_VISION_ENCODER_HPP_
#define VCOT_VISION_ENCODER_HPP_

// Toy mixture of vision experts: per-expert patch transformers at different
// patch sizes, bilinear resampling of each expert grid to a shared G x G
// grid, channel concatenation, and an MLP projector to decoder width.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vcot/autodiff.hpp"
#include "vcot/image.hpp"
#include "vcot/ops.hpp"
#include "vcot/roi_geometry.hpp"
#include "vcot/transformer.hpp"

namespace vcot {

struct ExpertConfig {
  int input_side_px = 64;
  int patch_size_px = 8;
  int embed_dim = 32;
  int depth = 1;
  int heads = 2;
  int mlp_hidden = 64;

  int grid_side() const { return input_side_px / patch_size_px; }
};

struct EncoderConfig {
  std::vector<ExpertConfig> experts{ExpertConfig{64, 8, 32, 1, 2, 64},
                                    ExpertConfig{64, 4, 32, 1, 2, 64}};
  int fusion_grid = 8;
  int projector_hidden = 128;
  int decoder_dim = 128;
  /// Init std of the per-cell position tables inside each expert.
  double pos_init_std = 0.2;

  int fused_dim() const {
    int c = 0;
    for (const auto& e : experts) c += e.embed_dim;
    return c;
  }
  int token_count() const { return fusion_grid * fusion_grid; }

  void validate() const {
    if (experts.empty()) throw ConfigError("encoder: at least one expert required");
    if (fusion_grid < 1) throw ConfigError("encoder: fusion grid must be >= 1");
    if (projector_hidden < 1 || decoder_dim < 1) throw ConfigError("encoder: projector dims must be >= 1");
    if (!(pos_init_std > 0)) throw ConfigError("encoder: pos_init_std must be > 0");
    for (const auto& e : experts) {
      if (e.patch_size_px < 1 || e.input_side_px < 1 || e.input_side_px % e.patch_size_px != 0)
        throw ConfigError("encoder: expert input side " + std::to_string(e.input_side_px) +
                          " not divisible by patch size " + std::to_string(e.patch_size_px));
      if (e.embed_dim < 1 || e.depth < 0 || e.heads < 1 || e.embed_dim % e.heads != 0)
        throw ConfigError("encoder: expert embed_dim must be divisible by heads");
    }
  }
};

enum class ProjectorChoice { kShared, kDedicated };

/// Where a visual token came from: a cell of the initial grid, or token k of
/// a re-encoded crop.
struct TokenProvenance {
  enum class Kind { kGrid, kCrop };
  Kind kind = Kind::kGrid;
  int a = 0;  // grid row, or crop id
  int b = 0;  // grid col, or token index within the crop

  static TokenProvenance grid(int row, int col) { return {Kind::kGrid, row, col}; }
  static TokenProvenance crop(int crop_id, int k) { return {Kind::kCrop, crop_id, k}; }
  friend bool operator==(const TokenProvenance&, const TokenProvenance&) = default;
};

/// G_rows x G_cols grid of per-cell vectors, row-major.
template <typename T>
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  Mat<T> embeddings;  // (rows*cols) x channel_dim

  int channel_dim() const { return static_cast<int>(embeddings.cols()); }
  auto cell(int i, int j) const { return embeddings.row(static_cast<Eigen::Index>(i) * cols + j); }
  BBox cell_rect(int i, int j) const {
    return {static_cast<double>(j) / cols, static_cast<double>(i) / rows,
            static_cast<double>(j + 1) / cols, static_cast<double>(i + 1) / rows};
  }
};

template <typename T>
struct VisualTokens {
  Mat<T> tokens;  // count x decoder_dim
  std::vector<TokenProvenance> provenance;

  std::size_t size() const { return provenance.size(); }
};

/// Non-overlapping p x p patches flattened to rows, columns ordered (dy, dx, c).
template <typename T>
Mat<T> patchify(const ImageTensor& img, int patch) {
  const int gr = img.height_px / patch;
  const int gc = img.width_px / patch;
  Mat<T> out(gr * gc, patch * patch * img.channels);
  for (int i = 0; i < gr; ++i)
    for (int j = 0; j < gc; ++j) {
      int col = 0;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < img.channels; ++c)
            out(i * gc + j, col++) = static_cast<T>(img.at(i * patch + dy, j * patch + dx, c));
    }
  return out;
}

namespace detail {
// Half-pixel-center bilinear weights along one axis: out_n x in_n.
inline Eigen::MatrixXd axis_weights(int in_n, int out_n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_n, in_n);
  const double scale = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, in_n - 1);
    const double f = s - i0;
    w(o, i0) += 1.0 - f;
    w(o, i1) += f;
  }
  return w;
}
}  // namespace detail

/// Dense (G*G) x (rows*cols) operator performing bilinear resampling of a
/// row-major grid. Identity when the sizes already match.
template <typename T>
Mat<T> interpolation_matrix(int rows, int cols, int target) {
  const Eigen::MatrixXd wr = detail::axis_weights(rows, target);
  const Eigen::MatrixXd wc = detail::axis_weights(cols, target);
  Mat<T> m = Mat<T>::Zero(target * target, rows * cols);
  for (int oi = 0; oi < target; ++oi)
    for (int oj = 0; oj < target; ++oj)
      for (int i = 0; i < rows; ++i) {
        if (wr(oi, i) == 0.0) continue;
        for (int j = 0; j < cols; ++j)
          if (wc(oj, j) != 0.0) m(oi * target + oj, i * cols + j) = static_cast<T>(wr(oi, i) * wc(oj, j));
      }
  return m;
}

struct ExpertIds {
  LinearIds patch;
  ParamId pos = -1;
  std::vector<BlockIds> blocks;
  NormIds final_norm;
};

struct ProjectorIds {
  LinearIds fc1;
  LinearIds fc2;
};

/// Parameter handles plus the graph-level encoder pipeline.
template <typename T>
class VisionEncoder {
 public:
  VisionEncoder() = default;

  VisionEncoder(const EncoderConfig& cfg, ParamStore<T>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t e = 0; e < cfg_.experts.size(); ++e) {
      const ExpertConfig& ec = cfg_.experts[e];
      const std::string p = "enc" + std::to_string(e);
      ExpertIds ids;
      const int patch_in = ec.patch_size_px * ec.patch_size_px * 3;
      ids.patch = add_linear(store, p + ".patch", patch_in, ec.embed_dim, rng);
      const int n = ec.grid_side() * ec.grid_side();
      ids.pos = store.add(p + ".pos", random_normal<T>(n, ec.embed_dim, cfg_.pos_init_std, rng));
      for (int l = 0; l < ec.depth; ++l)
        ids.blocks.push_back(add_block(store, p + ".blk" + std::to_string(l), ec.embed_dim,
                                       ec.mlp_hidden, ec.depth, rng));
      ids.final_norm = add_norm(store, p + ".norm", ec.embed_dim);
      experts_.push_back(std::move(ids));
    }
    shared_ = add_projector(store, "proj.shared", rng);
    dedicated_ = add_projector(store, "proj.dedicated", rng);
    for (const auto& ec : cfg_.experts)
      interp_.push_back(interpolation_matrix<T>(ec.grid_side(), ec.grid_side(), cfg_.fusion_grid));
  }

  const EncoderConfig& config() const { return cfg_; }
  const ExpertIds& expert_ids(int e) const { return experts_.at(static_cast<std::size_t>(e)); }
  const ProjectorIds& projector_ids(ProjectorChoice c) const {
    return c == ProjectorChoice::kShared ? shared_ : dedicated_;
  }

  /// Patch embedding + learned per-cell positions + transformer blocks.
  /// Output: (grid_side^2) x embed_dim.
  Var encode_patches(Graph<T>& g, const ImageTensor& img, int expert) const {
    const ExpertConfig& ec = cfg_.experts.at(static_cast<std::size_t>(expert));
    if (img.height_px != ec.input_side_px || img.width_px != ec.input_side_px)
      throw ConfigError("encode_patches: image " + std::to_string(img.width_px) + "x" +
                        std::to_string(img.height_px) + " does not match expert input " +
                        std::to_string(ec.input_side_px));
    if (img.height_px % ec.patch_size_px != 0 || img.width_px % ec.patch_size_px != 0)
      throw ConfigError("encode_patches: image not divisible by patch size");
    const ExpertIds& ids = experts_[static_cast<std::size_t>(expert)];
    Var x = g.constant(patchify<T>(img, ec.patch_size_px));
    x = apply(g, ids.patch, x);
    std::vector<int> cells(static_cast<std::size_t>(g.value(x).rows()));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    x = ops::add_rows(g, x, g.param(ids.pos), std::move(cells));
    for (const BlockIds& b : ids.blocks) x = block_forward(g, b, x, ec.heads, /*causal=*/false);
    return apply(g, ids.final_norm, x);
  }

  Var interpolate(Graph<T>& g, Var grid, int expert) const {
    return ops::left_multiply(g, interp_.at(static_cast<std::size_t>(expert)), grid);
  }

  Var fuse(Graph<T>& g, const std::vector<Var>& grids) const { return ops::hstack(g, grids); }

  Var project(Graph<T>& g, Var fused, ProjectorChoice choice) const {
    const ProjectorIds& p = projector_ids(choice);
    return apply(g, p.fc2, ops::gelu(g, apply(g, p.fc1, fused)));
  }

  /// Full multi-expert pass up to (and excluding) projection; images of the
  /// wrong size are bilinearly resized to each expert's input resolution.
  Var encode_fused(Graph<T>& g, const ImageTensor& img) const {
    std::vector<Var> grids;
    for (std::size_t e = 0; e < cfg_.experts.size(); ++e) {
      const int side = cfg_.experts[e].input_side_px;
      Var x;
      if (img.height_px == side && img.width_px == side) {
        x = encode_patches(g, img, static_cast<int>(e));
      } else {
        x = encode_patches(g, crop_resize(img, BBox{0, 0, 1, 1}, side, side), static_cast<int>(e));
      }
      grids.push_back(interpolate(g, x, static_cast<int>(e)));
    }
    return fuse(g, grids);
  }

 private:
  ProjectorIds add_projector(ParamStore<T>& store, const std::string& prefix, Rng& rng) {
    ProjectorIds p;
    p.fc1 = add_linear(store, prefix + ".fc1", cfg_.fused_dim(), cfg_.projector_hidden, rng);
    p.fc2 = add_linear(store, prefix + ".fc2", cfg_.projector_hidden, cfg_.decoder_dim, rng);
    return p;
  }

  EncoderConfig cfg_;
  std::vector<ExpertIds> experts_;
  ProjectorIds shared_;
  ProjectorIds dedicated_;
  std::vector<Mat<T>> interp_;
};

// Value-level entry points. Each runs the graph-level pipeline on a scratch
// graph, so they share one code path with training.

template <typename T>
PatchGrid<T> encode_patches(const ImageTensor& img, int expert, const VisionEncoder<T>& enc,
                            const ParamStore<T>& params) {
  Graph<T> g(&params);
  Var x = enc.encode_patches(g, img, expert);
  const int side = enc.config().experts.at(static_cast<std::size_t>(expert)).grid_side();
  return {side, side, g.value(x)};
}

template <typename T>
PatchGrid<T> interpolate_grid(const PatchGrid<T>& grid, int target_side) {
  if (target_side < 1) throw InvalidInput("interpolate_grid: target side must be >= 1");
  if (grid.rows == target_side && grid.cols == target_side) return grid;
  const Mat<T> m = interpolation_matrix<T>(grid.rows, grid.cols, target_side);
  return {target_side, target_side, m * grid.embeddings};
}

template <typename T>
PatchGrid<T> fuse_experts(std::span<const PatchGrid<T>> grids) {
  if (grids.empty()) throw InvalidInput("fuse_experts: no grids");
  PatchGrid<T> out{grids[0].rows, grids[0].cols, {}};
  int channels = 0;
  for (const auto& gr : grids) {
    if (gr.rows != out.rows || gr.cols != out.cols)
      throw InvalidInput("fuse_experts: grids differ in size");
    channels += gr.channel_dim();
  }
  out.embeddings.resize(static_cast<Eigen::Index>(out.rows) * out.cols, channels);
  Eigen::Index at = 0;
  for (const auto& gr : grids) {
    out.embeddings.middleCols(at, gr.channel_dim()) = gr.embeddings;
    at += gr.channel_dim();
  }
  return out;
}

template <typename T>
VisualTokens<T> project(const PatchGrid<T>& grid, ProjectorChoice choice,
                        const VisionEncoder<T>& enc, const ParamStore<T>& params) {
  if (grid.channel_dim() != enc.config().fused_dim())
    throw ConfigError("project: grid has " + std::to_string(grid.channel_dim()) +
                      " channels, projector expects " + std::to_string(enc.config().fused_dim()));
  Graph<T> g(&params);
  Var y = enc.project(g, g.constant(grid.embeddings), choice);
  VisualTokens<T> out;
  out.tokens = g.value(y);
  for (int i = 0; i < grid.rows; ++i)
    for (int j = 0; j < grid.cols; ++j) out.provenance.push_back(TokenProvenance::grid(i, j));
  return out;
}

}  // namespace vcot

#endif  // VCOT_VISION_ENCODER_HPP_
