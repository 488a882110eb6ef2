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

#ifndef VCOT_REENGAGEMENT_HPP_
#define VCOT_REENGAGEMENT_HPP_

// Visual re-engagement strategies: token-cache re-sampling by patch/box
// intersection, crop/pad/resize re-encoding, strategy dispatch and analytic
// cost accounting.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vcot/image.hpp"
#include "vcot/roi_geometry.hpp"
#include "vcot/vision_encoder.hpp"

namespace vcot {

enum class StrategyKind { kImplicitAttention, kBoxGuidance, kRoiReencode, kRoiResample };

inline constexpr std::string_view strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::kImplicitAttention: return "implicit-attention";
    case StrategyKind::kBoxGuidance: return "box-guidance";
    case StrategyKind::kRoiReencode: return "roi-reencode";
    case StrategyKind::kRoiResample: return "roi-resample";
  }
  return "?";
}

inline StrategyKind parse_strategy_kind(std::string_view s) {
  for (auto k : {StrategyKind::kImplicitAttention, StrategyKind::kBoxGuidance,
                 StrategyKind::kRoiReencode, StrategyKind::kRoiResample})
    if (strategy_name(k) == s) return k;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline constexpr std::string_view squarify_name(SquarifyMode m) {
  return m == SquarifyMode::kPadCrop ? "pad-crop" : "square-context";
}

inline SquarifyMode parse_squarify(std::string_view s) {
  if (s == "pad-crop") return SquarifyMode::kPadCrop;
  if (s == "square-context") return SquarifyMode::kSquareContext;
  throw ConfigError("unknown squarify mode '" + std::string(s) + "'");
}

inline constexpr std::string_view projector_name(ProjectorChoice p) {
  return p == ProjectorChoice::kShared ? "shared" : "dedicated";
}

inline ProjectorChoice parse_projector(std::string_view s) {
  if (s == "shared") return ProjectorChoice::kShared;
  if (s == "dedicated") return ProjectorChoice::kDedicated;
  throw ConfigError("unknown projector '" + std::string(s) + "'");
}

struct Strategy {
  StrategyKind kind = StrategyKind::kRoiResample;
  double expansion_ratio = 0.0;
  SquarifyMode squarify = SquarifyMode::kPadCrop;
  ProjectorChoice projector = ProjectorChoice::kShared;

  /// Expansion defaults: none for re-sampling, 20% for re-encoding.
  static Strategy defaults(StrategyKind k) {
    Strategy s;
    s.kind = k;
    s.expansion_ratio = k == StrategyKind::kRoiReencode ? 0.2 : 0.0;
    return s;
  }

  bool grounded() const { return kind != StrategyKind::kImplicitAttention; }
  bool injects_context() const {
    return kind == StrategyKind::kRoiReencode || kind == StrategyKind::kRoiResample;
  }

  void validate() const {
    if (!(expansion_ratio >= 0.0)) throw ConfigError("strategy: expansion ratio must be >= 0");
    if (projector == ProjectorChoice::kDedicated && !injects_context())
      throw ConfigError("strategy: dedicated projector requires an explicit strategy");
  }
};

/// Initial-pass visual features kept for re-sampling: fused pre-projection
/// cell features and their shared-projector tokens, both row-major G x G.
template <typename T>
struct TokenCache {
  int grid_side = 0;
  Mat<T> fused;
  Mat<T> tokens;

  int cell_count() const { return grid_side * grid_side; }
  BBox cell_rect(int i, int j) const {
    return {static_cast<double>(j) / grid_side, static_cast<double>(i) / grid_side,
            static_cast<double>(j + 1) / grid_side, static_cast<double>(i + 1) / grid_side};
  }
};

/// Row-major indices of the G x G cells whose rectangle overlaps `b` with
/// strictly positive area.
inline std::vector<int> resample_cells(int grid_side, const BBox& b) {
  require_positive_area(b, "resample_tokens");
  if (grid_side < 1) throw InvalidInput("resample_tokens: grid side must be >= 1");
  const double g = grid_side;
  auto lo = [&](double v) { return std::max(0, static_cast<int>(std::floor(v * g)) - 1); };
  auto hi = [&](double v) { return std::min(grid_side - 1, static_cast<int>(std::ceil(v * g))); };
  std::vector<int> out;
  for (int i = lo(b.y_min); i <= hi(b.y_max); ++i) {
    const double h = std::min(b.y_max, (i + 1) / g) - std::max(b.y_min, i / g);
    if (!(h > 0.0)) continue;
    for (int j = lo(b.x_min); j <= hi(b.x_max); ++j) {
      const double w = std::min(b.x_max, (j + 1) / g) - std::max(b.x_min, j / g);
      if (w > 0.0) out.push_back(i * grid_side + j);
    }
  }
  return out;
}

/// Sorted, deduplicated union of cell sets; the joint re-sampling context of
/// several boxes.
inline std::vector<int> merge_cell_sets(std::span<const std::vector<int>> sets) {
  std::vector<int> out;
  for (const auto& s : sets) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Region handed to re-sampling: expansion, then square context if asked
/// for. Pad-crop has no meaning for cached cells and is ignored here.
inline BBox resample_region(const BBox& b, const Strategy& s) {
  BBox r = expand_box(b, s.expansion_ratio);
  if (s.squarify == SquarifyMode::kSquareContext) r = square_context(r);
  return r;
}

template <typename T>
VisualTokens<T> resample_tokens(const TokenCache<T>& cache, const BBox& b) {
  VisualTokens<T> out;
  const std::vector<int> cells = resample_cells(cache.grid_side, b);
  out.tokens.resize(static_cast<Eigen::Index>(cells.size()), cache.tokens.cols());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    out.tokens.row(static_cast<Eigen::Index>(k)) = cache.tokens.row(cells[k]);
    out.provenance.push_back(TokenProvenance::grid(cells[k] / cache.grid_side, cells[k] % cache.grid_side));
  }
  return out;
}

/// The crop image a re-encoding pass sees, resized to side x side.
inline ImageTensor reencode_crop(const ImageTensor& img, const BBox& b, const Strategy& s, int side) {
  require_positive_area(b, "reencode_tokens");
  const BBox expanded = expand_box(b, s.expansion_ratio);
  if (!(expanded.area() > 0.0)) throw InvalidInput("reencode_tokens: zero-area region after clipping");
  if (s.squarify == SquarifyMode::kPadCrop) return crop_resize(img, padding_plan(expanded), side, side);
  return crop_resize(img, square_context(expanded), side, side);
}

/// Encodes the RoI crop as a new image; returns G*G x decoder_dim tokens.
/// The crop is resized per expert inside encode_fused.
template <typename T>
Var reencode_graph(Graph<T>& g, const VisionEncoder<T>& enc, const ImageTensor& img, const BBox& b,
                   const Strategy& s) {
  const int side = enc.config().experts.front().input_side_px;
  return enc.project(g, enc.encode_fused(g, reencode_crop(img, b, s, side)), s.projector);
}

template <typename T>
VisualTokens<T> reencode_tokens(const ImageTensor& img, const BBox& b, const Strategy& s,
                                const VisionEncoder<T>& enc, const ParamStore<T>& params,
                                int crop_id = 0) {
  if (s.kind != StrategyKind::kRoiReencode) throw ProtocolError("reencode_tokens: strategy is not roi-reencode");
  Graph<T> g(&params);
  Var y = reencode_graph(g, enc, img, b, s);
  VisualTokens<T> out;
  out.tokens = g.value(y);
  for (int k = 0; k < enc.config().token_count(); ++k) out.provenance.push_back(TokenProvenance::crop(crop_id, k));
  return out;
}

template <typename T>
TokenCache<T> build_cache(const ImageTensor& img, const VisionEncoder<T>& enc, const ParamStore<T>& params) {
  Graph<T> g(&params);
  Var fused = enc.encode_fused(g, img);
  Var tokens = enc.project(g, fused, ProjectorChoice::kShared);
  return {enc.config().fusion_grid, g.value(fused), g.value(tokens)};
}

/// Strategy dispatch. Implicit attention and box guidance inject nothing;
/// re-encoding concatenates one crop block per box; re-sampling takes the
/// union of the boxes' cells in row-major order.
template <typename T>
std::optional<VisualTokens<T>> select_context(const Strategy& s, const TokenCache<T>& cache,
                                              const ImageTensor& img, std::span<const BBox> boxes,
                                              const VisionEncoder<T>& enc, const ParamStore<T>& params) {
  s.validate();
  if (s.grounded() && boxes.empty())
    throw ProtocolError(std::string(strategy_name(s.kind)) + " requires a box");
  if (!s.grounded() && !boxes.empty())
    throw ProtocolError("implicit-attention takes no box");
  if (!s.injects_context()) return std::nullopt;

  VisualTokens<T> out;
  if (s.kind == StrategyKind::kRoiReencode) {
    std::vector<Mat<T>> blocks;
    Eigen::Index rows = 0;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      VisualTokens<T> v = reencode_tokens(img, boxes[k], s, enc, params, static_cast<int>(k));
      rows += v.tokens.rows();
      out.provenance.insert(out.provenance.end(), v.provenance.begin(), v.provenance.end());
      blocks.push_back(std::move(v.tokens));
    }
    out.tokens.resize(rows, enc.config().decoder_dim);
    Eigen::Index at = 0;
    for (const auto& blk : blocks) {
      out.tokens.middleRows(at, blk.rows()) = blk;
      at += blk.rows();
    }
    return out;
  }

  std::vector<std::vector<int>> sets;
  for (const BBox& b : boxes) sets.push_back(resample_cells(cache.grid_side, resample_region(b, s)));
  const std::vector<int> cells = merge_cell_sets(sets);
  Mat<T> rows(static_cast<Eigen::Index>(cells.size()), cache.fused.cols());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    rows.row(static_cast<Eigen::Index>(k)) = cache.fused.row(cells[k]);
    out.provenance.push_back(TokenProvenance::grid(cells[k] / cache.grid_side, cells[k] % cache.grid_side));
  }
  if (s.projector == ProjectorChoice::kShared) {
    out.tokens.resize(rows.rows(), cache.tokens.cols());
    for (std::size_t k = 0; k < cells.size(); ++k)
      out.tokens.row(static_cast<Eigen::Index>(k)) = cache.tokens.row(cells[k]);
  } else {
    Graph<T> g(&params);
    out.tokens = g.value(enc.project(g, g.constant(rows), ProjectorChoice::kDedicated));
  }
  return out;
}

struct CostReport {
  std::uint64_t encoder_macs = 0;
  double extra_visual_tokens = 0.0;
  int passes = 0;
};

/// Multiply-accumulates of one encoder + projector pass, counted from the
/// configuration: patch embedding, attention and MLP blocks, 4-tap bilinear
/// resampling, and the two projector layers.
inline std::uint64_t encoder_pass_macs(const EncoderConfig& cfg) {
  using U = std::uint64_t;
  U total = 0;
  const U cells = static_cast<U>(cfg.token_count());
  for (const ExpertConfig& e : cfg.experts) {
    const U p = static_cast<U>(e.grid_side()) * static_cast<U>(e.grid_side());
    const U d = static_cast<U>(e.embed_dim);
    const U h = static_cast<U>(e.mlp_hidden);
    const U patch_in = static_cast<U>(e.patch_size_px) * static_cast<U>(e.patch_size_px) * 3;
    total += p * patch_in * d;
    const U block = p * d * 3 * d  // qkv
                    + 2 * p * p * d  // scores and weighted values
                    + p * d * d      // output projection
                    + 2 * p * d * h;  // mlp
    total += static_cast<U>(e.depth) * block;
    total += 4 * cells * d;
  }
  const U c = static_cast<U>(cfg.fused_dim());
  total += cells * (c * static_cast<U>(cfg.projector_hidden) +
                    static_cast<U>(cfg.projector_hidden) * static_cast<U>(cfg.decoder_dim));
  return total;
}

/// Per-sample cost of a strategy. Re-encoding is charged a second full pass
/// and G*G extra tokens; re-sampling reuses the initial pass and adds the
/// mean number of intersecting cells over `observed_boxes`.
inline CostReport cost_report(const Strategy& s, const EncoderConfig& cfg,
                              std::span<const BBox> observed_boxes) {
  CostReport r;
  const std::uint64_t pass = encoder_pass_macs(cfg);
  r.passes = s.kind == StrategyKind::kRoiReencode ? 2 : 1;
  r.encoder_macs = pass * static_cast<std::uint64_t>(r.passes);
  if (s.kind == StrategyKind::kRoiReencode) {
    r.extra_visual_tokens = cfg.token_count();
  } else if (s.kind == StrategyKind::kRoiResample && !observed_boxes.empty()) {
    double sum = 0.0;
    for (const BBox& b : observed_boxes)
      sum += static_cast<double>(resample_cells(cfg.fusion_grid, resample_region(b, s)).size());
    r.extra_visual_tokens = sum / static_cast<double>(observed_boxes.size());
  }
  return r;
}

}  // namespace vcot

#endif  // VCOT_REENGAGEMENT_HPP_
