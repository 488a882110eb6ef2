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

#ifndef VCOT_SYNTH_HPP_
#define VCOT_SYNTH_HPP_

// Procedural small-target VQA scenes. Glyphs (square, circle, triangle,
// cross) in six colors sit in distinct layout cells over a noisy background;
// the question names the target by its unique shape or unique color and asks
// for the other attribute.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vcot/cot_protocol.hpp"
#include "vcot/image.hpp"
#include "vcot/rng.hpp"

namespace vcot {

enum class Shape { kSquare, kCircle, kTriangle, kCross };
inline constexpr int kShapeCount = 4;
inline constexpr int kColorCount = 6;

inline constexpr std::array<std::array<float, 3>, kColorCount> kPalette = {{
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.20f, 0.30f, 0.95f},  // blue
    {0.90f, 0.85f, 0.10f},  // yellow
    {0.85f, 0.20f, 0.85f},  // magenta
    {0.10f, 0.85f, 0.85f},  // cyan
}};

enum class QuestionKind { kColorOfShape, kShapeOfColor };

struct SynthTaskConfig {
  int image_side_px = 64;
  int cell_grid = 8;
  int num_colors = kColorCount;
  double min_area_fraction = 36.0 / 4096.0;
  double max_area_fraction = 64.0 / 4096.0;
  int min_distractors = 1;
  int max_distractors = 1;
  double background_noise = 0.15;
  bool ask_color = true;
  bool ask_shape = true;

  int cell_px() const { return image_side_px / cell_grid; }
  int min_side() const {
    return static_cast<int>(std::ceil(std::sqrt(min_area_fraction) * image_side_px - 1e-9));
  }
  int max_side() const {
    return std::min(cell_px(), static_cast<int>(std::floor(std::sqrt(max_area_fraction) * image_side_px + 1e-9)));
  }

  void validate() const {
    if (image_side_px < 1 || cell_grid < 1 || image_side_px % cell_grid != 0)
      throw ConfigError("synth: image side must be a multiple of cell_grid");
    if (!(min_area_fraction > 0.0 && min_area_fraction <= max_area_fraction && max_area_fraction < 1.0))
      throw ConfigError("synth: area fraction range must lie in (0,1)");
    if (min_side() < 2 || min_side() > max_side())
      throw ConfigError("synth: no glyph size satisfies the area range within one cell");
    if (min_distractors < 0 || min_distractors > max_distractors)
      throw ConfigError("synth: bad distractor range");
    if (max_distractors + 1 > cell_grid * cell_grid)
      throw ConfigError("synth: " + std::to_string(max_distractors + 1) + " glyphs do not fit in " +
                        std::to_string(cell_grid * cell_grid) + " cells");
    if (num_colors < 2 || num_colors > kColorCount) throw ConfigError("synth: num_colors must be in [2,6]");
    if (!ask_color && !ask_shape) throw ConfigError("synth: no question template enabled");
  }
};

struct Glyph {
  Shape shape = Shape::kSquare;
  int color = 0;
  int x = 0;  // top-left pixel
  int y = 0;
  int side = 0;
};

struct SynthSample {
  ConversationSample sample;
  ImageTensor image;
  QuestionKind kind = QuestionKind::kColorOfShape;
  Glyph target;
  std::vector<Glyph> distractors;
  std::string question_text;
  std::string answer_text;
};

/// Whether pixel (dx, dy) of a side x side glyph box is inked. Every shape
/// touches all four edges, so the tight box is always side x side.
inline bool glyph_covers(Shape s, int side, int dx, int dy) {
  const double c = (side - 1) / 2.0;
  switch (s) {
    case Shape::kSquare:
      return true;
    case Shape::kCircle: {
      const double r = side / 2.0;
      return (dx - c) * (dx - c) + (dy - c) * (dy - c) <= r * r;
    }
    case Shape::kTriangle: {
      // Apex on the top row, full-width base on the bottom row.
      const double half = side == 1 ? 0.5 : 0.5 + c * dy / (side - 1);
      return std::abs(dx - c) <= half + 1e-9;
    }
    case Shape::kCross: {
      const int t = std::max(1, (side + 1) / 3);
      const int lo = (side - t) / 2;
      return (dx >= lo && dx < lo + t) || (dy >= lo && dy < lo + t);
    }
  }
  return false;
}

inline void draw_glyph(ImageTensor& img, const Glyph& g) {
  const auto& rgb = kPalette[static_cast<std::size_t>(g.color)];
  for (int dy = 0; dy < g.side; ++dy)
    for (int dx = 0; dx < g.side; ++dx)
      if (glyph_covers(g.shape, g.side, dx, dy))
        for (int c = 0; c < 3; ++c) img.at(g.y + dy, g.x + dx, c) = rgb[static_cast<std::size_t>(c)];
}

inline std::string shape_word(Shape s) { return std::string(kShapeWords[static_cast<std::size_t>(s)]); }
inline std::string color_word(int c) { return std::string(kColorWords[static_cast<std::size_t>(c)]); }

/// Deterministic in (seed, cfg).
inline SynthSample gen_sample(std::uint64_t seed, const SynthTaskConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  Rng rng(seed);
  SynthSample out;
  const int n_distract = rng.uniform_int(cfg.min_distractors, cfg.max_distractors);
  if (cfg.ask_color && cfg.ask_shape)
    out.kind = rng.uniform_int(0, 1) == 0 ? QuestionKind::kColorOfShape : QuestionKind::kShapeOfColor;
  else
    out.kind = cfg.ask_color ? QuestionKind::kColorOfShape : QuestionKind::kShapeOfColor;

  const int cells = cfg.cell_grid * cfg.cell_grid;
  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i <= n_distract; ++i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i, cells - 1))]);

  auto place = [&](Glyph& g, int cell) {
    g.side = rng.uniform_int(cfg.min_side(), cfg.max_side());
    const int cx = (cell % cfg.cell_grid) * cfg.cell_px();
    const int cy = (cell / cfg.cell_grid) * cfg.cell_px();
    g.x = cx + rng.uniform_int(0, cfg.cell_px() - g.side);
    g.y = cy + rng.uniform_int(0, cfg.cell_px() - g.side);
  };

  Glyph& t = out.target;
  t.shape = static_cast<Shape>(rng.uniform_int(0, kShapeCount - 1));
  t.color = rng.uniform_int(0, cfg.num_colors - 1);
  place(t, order[0]);
  for (int i = 1; i <= n_distract; ++i) {
    Glyph d;
    if (out.kind == QuestionKind::kColorOfShape) {
      // Any shape but the target's; colors are free.
      int s = rng.uniform_int(0, kShapeCount - 2);
      if (s >= static_cast<int>(t.shape)) ++s;
      d.shape = static_cast<Shape>(s);
      d.color = rng.uniform_int(0, cfg.num_colors - 1);
    } else {
      d.shape = static_cast<Shape>(rng.uniform_int(0, kShapeCount - 1));
      int c = rng.uniform_int(0, cfg.num_colors - 2);
      if (c >= t.color) ++c;
      d.color = c;
    }
    place(d, order[static_cast<std::size_t>(i)]);
    out.distractors.push_back(d);
  }

  ImageTensor& img = out.image;
  img = ImageTensor(cfg.image_side_px, cfg.image_side_px, 3);
  for (float& v : img.values) v = static_cast<float>(cfg.background_noise * rng.uniform());
  for (const Glyph& d : out.distractors) draw_glyph(img, d);
  draw_glyph(img, t);

  if (out.kind == QuestionKind::kColorOfShape) {
    out.question_text = "what color is the " + shape_word(t.shape);
    out.answer_text = color_word(t.color);
  } else {
    out.question_text = "what shape is the " + color_word(t.color);
    out.answer_text = shape_word(t.shape);
  }
  ConversationSample& s = out.sample;
  s.image_seed = seed;
  s.question = vocab.encode_words(out.question_text);
  s.answer = vocab.encode_words(out.answer_text);
  s.gt_boxes.push_back(normalize_box({t.x, t.y, t.x + t.side, t.y + t.side}, img.dims()));
  return out;
}

}  // namespace vcot

#endif  // VCOT_SYNTH_HPP_
