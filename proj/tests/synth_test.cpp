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

#include <gtest/gtest.h>

#include "vcot/synth.hpp"

namespace vcot {
namespace {

struct Read {
  std::string shape;
  std::string color;
};

bool is_ink(const ImageTensor& img, int y, int x, int* color) {
  for (int k = 0; k < kColorCount; ++k) {
    const auto& p = kPalette[static_cast<std::size_t>(k)];
    if (img.at(y, x, 0) == p[0] && img.at(y, x, 1) == p[1] && img.at(y, x, 2) == p[2]) {
      *color = k;
      return true;
    }
  }
  return false;
}

// Reads a glyph back from pixels alone: ink mask features decide the shape,
// the palette match decides the color.
Read read_glyph(const ImageTensor& img, int x0, int y0, int side) {
  int color = -1, ink = 0;
  std::vector<std::vector<bool>> m(static_cast<std::size_t>(side), std::vector<bool>(static_cast<std::size_t>(side)));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      int c = -1;
      if (is_ink(img, y0 + y, x0 + x, &c)) {
        EXPECT_TRUE(color < 0 || color == c);
        color = c;
        m[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = true;
        ++ink;
      }
    }
  auto row_full = [&](int y) {
    return std::all_of(m[static_cast<std::size_t>(y)].begin(), m[static_cast<std::size_t>(y)].end(), [](bool b) { return b; });
  };
  const double fill = static_cast<double>(ink) / (side * side);
  std::string shape;
  if (ink == side * side)
    shape = "square";
  else if (row_full(side - 1) && !row_full(0))
    shape = "triangle";
  else if (fill >= 0.7)
    shape = "circle";
  else
    shape = "cross";
  return {shape, color >= 0 ? color_word(color) : "?"};
}

TEST(Synth, DeterministicBytes) {
  const SynthTaskConfig cfg;
  const Vocab v;
  for (std::uint64_t seed : {0ull, 1ull, 123456789ull}) {
    const auto a = gen_sample(seed, cfg, v), b = gen_sample(seed, cfg, v);
    ASSERT_EQ(a.image.values.size(), b.image.values.size());
    EXPECT_EQ(std::memcmp(a.image.values.data(), b.image.values.data(), a.image.values.size() * sizeof(float)), 0);
    EXPECT_EQ(a.sample.question, b.sample.question);
    EXPECT_EQ(a.sample.answer, b.sample.answer);
    EXPECT_EQ(a.sample.gt_boxes, b.sample.gt_boxes);
  }
  EXPECT_NE(gen_sample(0, cfg, v).image.values, gen_sample(1, cfg, v).image.values);
}

TEST(Synth, TargetAreaWithinRangeOver10kSeeds) {
  const SynthTaskConfig cfg;
  const Vocab v;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto s = gen_sample(seed, cfg, v);
    ASSERT_EQ(s.sample.gt_boxes.size(), 1u);
    const double a = s.sample.gt_boxes[0].area();
    ASSERT_GE(a, cfg.min_area_fraction - 1e-12) << seed;
    ASSERT_LE(a, cfg.max_area_fraction + 1e-12) << seed;
    ASSERT_LE(a, 0.02);
    // Fits inside one layout cell.
    const double cell = 1.0 / cfg.cell_grid;
    const BBox& b = s.sample.gt_boxes[0];
    ASSERT_EQ(std::floor(b.x_min / cell + 1e-9), std::floor(b.x_max / cell - 1e-9)) << seed;
    ASSERT_EQ(std::floor(b.y_min / cell + 1e-9), std::floor(b.y_max / cell - 1e-9)) << seed;
  }
}

TEST(Synth, AnswerRederivedFromPixels) {
  SynthTaskConfig cfg;
  const Vocab v;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto s = gen_sample(seed, cfg, v);
    const BBox& b = s.sample.gt_boxes[0];
    const int x0 = static_cast<int>(std::lround(b.x_min * 64)), y0 = static_cast<int>(std::lround(b.y_min * 64));
    const int side = static_cast<int>(std::lround(b.width() * 64));
    const Read t = read_glyph(s.image, x0, y0, side);
    const std::string answer = v.decode_words(s.sample.answer);
    const std::string question = v.decode_words(s.sample.question);
    // The named attribute is the target's and no distractor shares it.
    const std::string named = question.substr(question.rfind(' ') + 1);
    if (question.rfind("what color", 0) == 0) {
      EXPECT_EQ(t.color, answer) << seed;
      EXPECT_EQ(t.shape, named) << seed;
    } else {
      EXPECT_EQ(t.shape, answer) << seed;
      EXPECT_EQ(t.color, named) << seed;
    }
    for (const Glyph& d : s.distractors) {
      const Read r = read_glyph(s.image, d.x, d.y, d.side);
      EXPECT_NE(question.rfind("what color", 0) == 0 ? r.shape : r.color, named) << seed;
    }
  }
}

TEST(Synth, QuestionTemplateSwitches) {
  SynthTaskConfig cfg;
  const Vocab v;
  cfg.ask_shape = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(gen_sample(seed, cfg, v).kind, QuestionKind::kColorOfShape);
  cfg.ask_shape = true;
  cfg.ask_color = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(gen_sample(seed, cfg, v).kind, QuestionKind::kShapeOfColor);
}

TEST(Synth, DistractorCountRange) {
  SynthTaskConfig cfg;
  cfg.min_distractors = 2;
  cfg.max_distractors = 3;
  const Vocab v;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto n = gen_sample(seed, cfg, v).distractors.size();
    EXPECT_TRUE(n == 2 || n == 3);
  }
}

TEST(Synth, InfeasibleConfigs) {
  const Vocab v;
  SynthTaskConfig cfg;
  cfg.max_distractors = 64;
  EXPECT_THROW(gen_sample(0, cfg, v), ConfigError);
  cfg = {};
  cfg.image_side_px = 60;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_area_fraction = 0.5;
  cfg.max_area_fraction = 0.6;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_area_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.ask_color = cfg.ask_shape = false;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace vcot
