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

#ifndef VCOT_ROI_GEOMETRY_HPP_
#define VCOT_ROI_GEOMETRY_HPP_

// Normalized-coordinate boxes: text wire format, context expansion,
// squarification and overlap metrics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vcot/errors.hpp"

namespace vcot {

/// Axis-aligned rectangle in normalized [0,1] image coordinates.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    return 0.0 <= x_min && x_min <= x_max && x_max <= 1.0 && 0.0 <= y_min &&
           y_min <= y_max && y_max <= 1.0;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct ImageDims {
  int width_px = 0;
  int height_px = 0;
};

/// Integer pixel rectangle, edges in pixel units (x_max/y_max exclusive).
struct PixelRect {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
};

inline void require_valid(const BBox& b, const char* what) {
  if (!b.valid()) throw InvalidInput(std::string(what) + ": box outside [0,1] or inverted");
}

inline void require_positive_area(const BBox& b, const char* what) {
  require_valid(b, what);
  if (!(b.area() > 0.0)) throw InvalidInput(std::string(what) + ": zero-area box");
}

inline BBox normalize_box(const PixelRect& r, ImageDims dims) {
  if (dims.width_px < 1 || dims.height_px < 1)
    throw InvalidInput("normalize_box: image dims must be positive");
  if (r.x_min > r.x_max || r.y_min > r.y_max)
    throw InvalidInput("normalize_box: inverted corners");
  if (r.x_min < 0 || r.y_min < 0 || r.x_max > dims.width_px ||
      r.y_max > dims.height_px)
    throw InvalidInput("normalize_box: rectangle outside image");
  const double w = dims.width_px;
  const double h = dims.height_px;
  return {r.x_min / w, r.y_min / h, r.x_max / w, r.y_max / h};
}

namespace detail {

// Rounds to the nearest thousandth, ties to even. A product that lands within
// 1e-9 of a half is treated as a decimal tie, so 0.0005 rounds like the
// literal it was written as rather than like its binary expansion.
inline std::int64_t to_thousandths(double v) {
  const double scaled = v * 1000.0;
  const double fl = std::floor(scaled);
  const double frac = scaled - fl;
  auto k = static_cast<std::int64_t>(fl);
  if (std::abs(frac - 0.5) < 1e-9) {
    if (k % 2 != 0) ++k;
  } else if (frac > 0.5) {
    ++k;
  }
  return k;
}

inline void append_fixed3(std::string& out, double v) {
  const std::int64_t k = to_thousandths(v);
  out += std::to_string(k / 1000);
  out += '.';
  const auto frac = static_cast<int>(k % 1000);
  out += static_cast<char>('0' + frac / 100);
  out += static_cast<char>('0' + (frac / 10) % 10);
  out += static_cast<char>('0' + frac % 10);
}

}  // namespace detail

/// Canonical wire form "[a, b, c, d]", three decimals, ties to even.
inline std::string serialize_box(const BBox& b) {
  std::string out;
  out.reserve(28);
  out += '[';
  const double v[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
  for (int i = 0; i < 4; ++i) {
    if (i) out += ", ";
    detail::append_fixed3(out, v[i]);
  }
  out += ']';
  return out;
}

/// Snaps each coordinate onto the 1e-3 lattice used by the wire format.
inline BBox quantize_box(const BBox& b) {
  auto q = [](double v) { return detail::to_thousandths(v) / 1000.0; };
  return {q(b.x_min), q(b.y_min), q(b.x_max), q(b.y_max)};
}

/// Parses "[a, b, c, d]" with arbitrary whitespace between tokens. Anything
/// else (extra tokens, wrong arity, non-numerics, out-of-range or inverted
/// coordinates) raises ParseError pointing at the offending span.
inline BBox parse_box(std::string_view text) {
  std::size_t pos = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  };
  auto skip_ws = [&] {
    while (pos < text.size() && is_space(text[pos])) ++pos;
  };
  auto fail = [&](const std::string& msg, std::size_t at, std::size_t len) {
    throw ParseError("parse_box: " + msg, at, len);
  };

  skip_ws();
  if (pos >= text.size() || text[pos] != '[') fail("expected '['", pos, 1);
  ++pos;

  double v[4];
  std::size_t starts[4];
  std::size_t lens[4];
  int n = 0;
  for (;;) {
    skip_ws();
    const std::size_t start = pos;
    while (pos < text.size() && !is_space(text[pos]) && text[pos] != ',' &&
           text[pos] != ']')
      ++pos;
    const std::string_view tok = text.substr(start, pos - start);
    if (tok.empty()) fail("missing number", start, 1);
    if (n == 4) fail("more than 4 numbers", start, tok.size());
    // from_chars accepts "inf"/"nan"; only plain decimals are allowed here.
    const bool plain = std::all_of(tok.begin(), tok.end(), [](char c) {
      return (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '+';
    });
    double value = 0.0;
    const char* first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), value);
    if (!plain || ec != std::errc() || ptr != tok.data() + tok.size())
      fail("non-numeric field '" + std::string(tok) + "'", start, tok.size());
    v[n] = value;
    starts[n] = start;
    lens[n] = tok.size();
    ++n;
    skip_ws();
    if (pos >= text.size()) fail("unterminated box", pos, 0);
    if (text[pos] == ',') {
      ++pos;
      continue;
    }
    if (text[pos] == ']') {
      ++pos;
      break;
    }
    fail("unexpected character", pos, 1);
  }
  if (n != 4) fail("expected 4 numbers, got " + std::to_string(n), 0, pos);
  skip_ws();
  if (pos != text.size()) fail("trailing characters", pos, text.size() - pos);

  for (int i = 0; i < 4; ++i)
    if (v[i] < 0.0 || v[i] > 1.0)
      fail("coordinate outside [0,1]", starts[i], lens[i]);
  if (v[0] > v[2]) fail("x_min > x_max", starts[0], starts[2] + lens[2] - starts[0]);
  if (v[1] > v[3]) fail("y_min > y_max", starts[1], starts[3] + lens[3] - starts[1]);
  return {v[0], v[1], v[2], v[3]};
}

namespace detail {
inline BBox clip_unit(double x0, double y0, double x1, double y1) {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {c(x0), c(y0), c(x1), c(y1)};
}
}  // namespace detail

/// Scales width and height by (1 + ratio) about the center, then clamps to
/// the unit square. Clamping does not re-center the box.
inline BBox expand_box(const BBox& b, double ratio) {
  require_positive_area(b, "expand_box");
  if (!(ratio >= 0.0)) throw InvalidInput("expand_box: ratio must be >= 0");
  if (ratio == 0.0) return b;
  const double hw = 0.5 * b.width() * (1.0 + ratio);
  const double hh = 0.5 * b.height() * (1.0 + ratio);
  const double cx = b.center_x();
  const double cy = b.center_y();
  return detail::clip_unit(cx - hw, cy - hh, cx + hw, cy + hh);
}

enum class SquarifyMode { kPadCrop, kSquareContext };

/// Crop keeps the box extent; zero padding on each side brings it to a
/// square of side max(w, h). All amounts in normalized units.
struct PaddingPlan {
  BBox crop;
  double side = 0.0;
  double pad_left = 0.0;
  double pad_right = 0.0;
  double pad_top = 0.0;
  double pad_bottom = 0.0;
};

inline PaddingPlan padding_plan(const BBox& b) {
  require_positive_area(b, "squarify_box");
  PaddingPlan p;
  p.crop = b;
  p.side = std::max(b.width(), b.height());
  const double dx = p.side - b.width();
  const double dy = p.side - b.height();
  p.pad_left = 0.5 * dx;
  p.pad_right = dx - p.pad_left;
  p.pad_top = 0.5 * dy;
  p.pad_bottom = dy - p.pad_top;
  return p;
}

/// Grows the shorter side to max(w, h) about the center, clamped to [0,1].
inline BBox square_context(const BBox& b) {
  require_positive_area(b, "squarify_box");
  const double side = std::max(b.width(), b.height());
  if (b.width() == side && b.height() == side) return b;
  const double cx = b.center_x();
  const double cy = b.center_y();
  const double x0 = b.width() == side ? b.x_min : cx - 0.5 * side;
  const double x1 = b.width() == side ? b.x_max : cx + 0.5 * side;
  const double y0 = b.height() == side ? b.y_min : cy - 0.5 * side;
  const double y1 = b.height() == side ? b.y_max : cy + 0.5 * side;
  return detail::clip_unit(x0, y0, x1, y1);
}

inline std::variant<BBox, PaddingPlan> squarify_box(const BBox& b,
                                                    SquarifyMode mode) {
  if (mode == SquarifyMode::kPadCrop) return padding_plan(b);
  return square_context(b);
}

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou(const BBox& a, const BBox& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) throw InvalidInput("iou: undefined for two zero-area boxes");
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Fraction of (pred, gt) pairs whose IoU reaches `threshold`.
inline double acc_at_iou(std::span<const BBox> preds, std::span<const BBox> gts,
                         double threshold) {
  if (preds.size() != gts.size())
    throw InvalidInput("acc_at_iou: prediction/ground-truth length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (iou(preds[i], gts[i]) >= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace vcot

#endif  // VCOT_ROI_GEOMETRY_HPP_
