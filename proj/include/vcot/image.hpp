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

#ifndef VCOT_IMAGE_HPP_
#define VCOT_IMAGE_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "vcot/errors.hpp"
#include "vcot/roi_geometry.hpp"

namespace vcot {

/// HWC float image with values in [0,1].
struct ImageTensor {
  int height_px = 0;
  int width_px = 0;
  int channels = 3;
  std::vector<float> values;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c = 3, float fill = 0.0f)
      : height_px(h), width_px(w), channels(c),
        values(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return values[(static_cast<std::size_t>(y) * width_px + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width_px + x) * channels + c];
  }
  ImageDims dims() const { return {width_px, height_px}; }

  void validate() const {
    if (height_px < 1 || width_px < 1 || channels < 1)
      throw InvalidInput("image: dimensions must be positive");
    if (values.size() != static_cast<std::size_t>(height_px) * width_px * channels)
      throw InvalidInput("image: value count does not match dimensions");
    for (float v : values)
      if (!std::isfinite(v)) throw InvalidInput("image: non-finite pixel");
  }
};

/// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5),
/// clamping neighbors to the image border.
inline float sample_bilinear(const ImageTensor& img, double sx, double sy, int c) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width_px - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height_px - 1));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width_px - 1);
  const int y1 = std::min(y0 + 1, img.height_px - 1);
  const double fx = sx - x0;
  const double fy = sy - y0;
  const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

/// Renders the normalized `canvas` rectangle into an out_h x out_w image.
/// Canvas points outside `content` (and outside the unit square) are zero,
/// which realizes the zero padding of a pad-crop.
inline ImageTensor crop_resize(const ImageTensor& img, const BBox& canvas, const BBox& content,
                               int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidInput("crop_resize: output size must be positive");
  ImageTensor out(out_h, out_w, img.channels, 0.0f);
  const double cw = canvas.x_max - canvas.x_min;
  const double ch = canvas.y_max - canvas.y_min;
  for (int oy = 0; oy < out_h; ++oy) {
    const double v = canvas.y_min + (oy + 0.5) / out_h * ch;
    if (v < content.y_min || v > content.y_max || v < 0.0 || v > 1.0) continue;
    for (int ox = 0; ox < out_w; ++ox) {
      const double u = canvas.x_min + (ox + 0.5) / out_w * cw;
      if (u < content.x_min || u > content.x_max || u < 0.0 || u > 1.0) continue;
      const double sx = u * img.width_px - 0.5;
      const double sy = v * img.height_px - 0.5;
      for (int c = 0; c < img.channels; ++c) out.at(oy, ox, c) = sample_bilinear(img, sx, sy, c);
    }
  }
  return out;
}

inline ImageTensor crop_resize(const ImageTensor& img, const BBox& region, int out_h, int out_w) {
  return crop_resize(img, region, region, out_h, out_w);
}

inline ImageTensor crop_resize(const ImageTensor& img, const PaddingPlan& plan, int out_h,
                               int out_w) {
  const BBox canvas{plan.crop.x_min - plan.pad_left, plan.crop.y_min - plan.pad_top,
                    plan.crop.x_max + plan.pad_right, plan.crop.y_max + plan.pad_bottom};
  return crop_resize(img, canvas, plan.crop, out_h, out_w);
}

}  // namespace vcot

#endif  // VCOT_IMAGE_HPP_
