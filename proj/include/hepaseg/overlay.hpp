// Copyright 2026 The hepaseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Slice overlays: grayscale windowed CT with prediction/ground-truth
// agreement painted at 50% opacity. Green = correct liver, yellow = liver
// error, blue = correct lesion, red = lesion error.

#ifndef HEPASEG_OVERLAY_HPP
#define HEPASEG_OVERLAY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/preprocess.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

enum class OverlayClass : std::uint8_t { kNone, kCorrectLiver, kLiverError, kCorrectLesion, kLesionError };

inline OverlayClass classify_pixel(std::uint8_t pred, std::uint8_t gt) {
  if (pred == kLesion && gt == kLesion) return OverlayClass::kCorrectLesion;
  if (pred == kLesion || gt == kLesion) return OverlayClass::kLesionError;
  if (pred == kLiver && gt == kLiver) return OverlayClass::kCorrectLiver;
  if (pred == kLiver || gt == kLiver) return OverlayClass::kLiverError;
  return OverlayClass::kNone;
}

inline std::array<std::uint8_t, 3> overlay_color(OverlayClass c) {
  switch (c) {
    case OverlayClass::kCorrectLiver: return {0, 255, 0};
    case OverlayClass::kLiverError: return {255, 255, 0};
    case OverlayClass::kCorrectLesion: return {0, 0, 255};
    case OverlayClass::kLesionError: return {255, 0, 0};
    case OverlayClass::kNone: break;
  }
  return {0, 0, 0};
}

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

struct OverlayCounts {
  std::size_t correct_liver = 0, liver_error = 0, correct_lesion = 0, lesion_error = 0;
};

struct Overlay {
  RgbImage image;
  OverlayCounts counts;
};

inline Overlay render_overlay(const CtVolume& ct, const LabelVolume& pred, const LabelVolume& gt,
                              std::size_t z, double window_lo = kDefaultWindowLo,
                              double window_hi = kDefaultWindowHi) {
  require_same_dims(ct.grid(), pred.grid(), "overlay");
  require_same_dims(ct.grid(), gt.grid(), "overlay");
  if (z >= ct.dims()[2])
    throw UsageError("slice " + std::to_string(z) + " out of range (volume has " +
                     std::to_string(ct.dims()[2]) + " slices)");
  if (!(window_lo < window_hi)) throw UsageError("bad display window");
  Overlay out;
  const std::size_t w = ct.dims()[0], h = ct.dims()[1], base = z * w * h;
  out.image = {w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t i = 0; i < w * h; ++i) {
    const double t = (std::clamp(double(ct[base + i]), window_lo, window_hi) - window_lo) /
                     (window_hi - window_lo);
    const double gray = std::round(255.0 * t);
    const OverlayClass c = classify_pixel(pred[base + i], gt[base + i]);
    const auto col = overlay_color(c);
    for (int k = 0; k < 3; ++k) {
      const double v = c == OverlayClass::kNone ? gray : std::round(0.5 * gray + 0.5 * col[k]);
      out.image.rgb[3 * i + k] = static_cast<std::uint8_t>(v);
    }
    switch (c) {
      case OverlayClass::kCorrectLiver: ++out.counts.correct_liver; break;
      case OverlayClass::kLiverError: ++out.counts.liver_error; break;
      case OverlayClass::kCorrectLesion: ++out.counts.correct_lesion; break;
      case OverlayClass::kLesionError: ++out.counts.lesion_error; break;
      case OverlayClass::kNone: break;
    }
  }
  return out;
}

}  // namespace hepaseg

#endif  // HEPASEG_OVERLAY_HPP
