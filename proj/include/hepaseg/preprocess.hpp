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

#ifndef HEPASEG_PREPROCESS_HPP
#define HEPASEG_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

inline constexpr double kDefaultWindowLo = -100.0;
inline constexpr double kDefaultWindowHi = 400.0;

/// Row-major 2-D grid, x fastest.
template <typename T>
struct Image2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Image2D() = default;
  Image2D(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}
  Image2D(std::size_t w, std::size_t h, std::vector<T> d) : width(w), height(h), data(std::move(d)) {
    if (data.size() != w * h) throw UsageError("image data length does not match dims");
  }

  std::size_t size() const { return data.size(); }
  T& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }

  friend bool operator==(const Image2D&, const Image2D&) = default;
};

template <typename T>
Image2D<T> extract_slice(const Volume<T>& vol, std::size_t z) {
  const std::size_t n = vol.grid().slice_size();
  const auto first = vol.storage().begin() + static_cast<std::ptrdiff_t>(z * n);
  return Image2D<T>(vol.dims()[0], vol.dims()[1], std::vector<T>(first, first + std::ptrdiff_t(n)));
}

template <typename T>
void insert_slice(Volume<T>& vol, std::size_t z, const Image2D<T>& img) {
  if (img.width != vol.dims()[0] || img.height != vol.dims()[1])
    throw UsageError("slice dims do not match volume");
  std::copy(img.data.begin(), img.data.end(),
            vol.storage().begin() + static_cast<std::ptrdiff_t>(z * img.size()));
}

template <typename T>
Volume<T> hu_window(const Volume<T>& vol, double lo = kDefaultWindowLo,
                    double hi = kDefaultWindowHi) {
  if (!(lo < hi)) throw UsageError("window lower bound must be below upper bound");
  Volume<T> out(vol.grid());
  for (std::size_t i = 0; i < vol.size(); ++i)
    out[i] = static_cast<T>(std::clamp(double(vol[i]), lo, hi));
  return out;
}

/// Per-slice histogram equalization over [lo, hi] with equal-width bins.
inline Image2D<float> hist_equalize_slice(const Image2D<float>& slice, int bins = 256,
                                          double lo = kDefaultWindowLo,
                                          double hi = kDefaultWindowHi) {
  if (slice.size() == 0) throw UsageError("cannot equalize an empty slice");
  if (!(hi > lo)) throw UsageError("degenerate equalization range");
  if (bins <= 0) throw UsageError("bin count must be positive");
  auto bin_of = [&](float v) {
    if (!(v >= lo && v <= hi)) throw UsageError("slice value outside equalization range");
    const auto b = static_cast<int>(std::floor((double(v) - lo) / (hi - lo) * bins));
    return std::min(b, bins - 1);
  };
  std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
  for (float v : slice.data) ++hist[std::size_t(bin_of(v))];
  std::vector<double> cdf(static_cast<std::size_t>(bins));
  std::size_t run = 0;
  double cdf_min = -1.0;
  for (int b = 0; b < bins; ++b) {
    run += hist[std::size_t(b)];
    cdf[std::size_t(b)] = double(run) / double(slice.size());
    if (cdf_min < 0.0 && hist[std::size_t(b)] > 0) cdf_min = cdf[std::size_t(b)];
  }
  const double denom = 1.0 - cdf_min;
  Image2D<float> out(slice.width, slice.height);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double c = cdf[std::size_t(bin_of(slice.data[i]))];
    const double t = denom > 0.0 ? (c - cdf_min) / denom : 0.0;
    out.data[i] = static_cast<float>(lo + (hi - lo) * t);
  }
  return out;
}

inline RealVolume hist_equalize(const RealVolume& vol, int bins = 256,
                                double lo = kDefaultWindowLo, double hi = kDefaultWindowHi) {
  RealVolume out(vol.grid());
  for (std::size_t z = 0; z < vol.dims()[2]; ++z)
    insert_slice(out, z, hist_equalize_slice(extract_slice(vol, z), bins, lo, hi));
  return out;
}

struct PreprocessOptions {
  double window_lo = kDefaultWindowLo;
  double window_hi = kDefaultWindowHi;
  bool equalize = true;
  int bins = 256;
};

/// Window then (optionally) equalize slice by slice; output stays in HU
/// units within the window.
inline RealVolume preprocess(const CtVolume& ct, const PreprocessOptions& opt = {}) {
  RealVolume windowed = hu_window(convert<float>(ct), opt.window_lo, opt.window_hi);
  if (!opt.equalize) return windowed;
  return hist_equalize(windowed, opt.bins, opt.window_lo, opt.window_hi);
}

struct AugmentParams {
  int max_shift_vox = 20;
  double max_rot_deg = 10.0;
  double noise_sigma = 10.0;
  std::uint64_t seed = 0;
};

struct AugmentedSlice {
  Image2D<float> image;
  Image2D<std::uint8_t> labels;
};

/// Random translation, in-plane rotation about the slice center and additive
/// Gaussian noise (image only). Samples outside the slice clamp to the border.
inline AugmentedSlice augment(const Image2D<float>& image, const Image2D<std::uint8_t>& labels,
                              const AugmentParams& p) {
  if (image.width != labels.width || image.height != labels.height)
    throw DataError("image and label slices differ in size");
  if (p.max_shift_vox < 0 || !(p.max_rot_deg >= 0.0) || !(p.noise_sigma >= 0.0) ||
      !std::isfinite(p.max_rot_deg) || !std::isfinite(p.noise_sigma))
    throw UsageError("augmentation bounds must be finite and nonnegative");
  std::mt19937_64 rng(p.seed);
  std::uniform_int_distribution<int> shift(-p.max_shift_vox, p.max_shift_vox);
  const int sx = shift(rng);
  const int sy = shift(rng);
  const double deg = std::uniform_real_distribution<double>(-p.max_rot_deg, p.max_rot_deg)(rng);
  const double theta = deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = 0.5 * double(image.width - 1), cy = 0.5 * double(image.height - 1);
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);

  AugmentedSlice out{Image2D<float>(image.width, image.height),
                     Image2D<std::uint8_t>(image.width, image.height)};
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      // Inverse map: undo the shift, then rotate by -theta about the center.
      const double ux = double(x - sx) - cx, uy = double(y - sy) - cy;
      const double fx = std::clamp(c * ux + s * uy + cx, 0.0, double(w - 1));
      const double fy = std::clamp(-s * ux + c * uy + cy, 0.0, double(h - 1));
      const auto x0 = static_cast<long>(std::floor(fx)), y0 = static_cast<long>(std::floor(fy));
      const long x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double tx = fx - double(x0), ty = fy - double(y0);
      auto px = [&](long xx, long yy) { return double(image.at(std::size_t(xx), std::size_t(yy))); };
      const double v = (1 - ty) * ((1 - tx) * px(x0, y0) + tx * px(x1, y0)) +
                       ty * ((1 - tx) * px(x0, y1) + tx * px(x1, y1));
      out.image.at(std::size_t(x), std::size_t(y)) = static_cast<float>(v);
      const auto nx = static_cast<std::size_t>(std::ceil(fx - 0.5));
      const auto ny = static_cast<std::size_t>(std::ceil(fy - 0.5));
      out.labels.at(std::size_t(x), std::size_t(y)) = labels.at(nx, ny);
    }
  if (p.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (auto& v : out.image.data) v = static_cast<float>(v + noise(rng));
  }
  return out;
}

}  // namespace hepaseg

#endif  // HEPASEG_PREPROCESS_HPP
