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

// Cropping and resampling. Resampling uses the align-corners convention:
// destination index d maps to source coordinate d * (n_src - 1) / (n_dst - 1),
// or to the volume center when the destination axis has a single sample.
// Samples outside the source clamp to the edge voxel.

#ifndef HEPASEG_GEOMETRY_HPP
#define HEPASEG_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

enum class Interp { kLinear, kNearest };

/// Expands `box` by ceil(pad_mm / spacing) voxels per axis, clamped to dims.
inline BoundingBox pad_box(const BoundingBox& box, const Grid& grid, double pad_mm) {
  if (!box.valid_for(grid.dims)) throw UsageError("bounding box outside volume");
  if (!(pad_mm >= 0.0) || !std::isfinite(pad_mm)) throw UsageError("padding must be nonnegative");
  BoundingBox out = box;
  for (int a = 0; a < 3; ++a) {
    const auto pad = static_cast<std::size_t>(std::ceil(pad_mm / grid.spacing[a] - 1e-9));
    out.lo[a] = box.lo[a] > pad ? box.lo[a] - pad : 0;
    out.hi[a] = std::min(grid.dims[a] - 1, box.hi[a] + pad);
  }
  return out;
}

template <typename T>
Volume<T> crop(const Volume<T>& vol, const BoundingBox& box, double pad_mm = 0.0) {
  const BoundingBox b = pad_box(box, vol.grid(), pad_mm);
  const Dims ext = b.extent();
  Volume<T> out(Grid{ext, vol.spacing()});
  for (std::size_t z = 0; z < ext[2]; ++z)
    for (std::size_t y = 0; y < ext[1]; ++y)
      for (std::size_t x = 0; x < ext[0]; ++x)
        out.at(x, y, z) = vol.at(b.lo[0] + x, b.lo[1] + y, b.lo[2] + z);
  return out;
}

inline ProbVolume crop(const ProbVolume& vol, const BoundingBox& box, double pad_mm = 0.0) {
  const BoundingBox b = pad_box(box, vol.grid(), pad_mm);
  const Dims ext = b.extent();
  const Grid g{ext, vol.spacing()};
  ProbVolume out(g, vol.classes());
  for (std::size_t c = 0; c < vol.classes(); ++c)
    for (std::size_t z = 0; z < ext[2]; ++z)
      for (std::size_t y = 0; y < ext[1]; ++y)
        for (std::size_t x = 0; x < ext[0]; ++x)
          out.at(c, g.index(x, y, z)) =
              vol.at(c, vol.grid().index(b.lo[0] + x, b.lo[1] + y, b.lo[2] + z));
  return out;
}

/// Writes `src` into `dst` with its origin at `lo`.
template <typename T>
void paste(Volume<T>& dst, const Volume<T>& src, const Index3& lo) {
  for (int a = 0; a < 3; ++a)
    if (lo[a] + src.dims()[a] > dst.dims()[a]) throw UsageError("paste region outside volume");
  for (std::size_t z = 0; z < src.dims()[2]; ++z)
    for (std::size_t y = 0; y < src.dims()[1]; ++y)
      for (std::size_t x = 0; x < src.dims()[0]; ++x)
        dst.at(lo[0] + x, lo[1] + y, lo[2] + z) = src.at(x, y, z);
}

namespace detail {

/// Source coordinate of destination index d.
inline double source_coord(std::size_t d, std::size_t n_src, std::size_t n_dst) {
  if (n_dst == 1) return 0.5 * double(n_src - 1);
  return double(d * (n_src - 1)) / double(n_dst - 1);
}

struct AxisSample {
  std::size_t i0, i1;  // linear neighbours
  double t;            // weight of i1
  std::size_t nearest;
};

inline std::vector<AxisSample> axis_samples(std::size_t n_src, std::size_t n_dst) {
  std::vector<AxisSample> out(n_dst);
  for (std::size_t d = 0; d < n_dst; ++d) {
    const double c = std::clamp(source_coord(d, n_src, n_dst), 0.0, double(n_src - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(c));
    const std::size_t i1 = std::min(i0 + 1, n_src - 1);
    // Ties at exactly .5 go to the lower index.
    const auto nearest = static_cast<std::size_t>(std::ceil(c - 0.5));
    out[d] = {i0, i1, c - double(i0), std::min(nearest, n_src - 1)};
  }
  return out;
}

inline Grid resampled_grid(const Grid& g, const Dims& dims) {
  Grid out{dims, g.spacing};
  for (int a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw UsageError("resample dims must be positive");
    if (dims[a] == g.dims[a]) continue;
    if (g.dims[a] > 1 && dims[a] > 1)
      out.spacing[a] = g.spacing[a] * double(g.dims[a] - 1) / double(dims[a] - 1);
    else
      out.spacing[a] = g.spacing[a] * double(g.dims[a]) / double(dims[a]);
  }
  return out;
}

template <typename Sample>
void resample_channel(const Grid& src, const Grid& dst, Interp mode, Sample&& sample) {
  const auto ax = axis_samples(src.dims[0], dst.dims[0]);
  const auto ay = axis_samples(src.dims[1], dst.dims[1]);
  const auto az = axis_samples(src.dims[2], dst.dims[2]);
  for (std::size_t z = 0; z < dst.dims[2]; ++z)
    for (std::size_t y = 0; y < dst.dims[1]; ++y)
      for (std::size_t x = 0; x < dst.dims[0]; ++x) {
        const std::size_t o = dst.index(x, y, z);
        if (mode == Interp::kNearest) {
          sample(o, src.index(ax[x].nearest, ay[y].nearest, az[z].nearest), 1.0);
          continue;
        }
        for (int k = 0; k < 8; ++k) {
          const auto& sx = ax[x];
          const auto& sy = ay[y];
          const auto& sz = az[z];
          const double w = ((k & 1) ? sx.t : 1.0 - sx.t) * ((k & 2) ? sy.t : 1.0 - sy.t) *
                           ((k & 4) ? sz.t : 1.0 - sz.t);
          const std::size_t i = src.index((k & 1) ? sx.i1 : sx.i0, (k & 2) ? sy.i1 : sy.i0,
                                          (k & 4) ? sz.i1 : sz.i0);
          sample(o, i, w);
        }
      }
}

}  // namespace detail

template <typename T>
Volume<T> resample(const Volume<T>& vol, const Dims& dims, Interp mode) {
  if constexpr (std::is_same_v<T, std::uint8_t>)
    if (mode == Interp::kLinear)
      throw UsageError("label volumes can only be resampled with nearest-neighbour interpolation");
  const Grid dst = detail::resampled_grid(vol.grid(), dims);
  Volume<T> out(dst);
  if (mode == Interp::kNearest) {
    detail::resample_channel(vol.grid(), dst, mode,
                             [&](std::size_t o, std::size_t i, double) {
                               out[o] = vol[i];
                             });
    return out;
  }
  std::vector<double> acc(dst.size(), 0.0);
  detail::resample_channel(vol.grid(), dst, mode,
                           [&](std::size_t o, std::size_t i, double w) {
                             acc[o] += w * double(vol[i]);
                           });
  for (std::size_t o = 0; o < acc.size(); ++o) {
    if constexpr (std::is_integral_v<T>)
      out[o] = static_cast<T>(std::lround(acc[o]));
    else
      out[o] = static_cast<T>(acc[o]);
  }
  return out;
}

/// Per-channel resampling; linear interpolation is a convex combination, so
/// rows stay normalized.
inline ProbVolume resample(const ProbVolume& vol, const Dims& dims, Interp mode) {
  const Grid dst = detail::resampled_grid(vol.grid(), dims);
  ProbVolume out(dst, vol.classes());
  for (std::size_t c = 0; c < vol.classes(); ++c) {
    const auto src = vol.channel(c);
    auto o_ch = out.channel(c);
    std::vector<double> acc(dst.size(), 0.0);
    detail::resample_channel(vol.grid(), dst, mode,
                             [&](std::size_t o, std::size_t i, double w) {
                               acc[o] += w * double(src[i]);
                             });
    for (std::size_t o = 0; o < acc.size(); ++o) o_ch[o] = static_cast<float>(acc[o]);
  }
  return out;
}

}  // namespace hepaseg

#endif  // HEPASEG_GEOMETRY_HPP
