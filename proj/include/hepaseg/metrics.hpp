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

// Overlap and surface-distance metrics. Surfaces are foreground voxels with
// at least one background 6-neighbour (outside the volume counts as
// background); distances are center-to-center in mm.

#ifndef HEPASEG_METRICS_HPP
#define HEPASEG_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hepaseg/distance_transform.hpp"
#include "hepaseg/error.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

namespace detail {

struct OverlapCounts {
  std::size_t a = 0, b = 0, both = 0;
};

inline OverlapCounts overlap(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred.grid(), gt.grid(), "metrics");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    c.a += a;
    c.b += b;
    c.both += a && b;
  }
  return c;
}

}  // namespace detail

/// 100 * 2|A n B| / (|A| + |B|); 100 when both are empty.
inline double dice(const LabelVolume& pred, const LabelVolume& gt) {
  const auto c = detail::overlap(pred, gt);
  if (c.a + c.b == 0) return 100.0;
  return 100.0 * 2.0 * double(c.both) / double(c.a + c.b);
}

/// 100 * (1 - |A n B| / |A u B|); 0 when both are empty.
inline double voe(const LabelVolume& pred, const LabelVolume& gt) {
  const auto c = detail::overlap(pred, gt);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 0.0;
  return 100.0 * (1.0 - double(c.both) / double(uni));
}

/// Signed relative volume difference 100 * (|A| - |B|) / |B|.
inline double rvd(const LabelVolume& pred, const LabelVolume& gt) {
  const auto c = detail::overlap(pred, gt);
  if (c.b == 0) throw DataError("relative volume difference is undefined for an empty reference");
  return 100.0 * (double(c.a) - double(c.b)) / double(c.b);
}

inline LabelVolume surface_mask(const LabelVolume& mask) {
  const Grid& g = mask.grid();
  const long nx = long(g.dims[0]), ny = long(g.dims[1]), nz = long(g.dims[2]);
  LabelVolume out(g, 0);
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        const std::size_t i = std::size_t(x + nx * (y + ny * z));
        if (!mask[i]) continue;
        auto bg = [&](long a, long b, long c) {
          if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) return true;
          return mask[std::size_t(a + nx * (b + ny * c))] == 0;
        };
        if (bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) || bg(x, y + 1, z) ||
            bg(x, y, z - 1) || bg(x, y, z + 1))
          out[i] = 1;
      }
  return out;
}

inline std::vector<std::size_t> surface_voxels(const LabelVolume& mask) {
  const LabelVolume s = surface_mask(mask);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i]) out.push_back(i);
  return out;
}

struct SurfaceDistances {
  double asd_mm = 0.0;
  double msd_mm = 0.0;
};

/// Mean and max of the pooled distances from each surface to the other.
inline SurfaceDistances surface_distances(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_grid(pred.grid(), gt.grid(), "surface distance");
  const LabelVolume sp = surface_mask(pred), sg = surface_mask(gt);
  const auto to_gt = squared_distance_transform(sg);
  const auto to_pred = squared_distance_transform(sp);
  double sum = 0.0, hi = 0.0;
  std::size_t count = 0;
  bool any_pred = false, any_gt = false;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]) {
      any_pred = true;
      const double d = std::sqrt(to_gt[i]);
      sum += d;
      hi = std::max(hi, d);
      ++count;
    }
    if (sg[i]) {
      any_gt = true;
      const double d = std::sqrt(to_pred[i]);
      sum += d;
      hi = std::max(hi, d);
      ++count;
    }
  }
  if (!any_pred || !any_gt) throw DataError("surface distances need two nonempty masks");
  return {sum / double(count), hi};
}

inline double asd(const LabelVolume& pred, const LabelVolume& gt) {
  return surface_distances(pred, gt).asd_mm;
}

inline double msd(const LabelVolume& pred, const LabelVolume& gt) {
  return surface_distances(pred, gt).msd_mm;
}

/// Metrics that are undefined (empty reference or empty mask) are empty.
struct MetricsReport {
  double voe_pct = 0.0;
  std::optional<double> rvd_pct;
  std::optional<double> asd_mm;
  std::optional<double> msd_mm;
  double dice_pct = 100.0;
};

inline MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t cls) {
  require_same_grid(pred.grid(), gt.grid(), "evaluate");
  const LabelVolume a = binarize(pred, cls), b = binarize(gt, cls);
  const auto c = detail::overlap(a, b);
  MetricsReport r;
  r.dice_pct = dice(a, b);
  r.voe_pct = voe(a, b);
  if (c.b > 0) r.rvd_pct = rvd(a, b);
  if (c.a > 0 && c.b > 0) {
    const auto sd = surface_distances(a, b);
    r.asd_mm = sd.asd_mm;
    r.msd_mm = sd.msd_mm;
  }
  return r;
}

inline constexpr const char* kMetricsCsvHeader =
    "volume_id,class,voe_pct,rvd_pct,asd_mm,msd_mm,dice_pct";

inline std::string metrics_csv_row(const std::string& volume_id, int cls, const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("NA"); };
  return volume_id + "," + std::to_string(cls) + "," + format_real(r.voe_pct) + "," +
         opt(r.rvd_pct) + "," + opt(r.asd_mm) + "," + opt(r.msd_mm) + "," + format_real(r.dice_pct);
}

}  // namespace hepaseg

#endif  // HEPASEG_METRICS_HPP
