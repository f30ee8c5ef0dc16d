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

// Exact squared Euclidean distance transform on an anisotropic grid, one
// axis at a time with the lower-envelope-of-parabolas method.

#ifndef HEPASEG_DISTANCE_TRANSFORM_HPP
#define HEPASEG_DISTANCE_TRANSFORM_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "hepaseg/volume.hpp"

namespace hepaseg {

namespace detail {

/// In-place 1-D transform of f (infinity = no site) along a line with
/// sample spacing h: d(q) = min_p ((q - p) h)^2 + f(p).
inline void edt_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z,
                   std::vector<double>& d) {
  const int n = int(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  v.assign(std::size_t(n), 0);
  z.assign(std::size_t(n) + 1, 0.0);
  d.assign(std::size_t(n), inf);
  int k = -1;
  double s = 0.0;
  for (int q = 0; q < n; ++q) {
    const double fq = f[std::size_t(q)];
    if (fq == inf) continue;
    const double pq = q * h;
    while (k >= 0) {
      const int p = v[std::size_t(k)];
      const double pp = p * h;
      // Abscissa where the parabolas rooted at p and q intersect.
      s = ((fq + pq * pq) - (f[std::size_t(p)] + pp * pp)) / (2.0 * (pq - pp));
      if (s > z[std::size_t(k)]) break;
      --k;
    }
    if (k < 0) {
      k = 0;
      z[0] = -inf;
    } else {
      ++k;
      z[std::size_t(k)] = s;
    }
    v[std::size_t(k)] = q;
    z[std::size_t(k) + 1] = inf;
  }
  if (k < 0) {  // no sites on this line
    for (auto& x : f) x = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[std::size_t(j) + 1] < q * h) ++j;
    const int p = v[std::size_t(j)];
    const double t = (q - p) * h;
    d[std::size_t(q)] = t * t + f[std::size_t(p)];
  }
  f.swap(d);
}

}  // namespace detail

/// Squared distance in mm from every voxel center to the nearest nonzero
/// voxel of `sites`; +inf everywhere if there are none.
inline std::vector<double> squared_distance_transform(const LabelVolume& sites) {
  const Grid& g = sites.grid();
  const std::size_t nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) dist[i] = sites[i] ? 0.0 : inf;
  std::vector<double> line, z, d;
  std::vector<int> v;
  const std::size_t len[3] = {nx, ny, nz};
  const std::size_t stride[3] = {1, nx, nx * ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t lines = sites.size() / len[axis];
    line.resize(len[axis]);
    for (std::size_t l = 0; l < lines; ++l) {
      std::size_t base;
      if (axis == 0) base = l * nx;
      else if (axis == 1) base = (l / nx) * nx * ny + (l % nx);
      else base = l;
      for (std::size_t p = 0; p < len[axis]; ++p) line[p] = dist[base + p * stride[axis]];
      detail::edt_1d(line, g.spacing[axis], v, z, d);
      for (std::size_t p = 0; p < len[axis]; ++p) dist[base + p * stride[axis]] = line[p];
    }
  }
  return dist;
}

}  // namespace hepaseg

#endif  // HEPASEG_DISTANCE_TRANSFORM_HPP
