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

#ifndef HEPASEG_COMPONENTS_HPP
#define HEPASEG_COMPONENTS_HPP

#include <cstdint>
#include <vector>

#include "hepaseg/volume.hpp"

namespace hepaseg {

struct Components {
  std::vector<std::int32_t> label;  // -1 for background, else component id
  std::vector<std::size_t> sizes;   // by component id, ids in scan order
};

/// 6-connected components of the nonzero voxels.
inline Components connected_components(const LabelVolume& mask) {
  const Grid& g = mask.grid();
  const long nx = long(g.dims[0]), ny = long(g.dims[1]), nz = long(g.dims[2]);
  Components out;
  out.label.assign(mask.size(), -1);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || out.label[seed] >= 0) continue;
    const auto id = static_cast<std::int32_t>(out.sizes.size());
    std::size_t count = 0;
    out.label[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      const auto c = g.coords(i);
      const long x = long(c[0]), y = long(c[1]), z = long(c[2]);
      const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                             {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nx || q[1] >= ny || q[2] >= nz) continue;
        const std::size_t j = std::size_t(q[0] + nx * (q[1] + ny * q[2]));
        if (mask[j] && out.label[j] < 0) {
          out.label[j] = id;
          stack.push_back(j);
        }
      }
    }
    out.sizes.push_back(count);
  }
  return out;
}

/// Keeps the largest 6-connected component (the first in scan order on a
/// tie). An empty mask stays empty.
inline LabelVolume largest_component(const LabelVolume& mask) {
  const Components cc = connected_components(mask);
  LabelVolume out(mask.grid(), 0);
  if (cc.sizes.empty()) return out;
  std::size_t best = 0;
  for (std::size_t k = 1; k < cc.sizes.size(); ++k)
    if (cc.sizes[k] > cc.sizes[best]) best = k;
  for (std::size_t i = 0; i < mask.size(); ++i)
    out[i] = cc.label[i] == std::int32_t(best) ? 1 : 0;
  return out;
}

}  // namespace hepaseg

#endif  // HEPASEG_COMPONENTS_HPP
