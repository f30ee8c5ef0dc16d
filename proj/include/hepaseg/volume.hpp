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

// Core volumetric types: scalar volumes, per-voxel class distributions and
// hard label maps, all sharing one grid description (dims + mm spacing).
// Linear order is x-fastest, then y, then z.

#ifndef HEPASEG_VOLUME_HPP
#define HEPASEG_VOLUME_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hepaseg/error.hpp"

namespace hepaseg {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;
using Index3 = std::array<std::size_t, 3>;

/// Label values used throughout the pipeline.
enum Label : std::uint8_t { kBackground = 0, kLiver = 1, kLesion = 2 };

struct Grid {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t slice_size() const { return dims[0] * dims[1]; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  Index3 coords(std::size_t i) const {
    return {i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])};
  }
  /// Physical position of a voxel center in mm (index times spacing).
  std::array<double, 3> position(std::size_t i) const {
    const auto c = coords(i);
    return {c[0] * spacing[0], c[1] * spacing[1], c[2] * spacing[2]};
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] == 0) throw UsageError("grid dimension must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw UsageError("voxel spacing must be positive and finite");
    }
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Scalar volume. `T` is std::int16_t for HU data, float for real-valued
/// intensities and std::uint8_t for label maps.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Grid grid, T fill = T{}) : grid_(grid) {
    grid_.validate();
    data_.assign(grid_.size(), fill);
  }
  Volume(Grid grid, std::vector<T> data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.size())
      throw UsageError("volume data length does not match dims");
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  const Spacing& spacing() const { return grid_.spacing; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t x, std::size_t y, std::size_t z) { return data_[grid_.index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[grid_.index(x, y, z)];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Grid grid_;
  std::vector<T> data_;
};

using CtVolume = Volume<std::int16_t>;
using RealVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

/// Per-voxel categorical distribution. The class axis is the slowest one:
/// probability of class c at voxel i lives at `c * N + i`.
class ProbVolume {
 public:
  ProbVolume() = default;
  ProbVolume(Grid grid, std::size_t classes) : grid_(grid), classes_(classes) {
    grid_.validate();
    if (classes_ < 2) throw UsageError("a probability volume needs at least 2 classes");
    probs_.assign(classes_ * grid_.size(), 0.0f);
  }
  ProbVolume(Grid grid, std::size_t classes, std::vector<float> probs)
      : grid_(grid), classes_(classes), probs_(std::move(probs)) {
    grid_.validate();
    if (classes_ < 2) throw UsageError("a probability volume needs at least 2 classes");
    if (probs_.size() != classes_ * grid_.size())
      throw UsageError("probability data length does not match dims * classes");
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  const Spacing& spacing() const { return grid_.spacing; }
  std::size_t classes() const { return classes_; }
  std::size_t voxels() const { return grid_.size(); }

  float& at(std::size_t c, std::size_t i) { return probs_[c * voxels() + i]; }
  float at(std::size_t c, std::size_t i) const { return probs_[c * voxels() + i]; }

  std::span<float> channel(std::size_t c) {
    return std::span<float>(probs_).subspan(c * voxels(), voxels());
  }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(probs_).subspan(c * voxels(), voxels());
  }
  std::span<float> data() { return probs_; }
  std::span<const float> data() const { return probs_; }

  /// Largest row-sum deviation from 1, or +inf if any entry is negative or
  /// non-finite.
  double normalization_error() const {
    double worst = 0.0;
    const std::size_t n = voxels();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes_; ++c) {
        const float p = probs_[c * n + i];
        if (!(p >= 0.0f) || !std::isfinite(p)) return INFINITY;
        s += p;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  /// Per-voxel argmax; ties go to the lowest class index.
  LabelVolume argmax() const {
    LabelVolume out(grid_);
    const std::size_t n = voxels();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes_; ++c)
        if (probs_[c * n + i] > probs_[best * n + i]) best = c;
      out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
  }

  friend bool operator==(const ProbVolume&, const ProbVolume&) = default;

 private:
  Grid grid_;
  std::size_t classes_ = 0;
  std::vector<float> probs_;
};

/// Inclusive voxel-index box.
struct BoundingBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  Dims extent() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  bool valid_for(const Dims& dims) const {
    for (int a = 0; a < 3; ++a)
      if (lo[a] > hi[a] || hi[a] >= dims[a]) return false;
    return true;
  }
  bool contains(const Index3& p) const {
    for (int a = 0; a < 3; ++a)
      if (p[a] < lo[a] || p[a] > hi[a]) return false;
    return true;
  }
  static BoundingBox full(const Dims& dims) {
    return {{0, 0, 0}, {dims[0] - 1, dims[1] - 1, dims[2] - 1}};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Binary mask of voxels equal to `label`.
inline LabelVolume binarize(const LabelVolume& labels, std::uint8_t label) {
  LabelVolume out(labels.grid());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == label ? 1 : 0;
  return out;
}

template <typename To, typename From>
Volume<To> convert(const Volume<From>& in) {
  Volume<To> out(in.grid());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
  return out;
}

inline void require_same_grid(const Grid& a, const Grid& b, const std::string& what) {
  if (a.dims != b.dims) throw DataError(what + ": volume dimensions differ");
  if (a.spacing != b.spacing) throw DataError(what + ": voxel spacings differ");
}

inline void require_same_dims(const Grid& a, const Grid& b, const std::string& what) {
  if (a.dims != b.dims) throw DataError(what + ": volume dimensions differ");
}

}  // namespace hepaseg

#endif  // HEPASEG_VOLUME_HPP
