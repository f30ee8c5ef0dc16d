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

// Synthetic abdomen phantoms: an ellipsoidal liver with spherical lesions in
// a uniform background, plus Gaussian noise. Positions are in mm from the
// center of voxel (0, 0, 0).

#ifndef HEPASEG_PHANTOM_HPP
#define HEPASEG_PHANTOM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

struct Lesion {
  std::array<double, 3> center{};
  double radius_mm = 5.0;
  double hu = 40.0;

  friend bool operator==(const Lesion&, const Lesion&) = default;
};

struct PhantomSpec {
  Grid grid{{64, 64, 64}, {1.0, 1.0, 1.0}};
  std::array<double, 3> liver_center{31.5, 31.5, 31.5};
  std::array<double, 3> liver_axes{22.0, 18.0, 20.0};
  double liver_hu = 100.0;
  double background_hu = -80.0;
  std::vector<Lesion> lesions;
  double noise_sigma = 10.0;
  std::uint64_t seed = 0;

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;

  bool in_liver(const std::array<double, 3>& p) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double t = (p[a] - liver_center[a]) / liver_axes[a];
      s += t * t;
    }
    return s <= 1.0;
  }

  void validate() const {
    grid.validate();
    for (double a : liver_axes)
      if (!(a > 0.0)) throw UsageError("liver semi-axes must be positive");
    if (!(noise_sigma >= 0.0)) throw UsageError("noise sigma must be nonnegative");
    // A sphere lies inside the ellipsoid iff its surface does; probe it with
    // a dense Fibonacci point set.
    constexpr int kProbes = 4000;
    for (const auto& l : lesions) {
      if (!(l.radius_mm > 0.0)) throw UsageError("lesion radius must be positive");
      for (int k = 0; k < kProbes; ++k) {
        const double z = 1.0 - 2.0 * (k + 0.5) / kProbes;
        const double r = std::sqrt(1.0 - z * z);
        const double phi = k * std::numbers::pi * (3.0 - std::sqrt(5.0));
        const std::array<double, 3> p{l.center[0] + l.radius_mm * r * std::cos(phi),
                                      l.center[1] + l.radius_mm * r * std::sin(phi),
                                      l.center[2] + l.radius_mm * z};
        if (!in_liver(p)) throw UsageError("lesion extends outside the liver");
      }
    }
  }
};

/// Liver centered in the volume with one hypo- and one hyper-intense lesion,
/// scaled to the physical extent.
inline PhantomSpec standard_phantom(const Grid& grid, std::uint64_t seed = 0,
                                    double noise_sigma = 10.0) {
  PhantomSpec s;
  s.grid = grid;
  s.seed = seed;
  s.noise_sigma = noise_sigma;
  std::array<double, 3> ext{};
  for (int a = 0; a < 3; ++a) {
    ext[a] = double(grid.dims[a] - 1) * grid.spacing[a];
    s.liver_center[a] = 0.5 * ext[a];
  }
  s.liver_axes = {0.36 * ext[0], 0.30 * ext[1], 0.34 * ext[2]};
  const double r = 0.32 * std::min({s.liver_axes[0], s.liver_axes[1], s.liver_axes[2]});
  const auto& c = s.liver_center;
  const auto& ax = s.liver_axes;
  s.lesions.push_back({{c[0] - 0.40 * ax[0], c[1] + 0.15 * ax[1], c[2]}, r, 40.0});
  s.lesions.push_back({{c[0] + 0.35 * ax[0], c[1] - 0.10 * ax[1], c[2] + 0.20 * ax[2]}, 0.8 * r, 160.0});
  return s;
}

/// Seeded variation of the standard phantom: jittered liver and lesion
/// geometry, lesion contrast drawn from the hypo/hyper regimes.
inline PhantomSpec random_phantom(const Grid& grid, std::uint64_t seed, double noise_sigma = 10.0) {
  PhantomSpec s = standard_phantom(grid, seed, noise_sigma);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int a = 0; a < 3; ++a) {
    s.liver_axes[a] *= 1.0 + 0.1 * u(rng);
    s.liver_center[a] += 0.05 * s.liver_axes[a] * u(rng);
  }
  s.lesions.clear();
  const double rmax = 0.3 * std::min({s.liver_axes[0], s.liver_axes[1], s.liver_axes[2]});
  const int count = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      Lesion l;
      l.radius_mm = rmax * (0.6 + 0.4 * (u(rng) + 1.0) / 2.0);
      for (int a = 0; a < 3; ++a) l.center[a] = s.liver_center[a] + 0.55 * s.liver_axes[a] * u(rng);
      l.hu = u(rng) < 0.0 ? 40.0 : 160.0;
      PhantomSpec probe = s;
      probe.lesions = {l};
      try {
        probe.validate();
      } catch (const UsageError&) {
        continue;
      }
      s.lesions.push_back(l);
      break;
    }
  }
  return s;
}

struct Phantom {
  CtVolume ct;
  LabelVolume gt;
};

inline Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Grid& g = spec.grid;
  Phantom out{CtVolume(g), LabelVolume(g)};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto p = g.position(i);
    double hu = spec.background_hu;
    std::uint8_t label = kBackground;
    if (spec.in_liver(p)) {
      hu = spec.liver_hu;
      label = kLiver;
      for (const auto& l : spec.lesions) {
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) d2 += (p[a] - l.center[a]) * (p[a] - l.center[a]);
        if (d2 <= l.radius_mm * l.radius_mm) {
          hu = l.hu;
          label = kLesion;
        }
      }
    }
    if (spec.noise_sigma > 0.0) hu += spec.noise_sigma * noise(rng);
    out.ct[i] = static_cast<std::int16_t>(std::clamp(std::lround(hu), -32768L, 32767L));
    out.gt[i] = label;
  }
  return out;
}

struct OracleOptions {
  double blur_sigma_mm = 0.0;
  double error_rate = 0.0;
  /// Mixes a uniform distribution into the blurred one-hot labels:
  /// p <- (1 - smoothing) p + smoothing / classes.
  double smoothing = 0.0;
  std::size_t classes = 3;
  std::uint64_t seed = 0;
};

/// Synthetic unary: one-hot ground truth, spatially blurred, smoothed, and
/// with the top two classes swapped on a seeded random subset of voxels.
inline ProbVolume oracle_unary(const LabelVolume& gt, const OracleOptions& opt) {
  if (!(opt.error_rate >= 0.0 && opt.error_rate < 0.5)) throw UsageError("error rate must lie in [0, 0.5)");
  if (!(opt.blur_sigma_mm >= 0.0)) throw UsageError("blur sigma must be nonnegative");
  if (!(opt.smoothing >= 0.0 && opt.smoothing <= 1.0)) throw UsageError("smoothing must lie in [0, 1]");
  if (opt.classes < 2) throw UsageError("need at least two classes");
  const Grid& g = gt.grid();
  const std::size_t n = g.size(), c = opt.classes;
  std::vector<double> p(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] >= c) throw DataError("label exceeds oracle class count");
    p[gt[i] * n + i] = 1.0;
  }
  if (opt.blur_sigma_mm > 0.0) {
    // Normalized, edge-renormalized Gaussian per axis keeps rows summing to 1.
    const std::size_t len[3] = {g.dims[0], g.dims[1], g.dims[2]};
    const std::size_t stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
    std::vector<double> tmp(n);
    for (int axis = 0; axis < 3; ++axis) {
      const long radius = long(std::ceil(4.0 * opt.blur_sigma_mm / g.spacing[axis]));
      std::vector<double> taps(std::size_t(radius) + 1);
      for (long k = 0; k <= radius; ++k) {
        const double t = k * g.spacing[axis] / opt.blur_sigma_mm;
        taps[std::size_t(k)] = std::exp(-0.5 * t * t);
      }
      const std::size_t lines = n / len[axis];
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* v = &p[ch * n];
        for (std::size_t l = 0; l < lines; ++l) {
          std::size_t base;
          if (axis == 0) base = l * g.dims[0];
          else if (axis == 1) base = (l / g.dims[0]) * g.dims[0] * g.dims[1] + (l % g.dims[0]);
          else base = l;
          const long m = long(len[axis]);
          for (long q = 0; q < m; ++q) {
            double s = 0.0, w = 0.0;
            for (long k = std::max(0L, q - radius); k <= std::min(m - 1, q + radius); ++k) {
              const double t = taps[std::size_t(std::labs(k - q))];
              s += t * v[base + std::size_t(k) * stride[axis]];
              w += t;
            }
            tmp[base + std::size_t(q) * stride[axis]] = s / w;
          }
        }
        std::copy(tmp.begin(), tmp.end(), v);
      }
    }
  }
  for (auto& x : p) x = (1.0 - opt.smoothing) * x + opt.smoothing / double(c);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> row(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(u(rng) < opt.error_rate)) continue;
    // Top two by probability; ties to the lower class index.
    std::size_t first = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (p[k * n + i] > p[first * n + i]) first = k;
    std::size_t second = first == 0 ? 1 : 0;
    for (std::size_t k = 0; k < c; ++k)
      if (k != first && p[k * n + i] > p[second * n + i]) second = k;
    std::swap(p[first * n + i], p[second * n + i]);
  }
  std::vector<float> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += p[k * n + i];
    for (std::size_t k = 0; k < c; ++k) out[k * n + i] = static_cast<float>(p[k * n + i] / s);
  }
  return ProbVolume(g, c, std::move(out));
}

namespace detail {

template <std::size_t N>
std::array<double, N> parse_reals(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::array<double, N> out{};
  std::string tok;
  for (std::size_t k = 0; k < N; ++k) {
    if (!(in >> tok)) throw DataError("expected " + std::to_string(N) + " values for " + key);
    out[k] = parse_real(key, tok);
  }
  if (in >> tok) throw DataError("too many values for " + key);
  return out;
}

inline std::string join_reals(std::initializer_list<double> v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + format_real(x);
  return s;
}

}  // namespace detail

/// Keys: dims, spacing, liver_center, liver_axes, liver_hu, background_hu,
/// noise_sigma, seed, and any number of `lesion = cx cy cz radius hu`.
/// Missing keys fall back to the standard phantom for the given dims.
inline PhantomSpec phantom_spec_from(const KeyValues& kv) {
  Grid grid;
  if (auto d = find_value(kv, "dims")) {
    const auto a = detail::parse_reals<3>("dims", *d);
    for (int k = 0; k < 3; ++k) {
      if (!(a[k] >= 1.0) || a[k] != std::floor(a[k])) throw DataError("dims must be positive integers");
      grid.dims[k] = std::size_t(a[k]);
    }
  } else {
    grid.dims = {64, 64, 64};
  }
  if (auto s = find_value(kv, "spacing")) {
    const auto a = detail::parse_reals<3>("spacing", *s);
    grid.spacing = {a[0], a[1], a[2]};
  }
  try {
    grid.validate();
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  std::uint64_t seed = 0;
  if (auto s = find_value(kv, "seed")) seed = std::uint64_t(parse_integer("seed", *s));
  PhantomSpec spec = standard_phantom(grid, seed);
  bool lesions_given = false;
  for (const auto& [k, v] : kv) {
    if (k == "dims" || k == "spacing" || k == "seed") continue;
    if (k == "liver_center") spec.liver_center = detail::parse_reals<3>(k, v);
    else if (k == "liver_axes") spec.liver_axes = detail::parse_reals<3>(k, v);
    else if (k == "liver_hu") spec.liver_hu = parse_real(k, v);
    else if (k == "background_hu") spec.background_hu = parse_real(k, v);
    else if (k == "noise_sigma") spec.noise_sigma = parse_real(k, v);
    else if (k == "lesion") {
      if (!lesions_given) spec.lesions.clear();
      lesions_given = true;
      const auto a = detail::parse_reals<5>(k, v);
      spec.lesions.push_back({{a[0], a[1], a[2]}, a[3], a[4]});
    } else if (k == "lesions" && v == "none") {
      spec.lesions.clear();
      lesions_given = true;
    } else {
      throw DataError("unknown phantom key '" + k + "'");
    }
  }
  try {
    spec.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("invalid phantom spec: ") + e.what());
  }
  return spec;
}

inline KeyValues to_key_values(const PhantomSpec& s) {
  KeyValues kv;
  kv.emplace_back("dims", std::to_string(s.grid.dims[0]) + " " + std::to_string(s.grid.dims[1]) +
                              " " + std::to_string(s.grid.dims[2]));
  kv.emplace_back("spacing", detail::join_reals({s.grid.spacing[0], s.grid.spacing[1], s.grid.spacing[2]}));
  kv.emplace_back("liver_center",
                  detail::join_reals({s.liver_center[0], s.liver_center[1], s.liver_center[2]}));
  kv.emplace_back("liver_axes", detail::join_reals({s.liver_axes[0], s.liver_axes[1], s.liver_axes[2]}));
  kv.emplace_back("liver_hu", format_real(s.liver_hu));
  kv.emplace_back("background_hu", format_real(s.background_hu));
  kv.emplace_back("noise_sigma", format_real(s.noise_sigma));
  kv.emplace_back("seed", std::to_string(s.seed));
  if (s.lesions.empty()) kv.emplace_back("lesions", "none");
  for (const auto& l : s.lesions)
    kv.emplace_back("lesion",
                    detail::join_reals({l.center[0], l.center[1], l.center[2], l.radius_mm, l.hu}));
  return kv;
}

inline PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
  return phantom_spec_from(read_key_values(path));
}

}  // namespace hepaseg

#endif  // HEPASEG_PHANTOM_HPP
