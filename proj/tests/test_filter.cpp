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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hepaseg/gaussian_filter.hpp"

namespace hepaseg {
namespace {

double rel_l2(const std::vector<float>& a, const std::vector<float>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    den += double(b[i]) * b[i];
  }
  return std::sqrt(num / den);
}

std::vector<float> uniform_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<float> blocky_intensity(const Grid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 10.0f);
  std::vector<float> I(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto c = g.coords(i);
    I[i] = (c[0] < g.dims[0] / 2 ? 40.0f : 160.0f) + (c[2] > g.dims[2] / 2 ? -60.0f : 0.0f) + noise(rng);
  }
  return I;
}

TEST(DirectFilter, TinyCases) {
  const auto one = FeatureSet::points({0.0f, 0.0f}, 2);
  EXPECT_EQ(gaussian_filter_direct(std::vector<float>{3.0f}, 1, one), std::vector<float>{0.0f});
  const auto two = FeatureSet::points({0.0f, 0.0f, 1.0f, 0.5f}, 2);
  const auto out = gaussian_filter_direct(std::vector<float>{1.0f, 0.0f}, 1, two);
  EXPECT_FLOAT_EQ(out[0], 0.0f);
  EXPECT_FLOAT_EQ(out[1], float(std::exp(-0.5 * 1.25)));
}

TEST(DirectFilter, ConstantInputGivesKernelMass) {
  const Grid g{{5, 4, 3}, {1.0, 1.0, 2.0}};
  const auto fs = FeatureSet::spatial(g, 1.5);
  const auto out = gaussian_filter_direct(std::vector<float>(g.size(), 2.0f), 1, fs);
  for (std::size_t i = 0; i < g.size(); ++i) {
    double mass = 0.0;
    const auto pi = g.position(i);
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (j == i) continue;
      const auto pj = g.position(j);
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) d2 += (pi[a] - pj[a]) * (pi[a] - pj[a]);
      mass += std::exp(-d2 / (2 * 1.5 * 1.5));
    }
    EXPECT_NEAR(out[i], 2.0 * mass, 1e-5 * mass);
  }
}

TEST(DirectFilter, SizeGuard) {
  const auto fs = FeatureSet::spatial(Grid{{64, 64, 9}, {1, 1, 1}}, 1.0);
  EXPECT_THROW(gaussian_filter_direct(std::vector<float>(fs.size()), 1, fs), UsageError);
}

TEST(FastFilter, DegenerateSigma) {
  const Grid g{{4, 4, 4}, {1, 1, 1}};
  EXPECT_THROW(FeatureSet::spatial(g, 0.0), UsageError);
  EXPECT_THROW(FeatureSet::bilateral(g, std::vector<float>(64), 1.0, -1.0), UsageError);
}

struct Case {
  Spacing spacing;
  double sigma;
  double sigma_int;  // 0 for spatial
};

class FastVsDirect : public ::testing::TestWithParam<Case> {};

TEST_P(FastVsDirect, WithinFivePercent) {
  const Case c = GetParam();
  const Grid g{{12, 12, 12}, c.spacing};
  const auto I = blocky_intensity(g, 3);
  const auto fs = c.sigma_int > 0 ? FeatureSet::bilateral(g, I, c.sigma, c.sigma_int)
                                  : FeatureSet::spatial(g, c.sigma);
  const auto v = uniform_values(2 * g.size(), 17);
  const auto ref = gaussian_filter_direct(v, 2, fs);
  for (auto m : {FilterMethod::kAutomatic, FilterMethod::kSeparable, FilterMethod::kStencil,
                 FilterMethod::kLattice}) {
    if (m == FilterMethod::kSeparable && c.sigma_int > 0) continue;
    if (m == FilterMethod::kStencil && c.sigma < 1.0 && c.spacing[2] > 2.0) continue;
    FilterOptions o;
    o.method = m;
    o.stencil_budget = 1u << 20;
    const GaussianFilter f(fs, o);
    EXPECT_LE(rel_l2(f.apply(v, 2), ref), 0.05) << to_string(f.method());
  }
}

INSTANTIATE_TEST_SUITE_P(Kernels, FastVsDirect,
                         ::testing::Values(Case{{1, 1, 1}, 2.0, 0.0}, Case{{1, 1, 4}, 3.0, 0.0},
                                           Case{{0.8, 0.8, 2.5}, 5.0, 0.0},
                                           Case{{1, 1, 1}, 3.0, 20.0}, Case{{1, 1, 4}, 2.0, 20.0},
                                           Case{{1, 1, 4}, 5.0, 60.0},
                                           Case{{0.8, 0.8, 2.5}, 3.0, 5.0}));

TEST(FastFilter, SeparableIsExact) {
  const Grid g{{10, 9, 8}, {0.7, 1.0, 2.5}};
  const auto fs = FeatureSet::spatial(g, 2.0);
  const auto v = uniform_values(g.size(), 5);
  const GaussianFilter f(fs, FilterOptions{FilterMethod::kSeparable});
  EXPECT_LE(rel_l2(f.apply(v, 1), gaussian_filter_direct(v, 1, fs)), 1e-6);
}

TEST(FastFilter, ConstantFieldInteriorIsFlat) {
  const Grid g{{40, 40, 40}, {1, 1, 1}};
  const auto I = std::vector<float>(g.size(), 100.0f);
  // Interior mass of a sigma-2 voxel grid, excluding self: (sum_k e^{-k^2/8})^3 - 1.
  double s = 0.0;
  for (int k = -20; k <= 20; ++k) s += std::exp(-k * k / 8.0);
  const double mass = s * s * s - 1.0;
  const auto spatial = FeatureSet::spatial(g, 2.0);
  const auto bilateral = FeatureSet::bilateral(g, I, 2.0, 20.0);
  FilterOptions lattice;
  lattice.method = FilterMethod::kLattice;
  for (auto [fs, o] : {std::pair{&spatial, FilterOptions{}}, std::pair{&bilateral, FilterOptions{}},
                       std::pair{&spatial, lattice}}) {
    const GaussianFilter f(*fs, o);
    const auto out = f.apply(std::vector<float>(g.size(), 1.0f), 1);
    double lo = 1e300, hi = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto c = g.coords(i);
      bool inner = true;
      for (int a = 0; a < 3; ++a) inner = inner && c[a] >= 10 && c[a] < 30;
      if (!inner) continue;
      lo = std::min(lo, double(out[i]));
      hi = std::max(hi, double(out[i]));
    }
    EXPECT_LE((hi - lo) / mass, 0.01) << to_string(f.method());
    EXPECT_NEAR(0.5 * (hi + lo), mass, 0.01 * mass) << to_string(f.method());
  }
}

TEST(FastFilter, PermutationEquivariance) {
  const Grid g{{8, 8, 8}, {1, 1, 2}};
  const auto I = blocky_intensity(g, 9);
  const auto fs = FeatureSet::bilateral(g, I, 2.0, 20.0);
  const std::size_t n = g.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  std::vector<float> feats(n * 4), permuted(n * 4);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 4; ++k) feats[i * 4 + k] = fs.point(i)[k];
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 4; ++k) permuted[i * 4 + k] = feats[perm[i] * 4 + k];
  const auto v = uniform_values(n, 2);
  std::vector<float> pv(n);
  for (std::size_t i = 0; i < n; ++i) pv[i] = v[perm[i]];
  FilterOptions o;
  o.method = FilterMethod::kLattice;
  const auto a = gaussian_filter_fast(v, 1, FeatureSet::points(feats, 4), o);
  const auto b = gaussian_filter_fast(pv, 1, FeatureSet::points(permuted, 4), o);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(b[i], a[perm[i]], 1e-4 * (1.0 + std::abs(a[perm[i]])));
}

TEST(FastFilter, ThreadCountDoesNotChangeBits) {
  const Grid g{{16, 16, 12}, {0.8, 0.8, 2.5}};
  const auto I = blocky_intensity(g, 1);
  const auto v = uniform_values(3 * g.size(), 8);
  for (auto m : {FilterMethod::kSeparable, FilterMethod::kStencil, FilterMethod::kLattice}) {
    const auto fs = m == FilterMethod::kSeparable ? FeatureSet::spatial(g, 2.0)
                                                   : FeatureSet::bilateral(g, I, 2.0, 20.0);
    FilterOptions o;
    o.method = m;
    o.threads = 1;
    const auto one = GaussianFilter(fs, o).apply(v, 3);
    o.threads = 4;
    EXPECT_EQ(GaussianFilter(fs, o).apply(v, 3), one) << to_string(m);
  }
}

TEST(FastFilter, AutomaticChoice) {
  const Grid g{{20, 20, 20}, {1, 1, 1}};
  std::vector<float> I(g.size());
  for (std::size_t i = 0; i < I.size(); ++i) I[i] = float(i % 7);
  EXPECT_EQ(GaussianFilter(FeatureSet::spatial(g, 3.0)).method(), FilterMethod::kSeparable);
  const std::vector<float> flat(g.size(), 5.0f);
  EXPECT_EQ(GaussianFilter(FeatureSet::bilateral(g, flat, 5.0, 10.0)).method(), FilterMethod::kSeparable);
  EXPECT_EQ(GaussianFilter(FeatureSet::bilateral(g, I, 0.8, 10.0)).method(), FilterMethod::kStencil);
  EXPECT_EQ(GaussianFilter(FeatureSet::bilateral(g, I, 5.0, 10.0)).method(), FilterMethod::kLattice);
  const auto pts = FeatureSet::points(std::vector<float>(30, 0.0f), 3);
  EXPECT_EQ(GaussianFilter(pts).method(), FilterMethod::kLattice);
  EXPECT_THROW(GaussianFilter(pts, FilterOptions{FilterMethod::kSeparable}), UsageError);
}

}  // namespace
}  // namespace hepaseg
