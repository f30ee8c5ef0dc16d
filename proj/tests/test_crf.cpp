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
#include <random>

#include "hepaseg/crf.hpp"
#include "test_util.hpp"

namespace hepaseg {
namespace {

CrfParams pairwise(double w_pos, double w_bil, double s_pos = 1.5, double s_bil = 2.0, double s_int = 30.0) {
  CrfParams p;
  p.w_pos = w_pos;
  p.w_bil = w_bil;
  p.sigma_pos_mm = s_pos;
  p.sigma_bil_mm = s_bil;
  p.sigma_int = s_int;
  return p;
}

RealVolume random_intensity(const Grid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 100.0f);
  RealVolume v(g);
  for (auto& x : v.storage()) x = u(rng);
  return v;
}

TEST(CrfParams, KeyValueRoundTrip) {
  const auto dir = testing::scratch_dir("crf_params");
  const CrfParams p = pairwise(0.3, 7.25, 1.1, 4.5, 12.0);
  save_crf_params(p, dir / "p.txt");
  EXPECT_EQ(load_crf_params(dir / "p.txt"), p);
  EXPECT_THROW(crf_params_from({{"w_pos", "1"}, {"bogus", "2"}}), DataError);
  EXPECT_THROW(crf_params_from({{"sigma_pos_mm", "0"}}), DataError);
}

TEST(Energy, TwoVoxelHandExample) {
  const Grid g{{2, 1, 1}, {1, 1, 1}};
  const ProbVolume u(g, 2, {0.1f, 0.6f, 0.9f, 0.4f});
  const RealVolume I(g, 0.0f);
  const CrfParams p = pairwise(1.0, 0.0, 1.0);
  const double e10 = energy(LabelVolume(g, std::vector<std::uint8_t>{1, 0}), u, I, p);
  const double e11 = energy(LabelVolume(g, std::vector<std::uint8_t>{1, 1}), u, I, p);
  EXPECT_NEAR(e10, -std::log(0.9) - std::log(0.6) + std::exp(-0.5), 1e-6);
  EXPECT_NEAR(e10, 1.2227, 1e-4);
  EXPECT_NEAR(e11, 1.0217, 1e-4);
  const auto map = brute_force_map(u, I, p);
  EXPECT_EQ(map[0], 1);
  EXPECT_EQ(map[1], 1);
}

TEST(Energy, ZeroPairwiseAndLinearity) {
  const Grid g{{3, 2, 2}, {1, 1, 2}};
  const ProbVolume u = testing::random_probs(g, 3, 4);
  const RealVolume I = random_intensity(g, 4);
  LabelVolume x(g);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::uint8_t(i % 3);
  double unary = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) unary += -std::log(double(u.at(x[i], i)));
  EXPECT_NEAR(energy(x, u, I, pairwise(0, 0)), unary, 1e-12);
  const double one = energy(x, u, I, pairwise(1, 0)) - unary;
  EXPECT_NEAR(energy(x, u, I, pairwise(2, 0)) - unary, 2 * one, 1e-9);
  const double both = energy(x, u, I, pairwise(1, 1)) - unary;
  EXPECT_NEAR(energy(x, u, I, pairwise(3, 3)) - unary, 3 * both, 1e-9);
}

TEST(Energy, DependsOnMillimetresOnly) {
  // Same physical points: two voxels 4 mm apart along z either as neighbours
  // with 4 mm spacing or two slices apart with 2 mm spacing.
  const Grid a{{1, 1, 2}, {1, 1, 4}}, b{{1, 1, 3}, {1, 1, 2}};
  const CrfParams p = pairwise(1.0, 0.0, 3.0);
  const ProbVolume ua(a, 2, {0.5f, 0.5f, 0.5f, 0.5f});
  const ProbVolume ub(b, 2, {0.5f, 1.0f, 0.5f, 0.5f, 0.0f, 0.5f});
  const double ea = energy(LabelVolume(a, std::vector<std::uint8_t>{0, 1}), ua, RealVolume(a), p);
  // Middle voxel of b is pinned to label 0 and shares its label with voxel 0.
  const double eb = energy(LabelVolume(b, std::vector<std::uint8_t>{0, 0, 1}), ub, RealVolume(b), p);
  const double pin = std::exp(-4.0 / 18.0);  // middle (z = 2 mm) vs last (z = 4 mm)
  EXPECT_NEAR(ea - 2 * std::log(2.0), std::exp(-16.0 / 18.0), 1e-12);
  EXPECT_NEAR(eb - 2 * std::log(2.0), std::exp(-16.0 / 18.0) + pin, 1e-12);
}

TEST(Energy, Guards) {
  const Grid big{{17, 16, 16}, {1, 1, 1}};
  EXPECT_THROW(energy(LabelVolume(big), ProbVolume(big, 2), RealVolume(big), CrfParams{}), UsageError);
  const Grid g{{2, 1, 1}, {1, 1, 1}};
  EXPECT_THROW(energy(LabelVolume(g), ProbVolume(g, 2), RealVolume(Grid{{1, 2, 1}, {1, 1, 1}}), CrfParams{}),
               DataError);
}

TEST(MeanField, ZeroPairwiseFixedPoint) {
  const Grid g{{4, 3, 2}, {1, 1, 1}};
  const ProbVolume u = testing::random_probs(g, 3, 2);
  const RealVolume I = random_intensity(g, 2);
  const ProbVolume q = meanfield_step(testing::random_probs(g, 3, 9), u, I, pairwise(0, 0));
  for (std::size_t k = 0; k < q.data().size(); ++k) EXPECT_NEAR(q.data()[k], u.data()[k], 1e-6);
  EXPECT_EQ(infer(u, I, pairwise(0, 0)).map, u.argmax());
}

TEST(MeanField, TwoVoxelDirectUpdate) {
  const Grid g{{2, 1, 1}, {1, 1, 1}};
  const ProbVolume u(g, 2, {0.3f, 0.8f, 0.7f, 0.2f});
  RealVolume I(g, std::vector<float>{10.0f, 25.0f});
  const ProbVolume q(g, 2, {0.4f, 0.9f, 0.6f, 0.1f});
  const CrfParams p = pairwise(1.5, 2.0, 1.0, 2.0, 20.0);
  const double k = p.w_pos * std::exp(-0.5) + p.w_bil * std::exp(-1.0 / 8.0 - 225.0 / 800.0);
  const ProbVolume out = meanfield_step(q, u, I, p);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = 1 - i;
    // Message into label l is the kernel-weighted Q of the other labels.
    const double a0 = std::log(double(u.at(0, i))) - k * q.at(1, j);
    const double a1 = std::log(double(u.at(1, i))) - k * q.at(0, j);
    const double q1 = 1.0 / (1.0 + std::exp(a0 - a1));
    EXPECT_NEAR(out.at(1, i), q1, 1e-6);
    EXPECT_NEAR(out.at(0, i), 1.0 - q1, 1e-6);
  }
}

TEST(MeanField, MirrorSymmetry) {
  const Grid g{{6, 5, 4}, {1, 1, 2}};
  ProbVolume u = testing::random_probs(g, 3, 7);
  RealVolume I = random_intensity(g, 7);
  // Mirror along x.
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 3; x < 6; ++x) {
        const std::size_t i = g.index(x, y, z), m = g.index(5 - x, y, z);
        I[i] = I[m];
        for (std::size_t c = 0; c < 3; ++c) u.channel(c)[i] = u.at(c, m);
      }
  // Exact kernels only; the lattice is not mirror-symmetric.
  CrfOptions opt;
  opt.filter.stencil_budget = 1u << 20;
  const auto r = infer(u, I, pairwise(2, 3), opt);
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          EXPECT_NEAR(r.q.at(c, g.index(x, y, z)), r.q.at(c, g.index(5 - x, y, z)), 1e-5);
}

TEST(MeanField, StaysNormalized) {
  const Grid g{{10, 9, 8}, {0.8, 0.8, 2.5}};
  const ProbVolume u = testing::random_probs(g, 3, 1);
  const RealVolume I = random_intensity(g, 1);
  const DenseCrf crf(u, I, pairwise(3, 5, 2, 3, 20));
  auto q = crf.initial();
  for (int it = 0; it < 5; ++it) {
    crf.step(q);
    EXPECT_LE(crf.to_prob(q).normalization_error(), 1e-5);
  }
}

TEST(Infer, MapNoWorseThanArgmaxOnTinyInstances) {
  int better_or_equal = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Grid g{{2, 2, 2}, {1, 1, 2}};
    const ProbVolume u = testing::random_probs(g, 3, s);
    const RealVolume I = random_intensity(g, s + 100);
    const CrfParams p = pairwise(1.0, 1.0);
    const auto r = infer(u, I, p);
    const double e_map = energy(r.map, u, I, p), e_arg = energy(u.argmax(), u, I, p);
    const double e_opt = energy(brute_force_map(u, I, p), u, I, p);
    EXPECT_LE(e_map, e_arg + 1e-12) << "seed " << s;
    EXPECT_LE(e_opt, e_map + 1e-12);
    better_or_equal += e_map <= e_arg + 1e-12;
  }
  EXPECT_EQ(better_or_equal, 50);
}

TEST(Infer, EarlyStopAndThreads) {
  const Grid g{{16, 14, 10}, {0.8, 0.8, 2.5}};
  const ProbVolume u = testing::random_probs(g, 3, 3);
  const RealVolume I = random_intensity(g, 3);
  CrfParams p = pairwise(1, 3, 1, 3, 15);
  p.iterations = 50;
  CrfOptions o;
  o.early_stop = true;
  o.tolerance = 1e-3;
  const auto r = infer(u, I, p, o);
  EXPECT_LT(r.iterations_run, 50);
  EXPECT_LT(r.last_change, 1e-3);
  p.iterations = 5;
  CrfOptions t1, t4;
  t4.threads = 4;
  EXPECT_EQ(infer(u, I, p, t1).q, infer(u, I, p, t4).q);
}

TEST(BruteForce, ZeroPairwiseAndRandomProbe) {
  const Grid g{{2, 2, 2}, {1, 1, 1}};
  const ProbVolume u = testing::random_probs(g, 3, 21);
  const RealVolume I = random_intensity(g, 21);
  EXPECT_EQ(brute_force_map(u, I, pairwise(0, 0)), u.argmax());
  const CrfParams p = pairwise(2.0, 1.0);
  const double best = energy(brute_force_map(u, I, p), u, I, p);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    LabelVolume x(g);
    for (auto& v : x.storage()) v = std::uint8_t(rng() % 3);
    EXPECT_LE(best, energy(x, u, I, p));
  }
  const Grid big{{4, 4, 2}, {1, 1, 1}};
  EXPECT_THROW(brute_force_map(ProbVolume(big, 3), RealVolume(big), p), UsageError);
}

}  // namespace
}  // namespace hepaseg
