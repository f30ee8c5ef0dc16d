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

// Fully connected 3-D CRF with Potts compatibility:
//
//   E(x) = sum_i -log P_i(x_i)
//        + sum_{i<j, x_i != x_j} [ w_pos exp(-|p_i - p_j|^2 / 2 s_pos^2)
//                                + w_bil exp(-|p_i - p_j|^2 / 2 s_bil^2
//                                            - (I_i - I_j)^2 / 2 s_int^2) ]
//
// with p the voxel center in mm and I the (windowed) intensity. Inference is
// parallel mean field starting from the unary distribution.

#ifndef HEPASEG_CRF_HPP
#define HEPASEG_CRF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/gaussian_filter.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/parallel.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

/// Defaults were picked by search on oracle-unary phantoms (5% label swaps),
/// not taken from any published setting.
struct CrfParams {
  double w_pos = 1.0;
  double w_bil = 3.0;
  double sigma_pos_mm = 1.0;
  double sigma_bil_mm = 3.0;
  double sigma_int = 15.0;
  int iterations = 10;

  void validate() const {
    if (!(w_pos >= 0.0) || !(w_bil >= 0.0) || !std::isfinite(w_pos) || !std::isfinite(w_bil))
      throw UsageError("CRF weights must be finite and nonnegative");
    for (double s : {sigma_pos_mm, sigma_bil_mm, sigma_int})
      if (!(s > 0.0) || !std::isfinite(s)) throw UsageError("CRF kernel widths must be positive");
    if (iterations < 1) throw UsageError("CRF iteration count must be positive");
  }

  friend bool operator==(const CrfParams&, const CrfParams&) = default;
};

inline KeyValues to_key_values(const CrfParams& p) {
  return {{"w_pos", format_real(p.w_pos)},
          {"w_bil", format_real(p.w_bil)},
          {"sigma_pos_mm", format_real(p.sigma_pos_mm)},
          {"sigma_bil_mm", format_real(p.sigma_bil_mm)},
          {"sigma_int", format_real(p.sigma_int)},
          {"iterations", std::to_string(p.iterations)}};
}

/// Unknown keys are rejected; missing keys keep their defaults.
inline CrfParams crf_params_from(const KeyValues& kv) {
  CrfParams p;
  for (const auto& [k, v] : kv) {
    if (k == "w_pos") p.w_pos = parse_real(k, v);
    else if (k == "w_bil") p.w_bil = parse_real(k, v);
    else if (k == "sigma_pos_mm") p.sigma_pos_mm = parse_real(k, v);
    else if (k == "sigma_bil_mm") p.sigma_bil_mm = parse_real(k, v);
    else if (k == "sigma_int") p.sigma_int = parse_real(k, v);
    else if (k == "iterations") p.iterations = int(parse_integer(k, v));
    else throw DataError("unknown CRF parameter '" + k + "'");
  }
  try {
    p.validate();
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  return p;
}

inline CrfParams load_crf_params(const std::filesystem::path& path) {
  return crf_params_from(read_key_values(path));
}

inline void save_crf_params(const CrfParams& p, const std::filesystem::path& path) {
  write_key_values_atomic(path, to_key_values(p));
}

inline constexpr std::size_t kEnergyLimit = 4096;
inline constexpr double kUnaryFloor = 1e-7;

inline double unary_cost(float p) { return -std::log(std::max(double(p), kUnaryFloor)); }

namespace detail {

inline void check_crf_inputs(const ProbVolume& unary, const RealVolume& intensity) {
  require_same_grid(unary.grid(), intensity.grid(), "CRF");
}

/// Combined pairwise weight between voxels i and j (labels assumed to differ).
inline double pair_weight(const Grid& g, const RealVolume& intensity, const CrfParams& p,
                          std::size_t i, std::size_t j) {
  const auto a = g.position(i), b = g.position(j);
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  const double di = double(intensity[i]) - double(intensity[j]);
  double w = 0.0;
  if (p.w_pos != 0.0) w += p.w_pos * std::exp(-d2 / (2.0 * p.sigma_pos_mm * p.sigma_pos_mm));
  if (p.w_bil != 0.0)
    w += p.w_bil * std::exp(-d2 / (2.0 * p.sigma_bil_mm * p.sigma_bil_mm) -
                            di * di / (2.0 * p.sigma_int * p.sigma_int));
  return w;
}

}  // namespace detail

/// Exact energy by direct pairwise summation (N <= 4096).
inline double energy(const LabelVolume& x, const ProbVolume& unary, const RealVolume& intensity,
                     const CrfParams& params) {
  params.validate();
  detail::check_crf_inputs(unary, intensity);
  require_same_grid(x.grid(), unary.grid(), "CRF energy");
  const std::size_t n = x.size();
  if (n > kEnergyLimit) throw UsageError("exact energy limited to 4096 voxels");
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] >= unary.classes()) throw DataError("label exceeds class count");
    e += unary_cost(unary.at(x[i], i));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (x[i] != x[j]) e += detail::pair_weight(x.grid(), intensity, params, i, j);
  return e;
}

struct CrfOptions {
  int threads = 1;
  bool early_stop = false;
  double tolerance = 1e-4;  // max |dQ| for early stop
  FilterOptions filter{};
};

struct CrfResult {
  ProbVolume q;
  LabelVolume map;
  int iterations_run = 0;
  double last_change = 0.0;  // max |dQ| of the final step
};

/// Mean-field engine bound to one unary/intensity pair. Construction builds
/// the kernel filters once; each step() is a synchronous update of all
/// voxels.
class DenseCrf {
 public:
  DenseCrf(const ProbVolume& unary, const RealVolume& intensity, const CrfParams& params,
           const CrfOptions& options = {})
      : unary_(unary), params_(params), options_(options) {
    params_.validate();
    detail::check_crf_inputs(unary, intensity);
    options_.filter.threads = options_.threads;
    const Grid& g = unary.grid();
    if (params_.w_pos > 0.0) {
      pos_features_ = FeatureSet::spatial(g, params_.sigma_pos_mm);
      pos_filter_.emplace(*pos_features_, options_.filter);
    }
    if (params_.w_bil > 0.0) {
      bil_features_ =
          FeatureSet::bilateral(g, intensity.data(), params_.sigma_bil_mm, params_.sigma_int);
      bil_filter_.emplace(*bil_features_, options_.filter);
    }
    const std::size_t n = g.size(), c = unary.classes();
    phi_.resize(n * c);
    for (std::size_t k = 0; k < n * c; ++k) phi_[k] = unary_cost(unary.data()[k]);
  }

  DenseCrf(const DenseCrf&) = delete;
  DenseCrf& operator=(const DenseCrf&) = delete;

  std::size_t voxels() const { return unary_.voxels(); }
  std::size_t classes() const { return unary_.classes(); }
  std::optional<FilterMethod> spatial_method() const {
    return pos_filter_ ? std::optional(pos_filter_->method()) : std::nullopt;
  }
  std::optional<FilterMethod> bilateral_method() const {
    return bil_filter_ ? std::optional(bil_filter_->method()) : std::nullopt;
  }

  /// Initial distribution: the unary itself, renormalized after flooring.
  std::vector<double> initial() const {
    std::vector<double> q(phi_.size());
    update(q, std::vector<double>(phi_.size(), 0.0));
    return q;
  }

  /// One parallel update; returns max |Q' - Q|.
  double step(std::vector<double>& q) const {
    const std::size_t n = voxels(), c = classes();
    if (q.size() != n * c) throw UsageError("distribution size mismatch");
    std::vector<double> message(n * c, 0.0);
    if (pos_filter_ || bil_filter_) {
      std::vector<float> qf(q.begin(), q.end()), tmp(n * c);
      auto accumulate = [&](const GaussianFilter& f, double w) {
        f.apply(qf, c, tmp);
        for (std::size_t k = 0; k < n * c; ++k) message[k] += w * double(tmp[k]);
      };
      if (pos_filter_) accumulate(*pos_filter_, params_.w_pos);
      if (bil_filter_) accumulate(*bil_filter_, params_.w_bil);
    }
    std::vector<double> next(n * c);
    update(next, message);
    double change = 0.0;
    for (std::size_t k = 0; k < n * c; ++k) change = std::max(change, std::abs(next[k] - q[k]));
    q.swap(next);
    return change;
  }

  CrfResult run() const {
    std::vector<double> q = initial();
    CrfResult r;
    for (int it = 0; it < params_.iterations; ++it) {
      r.last_change = step(q);
      r.iterations_run = it + 1;
      if (options_.early_stop && r.last_change < options_.tolerance) break;
    }
    r.map = argmax(q);
    r.q = to_prob(q);
    return r;
  }

  LabelVolume argmax(const std::vector<double>& q) const {
    const std::size_t n = voxels(), c = classes();
    LabelVolume out(unary_.grid());
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < c; ++l)
        if (q[l * n + i] > q[best * n + i]) best = l;
      out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
  }

  ProbVolume to_prob(const std::vector<double>& q) const {
    return ProbVolume(unary_.grid(), classes(), std::vector<float>(q.begin(), q.end()));
  }

 private:
  // Q_i(l) ∝ exp(-phi_i(l) - sum_{l' != l} M_i(l')), M = sum_m w_m K_m Q.
  void update(std::vector<double>& out, const std::vector<double>& message) const {
    const std::size_t n = voxels(), c = classes();
    parallel_for(n, options_.threads, [&](std::size_t b, std::size_t e) {
      std::vector<double> a(c);
      for (std::size_t i = b; i < e; ++i) {
        double total = 0.0;
        for (std::size_t l = 0; l < c; ++l) total += message[l * n + i];
        double hi = -INFINITY;
        for (std::size_t l = 0; l < c; ++l) {
          a[l] = -phi_[l * n + i] - (total - message[l * n + i]);
          hi = std::max(hi, a[l]);
        }
        double s = 0.0;
        for (std::size_t l = 0; l < c; ++l) s += (a[l] = std::exp(a[l] - hi));
        for (std::size_t l = 0; l < c; ++l) out[l * n + i] = a[l] / s;
      }
    });
  }

  const ProbVolume& unary_;
  CrfParams params_;
  CrfOptions options_;
  std::optional<FeatureSet> pos_features_, bil_features_;
  std::optional<GaussianFilter> pos_filter_, bil_filter_;
  std::vector<double> phi_;
};

/// One mean-field update of `q` (a normalized distribution).
inline ProbVolume meanfield_step(const ProbVolume& q, const ProbVolume& unary,
                                 const RealVolume& intensity, const CrfParams& params,
                                 const CrfOptions& options = {}) {
  require_same_grid(q.grid(), unary.grid(), "mean-field step");
  if (q.classes() != unary.classes()) throw DataError("mean-field step: class counts differ");
  DenseCrf crf(unary, intensity, params, options);
  std::vector<double> qd(q.data().begin(), q.data().end());
  crf.step(qd);
  return crf.to_prob(qd);
}

inline CrfResult infer(const ProbVolume& unary, const RealVolume& intensity,
                       const CrfParams& params, const CrfOptions& options = {}) {
  return DenseCrf(unary, intensity, params, options).run();
}

inline constexpr double kBruteForceLimit = 1e7;

/// Exhaustive minimizer of energy(); the lexicographically first labeling
/// wins ties.
inline LabelVolume brute_force_map(const ProbVolume& unary, const RealVolume& intensity,
                                   const CrfParams& params) {
  params.validate();
  detail::check_crf_inputs(unary, intensity);
  const std::size_t n = unary.voxels(), c = unary.classes();
  if (double(n) * std::log(double(c)) > std::log(kBruteForceLimit) + 1e-12)
    throw UsageError("brute-force MAP limited to classes^N <= 10^7 labelings");
  std::vector<double> u(n * c);
  for (std::size_t k = 0; k < n * c; ++k) u[k] = unary_cost(unary.data()[k]);
  std::vector<double> pw(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      pw[i * n + j] = detail::pair_weight(unary.grid(), intensity, params, i, j);

  std::vector<std::uint8_t> x(n, 0), best;
  double best_e = INFINITY;
  while (true) {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += u[x[i] * n + i];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (x[i] != x[j]) e += pw[i * n + j];
    if (e < best_e) {
      best_e = e;
      best = x;
    }
    // Lexicographic successor, voxel 0 most significant.
    std::size_t k = n;
    while (k > 0 && x[k - 1] == c - 1) x[--k] = 0;
    if (k == 0) break;
    ++x[k - 1];
  }
  return LabelVolume(unary.grid(), best);
}

}  // namespace hepaseg

#endif  // HEPASEG_CRF_HPP
