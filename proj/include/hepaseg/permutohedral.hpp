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

// Permutohedral lattice for approximate high-dimensional Gaussian filtering
// (splat / blur / slice). Features are expected to be pre-divided by their
// kernel widths, so the target kernel is exp(-|f_i - f_j|^2 / 2).
//
// Differences from the classic formulation:
//  - the output approximates the literal, unnormalized sum: the lattice
//    response is rescaled by a closed-form constant matching its total mass
//    to the continuous Gaussian's (2 pi)^{d/2};
//  - the lattice can be refined (finer vertex spacing, longer blur at the
//    same effective width), which makes the kernel shape closer to Gaussian;
//  - vertices a few steps away from the data are inserted, so blur paths
//    crossing empty regions keep their mass;
//  - the self-response of every point is known in closed form, so the j == i
//    term can be removed exactly.

#ifndef HEPASEG_PERMUTOHEDRAL_HPP
#define HEPASEG_PERMUTOHEDRAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/parallel.hpp"

namespace hepaseg {

namespace detail {

/// Open-addressing hash from integer lattice keys (d coordinates) to dense
/// vertex ids. Ids follow insertion order.
class LatticeHash {
 public:
  LatticeHash(std::size_t key_size, std::size_t expected) : key_size_(key_size) {
    std::size_t cap = 64;
    while (cap < 2 * expected) cap <<= 1;
    table_.assign(cap, kEmpty);
    keys_.reserve(expected * key_size_);
  }

  std::size_t size() const { return keys_.size() / key_size_; }
  const std::int32_t* key(std::size_t id) const { return &keys_[id * key_size_]; }

  std::int32_t insert(const std::int32_t* k) {
    if (2 * (size() + 1) > table_.size()) grow();
    std::size_t h = hash(k) & (table_.size() - 1);
    while (true) {
      const std::int32_t id = table_[h];
      if (id == kEmpty) {
        if (size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
          throw UsageError("lattice too large");
        table_[h] = static_cast<std::int32_t>(size());
        keys_.insert(keys_.end(), k, k + key_size_);
        return table_[h];
      }
      if (equal(key(static_cast<std::size_t>(id)), k)) return id;
      h = (h + 1) & (table_.size() - 1);
    }
  }

  /// Vertex id or -1.
  std::int32_t find(const std::int32_t* k) const {
    std::size_t h = hash(k) & (table_.size() - 1);
    while (true) {
      const std::int32_t id = table_[h];
      if (id == kEmpty) return -1;
      if (equal(key(static_cast<std::size_t>(id)), k)) return id;
      h = (h + 1) & (table_.size() - 1);
    }
  }

 private:
  static constexpr std::int32_t kEmpty = -1;

  std::size_t hash(const std::int32_t* k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < key_size_; ++i) {
      h ^= static_cast<std::uint32_t>(k[i]);
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
  bool equal(const std::int32_t* a, const std::int32_t* b) const {
    for (std::size_t i = 0; i < key_size_; ++i)
      if (a[i] != b[i]) return false;
    return true;
  }
  void grow() {
    std::vector<std::int32_t> bigger(table_.size() * 2, kEmpty);
    table_.swap(bigger);
    for (std::size_t id = 0; id < size(); ++id) {
      std::size_t h = hash(key(id)) & (table_.size() - 1);
      while (table_[h] != kEmpty) h = (h + 1) & (table_.size() - 1);
      table_[h] = static_cast<std::int32_t>(id);
    }
  }

  std::size_t key_size_;
  std::vector<std::int32_t> table_;
  std::vector<std::int32_t> keys_;
};

}  // namespace detail

struct LatticeOptions {
  /// Vertex spacing is divided by this factor and the blur lengthened to
  /// keep the effective kernel width. 1 is the classic lattice.
  double refinement = 1.25;
  /// Vertices within this many single lattice steps of a data vertex are
  /// inserted as well.
  int closure_depth = 2;
};

class PermutohedralLattice {
 public:
  /// `features` holds `dim` floats per point, point-major.
  PermutohedralLattice(std::span<const float> features, std::size_t dim,
                       LatticeOptions options = {})
      : d_(dim), options_(options) {
    if (d_ == 0) throw UsageError("lattice feature dimension must be positive");
    if (features.size() % d_ != 0) throw UsageError("feature buffer is not a multiple of dim");
    if (!(options_.refinement >= 1.0)) throw UsageError("lattice refinement must be >= 1");
    if (options_.closure_depth < 0) throw UsageError("closure depth must be >= 0");
    n_ = features.size() / d_;
    if (n_ * (d_ + 1) > static_cast<std::size_t>(std::numeric_limits<std::uint32_t>::max()))
      throw UsageError("too many lattice points");
    setup_blur();
    build(features);
    compute_self_blur();
  }

  std::size_t points() const { return n_; }
  std::size_t dim() const { return d_; }
  std::size_t vertices() const { return m_; }

  /// Calibrated response of point i to its own value.
  double self_weight(std::size_t i) const {
    const std::size_t d1 = d_ + 1;
    const float* b = &bary_[i * d1];
    double s = 0.0;
    for (std::size_t a = 0; a < d1; ++a)
      for (std::size_t c = 0; c < d1; ++c) s += double(b[a]) * b[c] * self_blur_[a * d1 + c];
    return s * scale_;
  }

  /// out[c*N + i] ~= sum_j K(f_i, f_j) in[c*N + j], optionally without the
  /// j == i term. Channel-major buffers of `channels * points()` floats.
  void filter(std::span<const float> in, std::size_t channels, std::span<float> out,
              bool exclude_self, int threads = 1) const {
    if (in.size() != channels * n_ || out.size() != channels * n_)
      throw UsageError("lattice filter buffer size mismatch");
    const std::size_t d1 = d_ + 1;
    std::vector<float> lat(m_), tmp(m_);
    for (std::size_t c = 0; c < channels; ++c) {
      const float* v = in.data() + c * n_;
      float* o = out.data() + c * n_;
      // Splat as a gather in ascending point order so the accumulation order
      // does not depend on the thread count.
      parallel_for(m_, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t m = b; m < e; ++m) {
          float s = 0.0f;
          for (std::uint32_t k = splat_start_[m]; k < splat_start_[m + 1]; ++k) {
            const std::uint32_t slot = splat_slots_[k];
            s += bary_[slot] * v[slot / d1];
          }
          lat[m] = s;
        }
      });
      const float w = static_cast<float>(pass_weight_);
      for (std::size_t j = 0; j <= d_; ++j) {
        const std::int32_t* nb = &neighbors_[j * m_ * 2];
        for (int pass = 0; pass < passes_; ++pass) {
          parallel_for(m_, threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = b; m < e; ++m) {
              const std::int32_t n1 = nb[2 * m], n2 = nb[2 * m + 1];
              const float v1 = n1 >= 0 ? lat[n1] : 0.0f;
              const float v2 = n2 >= 0 ? lat[n2] : 0.0f;
              tmp[m] = lat[m] + w * (v1 + v2);
            }
          });
          lat.swap(tmp);
        }
      }
      parallel_for(n_, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          double s = 0.0;
          for (std::size_t r = 0; r < d1; ++r) {
            const std::size_t slot = i * d1 + r;
            s += double(bary_[slot]) * lat[offset_[slot]];
          }
          s *= scale_;
          if (exclude_self) s -= self_weight(i) * v[i];
          o[i] = static_cast<float>(s);
        }
      });
    }
  }

 private:
  // Variance bookkeeping in units of the target kernel: a pass with taps
  // [w, 1, w] along every lattice direction adds 1.5 * tau, tau = 2w/(1+2w);
  // splat plus slice add 0.25 / refinement^2.
  void setup_blur() {
    const double r2 = options_.refinement * options_.refinement;
    const double tau_total = (r2 - 0.25) / 1.5;
    passes_ = std::max(1, static_cast<int>(std::ceil(tau_total / 0.5 - 1e-9)));
    const double tau = tau_total / passes_;
    pass_weight_ = tau / (2.0 * (1.0 - tau));
    kernel1d_ = {1.0};
    for (int p = 0; p < passes_; ++p) {
      std::vector<double> next(kernel1d_.size() + 2, 0.0);
      for (std::size_t k = 0; k < kernel1d_.size(); ++k) {
        next[k] += pass_weight_ * kernel1d_[k];
        next[k + 1] += kernel1d_[k];
        next[k + 2] += pass_weight_ * kernel1d_[k];
      }
      kernel1d_.swap(next);
    }
  }

  // canonical[r * (d+1) + k]: offset of the remainder-r simplex vertex along
  // the axis of rank k.
  static std::vector<std::int32_t> canonical_simplex(std::size_t d) {
    const std::size_t d1 = d + 1;
    std::vector<std::int32_t> canonical(d1 * d1);
    for (std::size_t r = 0; r <= d; ++r) {
      for (std::size_t k = 0; k <= d - r; ++k) canonical[r * d1 + k] = std::int32_t(r);
      for (std::size_t k = d - r + 1; k <= d; ++k)
        canonical[r * d1 + k] = std::int32_t(r) - std::int32_t(d1);
    }
    return canonical;
  }

  void build(std::span<const float> features) {
    const std::size_t d = d_, d1 = d_ + 1;
    const double elevation_scale = std::sqrt(2.0 / 3.0) * double(d1) * options_.refinement;
    std::vector<double> scale_factor(d);
    for (std::size_t i = 0; i < d; ++i)
      scale_factor[i] = elevation_scale / std::sqrt(double((i + 1) * (i + 2)));
    const auto canonical = canonical_simplex(d);

    detail::LatticeHash hash(d, n_ + 16);
    offset_.assign(n_ * d1, 0);
    bary_.assign(n_ * d1, 0.0f);
    std::vector<double> elevated(d1), barycentric(d1 + 1);
    std::vector<std::int32_t> rem0(d1), rank(d1), key(d);

    for (std::size_t p = 0; p < n_; ++p) {
      const float* f = &features[p * d];
      // Orthogonal embedding into the hyperplane sum(x) = 0 of R^{d+1}.
      double sm = 0.0;
      for (std::size_t j = d; j > 0; --j) {
        if (!std::isfinite(f[j - 1])) throw UsageError("non-finite lattice feature");
        const double cf = f[j - 1] * scale_factor[j - 1];
        elevated[j] = sm - double(j) * cf;
        sm += cf;
      }
      elevated[0] = sm;

      // Nearest remainder-0 point, then the enclosing simplex via ranks.
      std::int64_t sum = 0;
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = elevated[i] / double(d1);
        const double up = std::ceil(v) * double(d1);
        const double down = std::floor(v) * double(d1);
        if (std::abs(up) > 1e9) throw UsageError("lattice feature out of range");
        rem0[i] = std::int32_t(up - elevated[i] < elevated[i] - down ? up : down);
        sum += rem0[i] / std::int32_t(d1);
      }
      std::fill(rank.begin(), rank.end(), 0);
      for (std::size_t i = 0; i < d; ++i) {
        const double di = elevated[i] - rem0[i];
        for (std::size_t j = i + 1; j <= d; ++j) {
          if (di < elevated[j] - rem0[j])
            ++rank[i];
          else
            ++rank[j];
        }
      }
      for (std::size_t i = 0; i <= d; ++i) {
        rank[i] += std::int32_t(sum);
        if (rank[i] < 0) {
          rank[i] += std::int32_t(d1);
          rem0[i] += std::int32_t(d1);
        } else if (rank[i] > std::int32_t(d)) {
          rank[i] -= std::int32_t(d1);
          rem0[i] -= std::int32_t(d1);
        }
      }
      std::fill(barycentric.begin(), barycentric.end(), 0.0);
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = (elevated[i] - rem0[i]) / double(d1);
        barycentric[d - rank[i]] += v;
        barycentric[d - rank[i] + 1] -= v;
      }
      barycentric[0] += 1.0 + barycentric[d1];

      for (std::size_t r = 0; r <= d; ++r) {
        for (std::size_t i = 0; i < d; ++i) key[i] = rem0[i] + canonical[r * d1 + rank[i]];
        offset_[p * d1 + r] = static_cast<std::uint32_t>(hash.insert(key.data()));
        bary_[p * d1 + r] = static_cast<float>(barycentric[r]);
      }
    }

    // One lattice step along direction j: -1 on every stored coordinate and
    // +d on coordinate j (the implicit last coordinate for j == d).
    auto step = [d](const std::int32_t* k, std::size_t j, int sign, std::int32_t* out) {
      for (std::size_t i = 0; i < d; ++i) out[i] = k[i] - sign;
      if (j < d) out[j] = k[j] + sign * std::int32_t(d);
    };
    std::vector<std::int32_t> n1(d), n2(d);
    std::size_t ring_begin = 0;
    for (int depth = 0; depth < options_.closure_depth; ++depth) {
      const std::size_t ring_end = hash.size();
      for (std::size_t m = ring_begin; m < ring_end; ++m) {
        for (std::size_t j = 0; j <= d; ++j) {
          step(hash.key(m), j, 1, n1.data());
          hash.insert(n1.data());
          step(hash.key(m), j, -1, n2.data());
          hash.insert(n2.data());
        }
      }
      ring_begin = ring_end;
    }
    m_ = hash.size();

    neighbors_.assign(d1 * m_ * 2, -1);
    for (std::size_t j = 0; j <= d; ++j) {
      for (std::size_t m = 0; m < m_; ++m) {
        step(hash.key(m), j, 1, n1.data());
        step(hash.key(m), j, -1, n2.data());
        neighbors_[(j * m_ + m) * 2] = hash.find(n1.data());
        neighbors_[(j * m_ + m) * 2 + 1] = hash.find(n2.data());
      }
    }

    splat_start_.assign(m_ + 1, 0);
    for (std::size_t s = 0; s < offset_.size(); ++s) ++splat_start_[offset_[s] + 1];
    for (std::size_t m = 0; m < m_; ++m) splat_start_[m + 1] += splat_start_[m];
    splat_slots_.assign(offset_.size(), 0);
    std::vector<std::uint32_t> fill(splat_start_.begin(), splat_start_.end() - 1);
    for (std::size_t s = 0; s < offset_.size(); ++s)
      splat_slots_[fill[offset_[s]]++] = static_cast<std::uint32_t>(s);

    // Operator mass per unit point density is blur mass times the covolume
    // of the scaled vertex lattice, (d+1)^{d-1/2} / scale^d.
    const double covolume =
        std::pow(double(d1), double(d) - 0.5) / std::pow(elevation_scale, double(d));
    const double blur_mass = std::pow(1.0 + 2.0 * pass_weight_, double(passes_) * double(d1));
    scale_ = std::pow(2.0 * std::numbers::pi, 0.5 * double(d)) / (blur_mass * covolume);
  }

  // self_blur_[a * d1 + b]: blur response at simplex vertex b to a unit
  // impulse at vertex a of the same simplex. A displacement is reached by
  // per-direction step counts c with (d+1) c_k - sum(c) = delta_k; for a
  // fixed sum(c) the counts are determined, so only the sum is enumerated.
  void compute_self_blur() {
    const std::size_t d = d_, d1 = d_ + 1;
    const auto canonical = canonical_simplex(d);
    const std::int32_t reach = passes_;
    const std::int32_t n = std::int32_t(d1);
    self_blur_.assign(d1 * d1, 0.0);
    for (std::size_t a = 0; a <= d; ++a) {
      for (std::size_t b = 0; b <= d; ++b) {
        double total = 0.0;
        for (std::int32_t csum = -reach * n; csum <= reach * n; ++csum) {
          double weight = 1.0;
          std::int32_t check = 0;
          for (std::size_t k = 0; k <= d; ++k) {
            const std::int32_t num = canonical[b * d1 + k] - canonical[a * d1 + k] + csum;
            const std::int32_t c = num / n;
            if (num % n != 0 || c < -reach || c > reach) {
              weight = 0.0;
              break;
            }
            check += c;
            weight *= kernel1d_[static_cast<std::size_t>(c + reach)];
          }
          if (weight != 0.0 && check == csum) total += weight;
        }
        self_blur_[a * d1 + b] = total;
      }
    }
  }

  std::size_t d_ = 0, n_ = 0, m_ = 0;
  LatticeOptions options_;
  int passes_ = 1;
  double pass_weight_ = 0.5;
  std::vector<double> kernel1d_;
  double scale_ = 1.0;
  std::vector<std::uint32_t> offset_;
  std::vector<float> bary_;
  std::vector<std::int32_t> neighbors_;
  std::vector<std::uint32_t> splat_start_, splat_slots_;
  std::vector<double> self_blur_;
};

}  // namespace hepaseg

#endif  // HEPASEG_PERMUTOHEDRAL_HPP
