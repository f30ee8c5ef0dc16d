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

// Random search over CRF parameters. Trial k consumes a fixed block of the
// seeded random stream, so a longer search always extends a shorter one.

#ifndef HEPASEG_TUNER_HPP
#define HEPASEG_TUNER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hepaseg/crf.hpp"
#include "hepaseg/error.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/metrics.hpp"
#include "hepaseg/parallel.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

struct ParamRange {
  double low = 0.0;
  double high = 0.0;
  bool log_scale = true;

  void validate(const char* name) const {
    if (!std::isfinite(low) || !std::isfinite(high) || low > high)
      throw UsageError(std::string("bad search range for ") + name);
    if (log_scale && !(low > 0.0))
      throw UsageError(std::string("log-scale range for ") + name + " needs a positive lower bound");
  }

  double sample(double u) const {
    if (low == high) return low;
    if (log_scale) return std::exp(std::log(low) + u * (std::log(high) - std::log(low)));
    return low + u * (high - low);
  }
};

struct SearchSpace {
  ParamRange w_pos{0.1, 100.0};
  ParamRange w_bil{0.1, 100.0};
  ParamRange sigma_pos_mm{0.5, 50.0};
  ParamRange sigma_bil_mm{0.5, 50.0};
  ParamRange sigma_int{1.0, 200.0};
  int trials = 20;
  std::uint64_t seed = 0;
  int iterations = 10;

  void validate() const {
    w_pos.validate("w_pos");
    w_bil.validate("w_bil");
    sigma_pos_mm.validate("sigma_pos_mm");
    sigma_bil_mm.validate("sigma_bil_mm");
    sigma_int.validate("sigma_int");
    if (!(w_pos.low >= 0.0) || !(w_bil.low >= 0.0)) throw UsageError("weights must be nonnegative");
    if (!(sigma_pos_mm.low > 0.0) || !(sigma_bil_mm.low > 0.0) || !(sigma_int.low > 0.0))
      throw UsageError("kernel widths must be positive");
    if (trials < 1) throw UsageError("trial count must be positive");
    if (iterations < 1) throw UsageError("iteration count must be positive");
  }

  /// Parameters of the first `count` trials.
  std::vector<CrfParams> samples(int count) const {
    std::mt19937_64 rng(seed);
    std::vector<CrfParams> out;
    for (int t = 0; t < count; ++t) {
      std::array<double, 5> u{};
      for (auto& x : u) x = std::generate_canonical<double, 53>(rng);
      CrfParams p;
      p.w_pos = w_pos.sample(u[0]);
      p.w_bil = w_bil.sample(u[1]);
      p.sigma_pos_mm = sigma_pos_mm.sample(u[2]);
      p.sigma_bil_mm = sigma_bil_mm.sample(u[3]);
      p.sigma_int = sigma_int.sample(u[4]);
      p.iterations = iterations;
      out.push_back(p);
    }
    return out;
  }
};

struct TuneCase {
  std::string id;
  ProbVolume unary;
  RealVolume intensity;
  LabelVolume gt;
  /// Class scored by Dice; by default lesion if present in gt, else liver.
  std::optional<std::uint8_t> cls;
};

inline std::uint8_t objective_class(const TuneCase& c) {
  if (c.cls) return *c.cls;
  return std::find(c.gt.storage().begin(), c.gt.storage().end(), std::uint8_t(kLesion)) !=
                 c.gt.storage().end()
             ? std::uint8_t(kLesion)
             : std::uint8_t(kLiver);
}

struct TrialRecord {
  int trial = 0;
  CrfParams params;
  std::vector<std::optional<double>> case_scores;  // empty when skipped
  double mean_score = 0.0;
};

struct SearchResult {
  CrfParams best;
  int best_trial = 0;
  double best_score = 0.0;
  std::vector<TrialRecord> trace;
  std::vector<std::string> warnings;
};

/// Dice of the unary argmax, i.e. the CRF with zero pairwise weights.
inline double baseline_score(const std::vector<TuneCase>& cases) {
  double sum = 0.0;
  int used = 0;
  for (const auto& c : cases) {
    const auto cls = objective_class(c);
    const LabelVolume gt = binarize(c.gt, cls);
    if (std::count(gt.storage().begin(), gt.storage().end(), 1) == 0) continue;
    sum += dice(binarize(c.unary.argmax(), cls), gt);
    ++used;
  }
  if (used == 0) throw DataError("no case has a defined objective");
  return sum / used;
}

/// Trials run concurrently over `threads`; each CRF runs single-threaded, so
/// results do not depend on the thread count.
inline SearchResult random_search(const SearchSpace& space, const std::vector<TuneCase>& cases,
                                  int threads = 1) {
  space.validate();
  if (cases.empty()) throw UsageError("random search needs at least one case");
  SearchResult result;
  std::vector<bool> usable(cases.size(), true);
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& c = cases[k];
    require_same_grid(c.unary.grid(), c.gt.grid(), "tuning case " + c.id);
    require_same_grid(c.unary.grid(), c.intensity.grid(), "tuning case " + c.id);
    const auto cls = objective_class(c);
    if (std::count(c.gt.storage().begin(), c.gt.storage().end(), cls) == 0) {
      usable[k] = false;
      result.warnings.push_back("case " + c.id + ": class " + std::to_string(cls) +
                                " absent from ground truth; skipped");
    }
  }
  if (std::none_of(usable.begin(), usable.end(), [](bool b) { return b; }))
    throw DataError("no case has a defined objective");

  const auto params = space.samples(space.trials);
  result.trace.resize(params.size());
  parallel_for(params.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t t = b; t < e; ++t) {
      TrialRecord rec;
      rec.trial = int(t);
      rec.params = params[t];
      double sum = 0.0;
      int used = 0;
      for (std::size_t k = 0; k < cases.size(); ++k) {
        if (!usable[k]) {
          rec.case_scores.push_back(std::nullopt);
          continue;
        }
        const auto& c = cases[k];
        const auto cls = objective_class(c);
        const auto r = infer(c.unary, c.intensity, rec.params);
        const double d = dice(binarize(r.map, cls), binarize(c.gt, cls));
        rec.case_scores.push_back(d);
        sum += d;
        ++used;
      }
      rec.mean_score = sum / used;
      result.trace[t] = std::move(rec);
    }
  });
  for (const auto& rec : result.trace) {
    if (rec.trial == 0 || rec.mean_score > result.best_score) {
      result.best_score = rec.mean_score;
      result.best_trial = rec.trial;
      result.best = rec.params;
    }
  }
  return result;
}

inline void write_trace_csv(const SearchResult& r, const std::vector<TuneCase>& cases,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "trial,w_pos,w_bil,sigma_pos_mm,sigma_bil_mm,sigma_int";
  for (const auto& c : cases) out << ",score_" << c.id;
  out << ",mean_score\n";
  for (const auto& t : r.trace) {
    out << t.trial << ',' << format_real(t.params.w_pos) << ',' << format_real(t.params.w_bil) << ','
        << format_real(t.params.sigma_pos_mm) << ',' << format_real(t.params.sigma_bil_mm) << ','
        << format_real(t.params.sigma_int);
    for (const auto& s : t.case_scores) out << ',' << (s ? format_real(*s) : std::string("NA"));
    out << ',' << format_real(t.mean_score) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace hepaseg

#endif  // HEPASEG_TUNER_HPP
