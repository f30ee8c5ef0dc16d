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

// Two-stage liver/lesion cascade: stage 1 segments the liver on the whole
// volume, its bounding box (plus padding) is cropped and resampled in-plane,
// stage 2 segments lesions inside that region, and the results are fused so
// lesions can only occur inside the liver.

#ifndef HEPASEG_CASCADE_HPP
#define HEPASEG_CASCADE_HPP

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hepaseg/components.hpp"
#include "hepaseg/crf.hpp"
#include "hepaseg/error.hpp"
#include "hepaseg/geometry.hpp"
#include "hepaseg/parallel.hpp"
#include "hepaseg/preprocess.hpp"
#include "hepaseg/toynet.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

/// What a unary model is asked to label: `image` is a crop of the full
/// preprocessed volume given by `box`, possibly resampled.
struct UnaryQuery {
  const RealVolume& image;
  BoundingBox box;
  Dims full_dims;
};

class UnaryProvider {
 public:
  virtual ~UnaryProvider() = default;
  /// Returns probabilities on the query image's grid.
  virtual ProbVolume predict(const UnaryQuery& q) const = 0;
  virtual std::string describe() const = 0;
};

/// Full-volume probability maps computed elsewhere (e.g. loaded from disk).
class PrecomputedUnary final : public UnaryProvider {
 public:
  explicit PrecomputedUnary(ProbVolume probs, std::string source = "precomputed")
      : probs_(std::move(probs)), source_(std::move(source)) {}

  ProbVolume predict(const UnaryQuery& q) const override {
    if (probs_.dims() != q.full_dims)
      throw DataError("probability map " + source_ + " does not match the CT dimensions");
    ProbVolume roi = q.box == BoundingBox::full(q.full_dims) ? probs_ : crop(probs_, q.box);
    if (roi.dims() != q.image.dims()) roi = resample(roi, q.image.dims(), Interp::kLinear);
    return ProbVolume(q.image.grid(), roi.classes(),
                      std::vector<float>(roi.data().begin(), roi.data().end()));
  }
  std::string describe() const override { return source_; }

 private:
  ProbVolume probs_;
  std::string source_;
};

/// Slice-by-slice forward passes of a ToyNet over the query image.
class ToyNetUnary final : public UnaryProvider {
 public:
  ToyNetUnary(ToyNet<float> net, double window_lo, double window_hi, int threads = 1,
              std::string source = "toynet")
      : net_(std::move(net)), lo_(window_lo), hi_(window_hi), threads_(threads),
        source_(std::move(source)) {
    if (net_.in_channels() != 1) throw DataError("unary networks must take one input channel");
  }

  ProbVolume predict(const UnaryQuery& q) const override {
    const Grid& g = q.image.grid();
    const std::size_t c = std::size_t(net_.classes()), hw = g.slice_size();
    ProbVolume out(g, c);
    parallel_for(g.dims[2], threads_, [&](std::size_t zb, std::size_t ze) {
      for (std::size_t z = zb; z < ze; ++z) {
        const auto probs = net_.forward(normalize_input(extract_slice(q.image, z), lo_, hi_));
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t i = 0; i < hw; ++i) out.at(k, z * hw + i) = probs.at(k, i);
      }
    });
    return out;
  }
  std::string describe() const override { return source_; }

 private:
  ToyNet<float> net_;
  double lo_, hi_;
  int threads_;
  std::string source_;
};

/// Foreground probability of a stage as a two-class volume. For three-class
/// maps the liver stage uses P(liver) + P(lesion) and the lesion stage
/// P(lesion); two-class maps are taken as (background, foreground).
enum class Stage { kLiver, kLesion };

inline ProbVolume stage_probs(const ProbVolume& p, Stage stage) {
  const std::size_t n = p.voxels();
  ProbVolume out(p.grid(), 2);
  for (std::size_t i = 0; i < n; ++i) {
    double fg;
    if (p.classes() == 2) fg = p.at(1, i);
    else if (stage == Stage::kLiver) fg = double(p.at(1, i)) + double(p.at(2, i));
    else fg = p.at(2, i);
    fg = std::clamp(fg, 0.0, 1.0);
    out.at(1, i) = static_cast<float>(fg);
    out.at(0, i) = static_cast<float>(1.0 - fg);
  }
  return out;
}

enum class CrfIntensity { kWindowed, kRaw };

struct CascadeConfig {
  double liver_threshold = 0.5;
  double roi_pad_mm = 10.0;
  std::array<std::size_t, 2> stage2_size{256, 256};
  bool largest_component_only = true;
  PreprocessOptions preprocess{};
  std::optional<CrfParams> crf;
  bool crf_liver = true;
  bool crf_lesion = true;
  CrfIntensity crf_intensity = CrfIntensity::kWindowed;
  int threads = 1;

  void validate() const {
    if (!(liver_threshold > 0.0 && liver_threshold < 1.0))
      throw UsageError("liver threshold must lie strictly between 0 and 1");
    if (!(roi_pad_mm >= 0.0) || !std::isfinite(roi_pad_mm)) throw UsageError("ROI padding must be nonnegative");
    if (stage2_size[0] == 0 || stage2_size[1] == 0) throw UsageError("stage-2 size must be positive");
    if (threads < 1) throw UsageError("thread count must be positive");
    if (crf) crf->validate();
  }
};

struct LiverRoi {
  LabelVolume mask;
  BoundingBox box;  // padded
};

inline BoundingBox mask_bounds(const LabelVolume& mask) {
  const Grid& g = mask.grid();
  BoundingBox b{{g.dims[0], g.dims[1], g.dims[2]}, {0, 0, 0}};
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    const auto c = g.coords(i);
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::min(b.lo[a], c[a]);
      b.hi[a] = std::max(b.hi[a], c[a]);
    }
  }
  if (!any) throw DataError("no liver found");
  return b;
}

inline LiverRoi liver_roi(const ProbVolume& liver_probs, const CascadeConfig& cfg) {
  cfg.validate();
  const ProbVolume p = stage_probs(liver_probs, Stage::kLiver);
  LabelVolume mask(p.grid(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = p.at(1, i) >= cfg.liver_threshold ? 1 : 0;
  if (cfg.largest_component_only) mask = largest_component(mask);
  const BoundingBox tight = mask_bounds(mask);
  return {std::move(mask), pad_box(tight, p.grid(), cfg.roi_pad_mm)};
}

/// 2 where lesion and liver, 1 where liver only, else 0.
inline LabelVolume fuse_labels(const LabelVolume& liver, const LabelVolume& lesion) {
  require_same_dims(liver.grid(), lesion.grid(), "fuse");
  LabelVolume out(liver.grid(), 0);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = liver[i] ? (lesion[i] ? kLesion : kLiver) : kBackground;
  return out;
}

struct CascadeTimings {
  double stage1_s = 0.0;
  double stage2_s = 0.0;
  double crf_s = 0.0;
};

struct CascadeResult {
  LabelVolume labels;
  ProbVolume liver_probs;   // full volume, two classes, after CRF if enabled
  LabelVolume liver_mask;
  BoundingBox roi;
  ProbVolume lesion_probs;  // stage-2 grid, two classes, after CRF if enabled
  LabelVolume lesion_mask;  // full volume
  CascadeTimings timings;
};

namespace detail {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline void check_provider_output(const ProbVolume& p, const Grid& g, const char* stage) {
  if (p.dims() != g.dims)
    throw DataError(std::string(stage) + " model returned probabilities of the wrong shape");
  if (!(p.normalization_error() <= 1e-4))
    throw DataError(std::string(stage) + " model returned unnormalized probabilities");
}

}  // namespace detail

inline CascadeResult run_cascade(const CtVolume& ct, const UnaryProvider& liver_model,
                                 const UnaryProvider& lesion_model, const CascadeConfig& cfg) {
  cfg.validate();
  const Grid& g = ct.grid();
  const RealVolume image = preprocess(ct, cfg.preprocess);
  const RealVolume crf_image = cfg.crf_intensity == CrfIntensity::kWindowed
                                   ? hu_window(convert<float>(ct), cfg.preprocess.window_lo,
                                               cfg.preprocess.window_hi)
                                   : convert<float>(ct);
  CrfOptions crf_opt;
  crf_opt.threads = cfg.threads;
  CascadeResult r;
  detail::Stopwatch sw;

  // Stage 1: liver over the whole volume.
  const ProbVolume raw_liver = liver_model.predict({image, BoundingBox::full(g.dims), g.dims});
  detail::check_provider_output(raw_liver, g, "liver");
  r.liver_probs = stage_probs(raw_liver, Stage::kLiver);
  r.timings.stage1_s += sw.lap();
  if (cfg.crf && cfg.crf_liver) {
    r.liver_probs = infer(r.liver_probs, crf_image, *cfg.crf, crf_opt).q;
    r.timings.crf_s += sw.lap();
  }
  LiverRoi roi = liver_roi(r.liver_probs, cfg);
  r.liver_mask = std::move(roi.mask);
  r.roi = roi.box;

  // Stage 2: lesions inside the ROI, resampled in-plane.
  const Dims crop_dims = r.roi.extent();
  const Dims s2_dims{cfg.stage2_size[0], cfg.stage2_size[1], crop_dims[2]};
  const RealVolume roi_image = resample(crop(image, r.roi), s2_dims, Interp::kLinear);
  const ProbVolume raw_lesion = lesion_model.predict({roi_image, r.roi, g.dims});
  detail::check_provider_output(raw_lesion, roi_image.grid(), "lesion");
  r.lesion_probs = stage_probs(raw_lesion, Stage::kLesion);
  r.timings.stage2_s += sw.lap();
  if (cfg.crf && cfg.crf_lesion) {
    const RealVolume roi_crf = resample(crop(crf_image, r.roi), s2_dims, Interp::kLinear);
    r.lesion_probs = infer(r.lesion_probs, roi_crf, *cfg.crf, crf_opt).q;
    r.timings.crf_s += sw.lap();
  }
  const LabelVolume s2_mask = r.lesion_probs.argmax();
  const LabelVolume roi_mask = resample(s2_mask, crop_dims, Interp::kNearest);
  r.lesion_mask = LabelVolume(g, 0);
  paste(r.lesion_mask, roi_mask, r.roi.lo);
  r.labels = fuse_labels(r.liver_mask, r.lesion_mask);
  r.timings.stage2_s += sw.lap();
  return r;
}

inline void write_bbox(const BoundingBox& b, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "lo " << b.lo[0] << ' ' << b.lo[1] << ' ' << b.lo[2] << '\n';
  out << "hi " << b.hi[0] << ' ' << b.hi[1] << ' ' << b.hi[2] << '\n';
}

inline BoundingBox read_bbox(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  BoundingBox b;
  std::string tag_lo, tag_hi;
  if (!(in >> tag_lo >> b.lo[0] >> b.lo[1] >> b.lo[2] >> tag_hi >> b.hi[0] >> b.hi[1] >> b.hi[2]) ||
      tag_lo != "lo" || tag_hi != "hi")
    throw DataError("malformed bounding box file " + path.string());
  return b;
}

}  // namespace hepaseg

#endif  // HEPASEG_CASCADE_HPP
