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

#include <algorithm>
#include <fstream>

#include "hepaseg/cascade.hpp"
#include "hepaseg/metrics.hpp"
#include "hepaseg/overlay.hpp"
#include "hepaseg/phantom.hpp"
#include "hepaseg/png.hpp"
#include "test_util.hpp"

namespace hepaseg {
namespace {

/// Same class distribution everywhere, on whatever grid is asked for.
class ConstantUnary final : public UnaryProvider {
 public:
  explicit ConstantUnary(std::vector<float> p) : p_(std::move(p)) {}
  ProbVolume predict(const UnaryQuery& q) const override {
    ProbVolume out(q.image.grid(), p_.size());
    for (std::size_t c = 0; c < p_.size(); ++c) std::fill(out.channel(c).begin(), out.channel(c).end(), p_[c]);
    return out;
  }
  std::string describe() const override { return "constant"; }

 private:
  std::vector<float> p_;
};

ProbVolume two_class_from_mask(const LabelVolume& m) {
  ProbVolume p(m.grid(), 2);
  for (std::size_t i = 0; i < m.size(); ++i) {
    p.channel(1)[i] = m[i] ? 0.9f : 0.1f;
    p.channel(0)[i] = 1.0f - p.channel(1)[i];
  }
  return p;
}

CascadeConfig small_config() {
  CascadeConfig cfg;
  cfg.stage2_size = {32, 32};
  cfg.roi_pad_mm = 2.0;
  return cfg;
}

TEST(LiverRoi, SaturatedLiverGivesFullBox) {
  const Grid g{{10, 8, 6}, {1, 1, 1}};
  const auto roi = liver_roi(two_class_from_mask(LabelVolume(g, 1)), small_config());
  EXPECT_EQ(roi.box, BoundingBox::full(g.dims));
}

TEST(LiverRoi, KeepsLargestComponent) {
  const Grid g{{20, 20, 4}, {1, 1, 1}};
  LabelVolume m(g);
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) m.at(x, y, z) = 1;
  for (std::size_t x = 12; x < 17; ++x) m.at(x, 15, 1) = 1;
  auto cfg = small_config();
  cfg.roi_pad_mm = 0.0;
  const auto roi = liver_roi(two_class_from_mask(m), cfg);
  EXPECT_EQ(std::count(roi.mask.storage().begin(), roi.mask.storage().end(), 1), 100);
  EXPECT_EQ(roi.box.hi[0], 4u);
  cfg.largest_component_only = false;
  EXPECT_EQ(liver_roi(two_class_from_mask(m), cfg).box.hi[0], 16u);
}

TEST(LiverRoi, NoLiverIsAnError) {
  const Grid g{{6, 6, 6}, {1, 1, 1}};
  EXPECT_THROW(liver_roi(two_class_from_mask(LabelVolume(g)), small_config()), DataError);
}

TEST(LiverRoi, PaddingIsMonotone) {
  const Grid g{{30, 30, 12}, {0.8, 0.8, 2.5}};
  LabelVolume m(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto c = g.coords(i);
    m[i] = c[0] >= 10 && c[0] < 18 && c[1] >= 12 && c[1] < 20 && c[2] >= 5 && c[2] < 8;
  }
  BoundingBox prev = mask_bounds(m);
  for (double pad : {0.0, 1.0, 2.5, 5.0, 10.0, 100.0}) {
    auto cfg = small_config();
    cfg.roi_pad_mm = pad;
    const auto box = liver_roi(two_class_from_mask(m), cfg).box;
    EXPECT_TRUE(box.contains(prev.lo) && box.contains(prev.hi)) << pad;
    prev = box;
  }
  EXPECT_EQ(prev, BoundingBox::full(g.dims));
}

TEST(Fuse, Cases) {
  const Grid g{{4, 1, 1}, {1, 1, 1}};
  const LabelVolume liver(g, std::vector<std::uint8_t>{0, 1, 1, 0});
  const LabelVolume lesion(g, std::vector<std::uint8_t>{0, 0, 1, 1});
  EXPECT_EQ(fuse_labels(liver, lesion).storage(), (std::vector<std::uint8_t>{0, 1, 2, 0}));
  EXPECT_THROW(fuse_labels(liver, LabelVolume(Grid{{3, 1, 1}, {1, 1, 1}})), DataError);
}

TEST(BoundingBoxFile, RoundTripAndErrors) {
  const auto dir = testing::scratch_dir("bbox");
  const BoundingBox b{{1, 2, 3}, {10, 20, 30}};
  write_bbox(b, dir / "roi.txt");
  EXPECT_EQ(read_bbox(dir / "roi.txt"), b);
  std::ofstream(dir / "bad.txt") << "lo 1 2\n";
  EXPECT_THROW(read_bbox(dir / "bad.txt"), DataError);
  EXPECT_THROW(read_bbox(dir / "missing.txt"), DataError);
}

struct PhantomCase {
  Phantom ph;
  ProbVolume oracle;
};

PhantomCase phantom_case(std::uint64_t seed, double error_rate) {
  const auto ph = generate_phantom(random_phantom(Grid{{40, 40, 24}, {1, 1, 2}}, seed));
  OracleOptions opt;
  opt.blur_sigma_mm = 1.0;
  opt.error_rate = error_rate;
  opt.smoothing = 0.1;
  opt.seed = seed + 1;
  return {ph, oracle_unary(ph.gt, opt)};
}

TEST(Cascade, AllBackgroundLesionModelGivesNoLesions) {
  const auto pc = phantom_case(1, 0.0);
  const PrecomputedUnary liver(pc.oracle);
  const ConstantUnary none({1.0f, 0.0f});
  const auto r = run_cascade(pc.ph.ct, liver, none, small_config());
  EXPECT_EQ(std::count(r.labels.storage().begin(), r.labels.storage().end(), kLesion), 0);
  LabelVolume whole(pc.ph.gt.grid());
  for (std::size_t i = 0; i < whole.size(); ++i) whole[i] = pc.ph.gt[i] != kBackground;
  EXPECT_GT(dice(r.liver_mask, whole), 95.0);
}

TEST(Cascade, LesionsNeverLeaveTheLiver) {
  const auto pc = phantom_case(2, 0.05);
  const PrecomputedUnary liver(pc.oracle);
  const ConstantUnary everywhere({0.0f, 1.0f});
  const auto r = run_cascade(pc.ph.ct, liver, everywhere, small_config());
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    if (r.labels[i] == kLesion) {
      ASSERT_TRUE(r.liver_mask[i]);
    }
    if (r.liver_mask[i]) {
      ASSERT_EQ(r.labels[i], kLesion);
    }
  }
}

TEST(Cascade, OracleUnariesRecoverPhantom) {
  const auto pc = phantom_case(3, 0.0);
  const PrecomputedUnary model(pc.oracle);
  const auto r = run_cascade(pc.ph.ct, model, model, small_config());
  EXPECT_EQ(r.liver_probs.classes(), 2u);
  EXPECT_EQ(r.lesion_probs.dims(), (Dims{32, 32, r.roi.extent()[2]}));
  EXPECT_GT(evaluate(r.labels, pc.ph.gt, kLesion).dice_pct, 80.0);
  EXPECT_TRUE(BoundingBox::full(pc.ph.ct.dims()).contains(r.roi.hi));
}

TEST(Cascade, CrfTogglesOnlyChangeTheirStage) {
  const auto pc = phantom_case(4, 0.05);
  const PrecomputedUnary model(pc.oracle);
  auto cfg = small_config();
  const auto plain = run_cascade(pc.ph.ct, model, model, cfg);
  cfg.crf = CrfParams{};
  cfg.crf_lesion = false;
  const auto liver_only = run_cascade(pc.ph.ct, model, model, cfg);
  EXPECT_NE(plain.liver_mask, liver_only.liver_mask);
  cfg.crf_liver = false;
  cfg.crf_lesion = false;
  const auto neither = run_cascade(pc.ph.ct, model, model, cfg);
  EXPECT_EQ(neither.labels, plain.labels);
}

TEST(Cascade, RejectsMismatchedProbabilities) {
  const auto pc = phantom_case(5, 0.0);
  const PrecomputedUnary wrong(ProbVolume(Grid{{8, 8, 8}, {1, 1, 1}}, 3));
  const ConstantUnary none({1.0f, 0.0f});
  EXPECT_THROW(run_cascade(pc.ph.ct, wrong, none, small_config()), DataError);
  const ConstantUnary unnormalized({0.7f, 0.7f});
  EXPECT_THROW(run_cascade(pc.ph.ct, unnormalized, none, small_config()), DataError);
}

TEST(Overlay, PerfectPredictionIsGreenAndBlue) {
  const auto pc = phantom_case(6, 0.0);
  const std::size_t z = pc.ph.ct.dims()[2] / 2;
  const auto ov = render_overlay(pc.ph.ct, pc.ph.gt, pc.ph.gt, z);
  EXPECT_EQ(ov.counts.liver_error, 0u);
  EXPECT_EQ(ov.counts.lesion_error, 0u);
  std::size_t liver = 0, lesion = 0;
  const auto& gt = pc.ph.gt;
  const std::size_t hw = gt.grid().slice_size();
  for (std::size_t i = 0; i < hw; ++i) {
    liver += gt[z * hw + i] == kLiver;
    lesion += gt[z * hw + i] == kLesion;
    const auto* px = &ov.image.rgb[3 * i];
    if (gt[z * hw + i] == kBackground) {
      EXPECT_TRUE(px[0] == px[1] && px[1] == px[2]);
    }
    if (gt[z * hw + i] == kLiver) {
      EXPECT_TRUE(px[1] > px[0] && px[1] > px[2]);
    }
  }
  EXPECT_EQ(ov.counts.correct_liver, liver);
  EXPECT_EQ(ov.counts.correct_lesion, lesion);
}

TEST(Overlay, MissedLiverIsYellow) {
  const Grid g{{6, 6, 2}, {1, 1, 1}};
  const CtVolume ct(g, std::int16_t(-1000));  // black after windowing
  LabelVolume gt(g);
  gt.at(2, 2, 1) = kLiver;
  const auto ov = render_overlay(ct, LabelVolume(g), gt, 1);
  EXPECT_EQ(ov.counts.liver_error, 1u);
  const auto* px = &ov.image.rgb[3 * (2 + 6 * 2)];
  EXPECT_EQ(px[0], 128);
  EXPECT_EQ(px[1], 128);
  EXPECT_EQ(px[2], 0);
  EXPECT_THROW(render_overlay(ct, gt, gt, 2), UsageError);
}

TEST(Png, RoundTrip) {
  RgbImage img{5, 3, {}};
  for (std::size_t i = 0; i < 5 * 3 * 3; ++i) img.rgb.push_back(std::uint8_t(i * 17));
  const auto dir = testing::scratch_dir("png");
  write_png(img, dir / "a.png");
  const auto back = read_png(dir / "a.png");
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.rgb, img.rgb);
}

}  // namespace
}  // namespace hepaseg
