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

// End-to-end checks of the command-line tool; every test shells out to the
// built binary.

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hepaseg/cascade.hpp"
#include "hepaseg/crf.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/metaio.hpp"
#include "hepaseg/metrics.hpp"
#include "hepaseg/overlay.hpp"
#include "hepaseg/png.hpp"
#include "hepaseg/preprocess.hpp"
#include "hepaseg/toynet.hpp"
#include "test_util.hpp"

namespace hepaseg {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(HEPASEG_CLI) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string manifest_value(const fs::path& dir, const std::string& key) {
  const auto v = find_value(read_key_values(dir / "manifest.txt"), key);
  return v ? *v : std::string("<missing>");
}

void expect_complete_manifest(const fs::path& dir, int exit_code) {
  ASSERT_TRUE(fs::exists(dir / "manifest.txt")) << dir;
  const auto kv = read_key_values(dir / "manifest.txt");
  for (const char* key : {"tool", "version", "command", "args", "out", "status", "exit_code"})
    EXPECT_TRUE(find_value(kv, key).has_value()) << key << " in " << dir;
  EXPECT_EQ(manifest_value(dir, "exit_code"), std::to_string(exit_code));
  EXPECT_EQ(manifest_value(dir, "status"), exit_code == 0 ? "ok" : "error");
  for (const auto& [k, v] : kv)
    if (k.rfind("timing_", 0) == 0) {
      EXPECT_GE(std::stod(v), 0.0) << k;
    }
}

/// One shared phantom for the whole suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(testing::scratch_dir("cli"));
    ASSERT_EQ(run("phantom --dims 40,40,24 --spacing 1,1,2 --random --seed 3 "
                  "--oracle-error-rate 0.05 --out " + ph().string()),
              0);
  }
  static void TearDownTestSuite() { delete root_; }
  static fs::path dir(const std::string& name) { return *root_ / name; }
  static fs::path ph() { return *root_ / "phantom"; }

  static fs::path* root_;
};
fs::path* Cli::root_ = nullptr;

TEST_F(Cli, PhantomIsDeterministic) {
  expect_complete_manifest(ph(), 0);
  for (const char* f : {"ct.mhd", "gt.mhd", "oracle_probs.mhd", "phantom_spec.txt"})
    EXPECT_TRUE(fs::exists(ph() / f)) << f;
  ASSERT_EQ(run("phantom --dims 40,40,24 --spacing 1,1,2 --random --seed 3 "
                "--oracle-error-rate 0.05 --out " + dir("phantom_again").string()),
            0);
  EXPECT_EQ(load_as<CtVolume>(ph() / "ct.mhd"), load_as<CtVolume>(dir("phantom_again") / "ct.mhd"));
  EXPECT_EQ(load_as<ProbVolume>(ph() / "oracle_probs.mhd"),
            load_as<ProbVolume>(dir("phantom_again") / "oracle_probs.mhd"));
  ASSERT_EQ(run("phantom --dims 40,40,24 --spacing 1,1,2 --random --seed 4 --out " +
                dir("phantom_other").string()),
            0);
  EXPECT_NE(load_as<CtVolume>(ph() / "ct.mhd"), load_as<CtVolume>(dir("phantom_other") / "ct.mhd"));
  // The spec file regenerates the same volume.
  ASSERT_EQ(run("phantom --spec " + (ph() / "phantom_spec.txt").string() + " --out " +
                dir("phantom_spec").string()),
            0);
  EXPECT_EQ(load_as<CtVolume>(ph() / "ct.mhd"), load_as<CtVolume>(dir("phantom_spec") / "ct.mhd"));
}

TEST_F(Cli, PreprocessDefaultsAndIdempotence) {
  const auto out = dir("pre");
  ASSERT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --out " + out.string()), 0);
  expect_complete_manifest(out, 0);
  EXPECT_EQ(std::stod(manifest_value(out, "window_lo")), -100.0);
  EXPECT_EQ(std::stod(manifest_value(out, "window_hi")), 400.0);
  const auto ct = load_as<CtVolume>(ph() / "ct.mhd");
  EXPECT_EQ(load_as<RealVolume>(out / "preprocessed.mhd"), preprocess(ct, PreprocessOptions{}));

  const auto a = dir("pre_a"), b = dir("pre_b");
  ASSERT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --no-equalize --out " + a.string()), 0);
  ASSERT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --no-equalize --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "preprocessed.raw"), slurp(b / "preprocessed.raw"));
  const auto clamped = load_as<RealVolume>(a / "preprocessed.mhd");
  for (std::size_t i = 0; i < ct.size(); ++i)
    ASSERT_EQ(clamped[i], std::clamp(float(ct[i]), -100.0f, 400.0f));
  // Windowing the windowed output again changes nothing.
  ASSERT_EQ(run("preprocess " + (a / "preprocessed.mhd").string() + " --no-equalize --out " +
                dir("pre_twice").string()),
            0);
  EXPECT_EQ(load_as<RealVolume>(dir("pre_twice") / "preprocessed.mhd"), clamped);
}

TEST_F(Cli, InferFromProbabilityFiles) {
  const auto out = dir("infer");
  const std::string probs = (ph() / "oracle_probs.mhd").string();
  ASSERT_EQ(run("infer " + (ph() / "ct.mhd").string() + " --liver-probs " + probs + " --lesion-probs " +
                probs + " --stage2-size 32x32 --out " + out.string()),
            0);
  expect_complete_manifest(out, 0);
  for (const char* k : {"timing_stage1_s", "timing_stage2_s", "timing_crf_s", "timing_total_s"})
    EXPECT_NE(manifest_value(out, k), "<missing>") << k;
  const auto ct = load_as<CtVolume>(ph() / "ct.mhd");
  const PrecomputedUnary model(load_as<ProbVolume>(ph() / "oracle_probs.mhd"));
  CascadeConfig cfg;
  cfg.stage2_size = {32, 32};
  const auto ref = run_cascade(ct, model, model, cfg);
  const auto labels = load_as<LabelVolume>(out / "labels.mhd");
  EXPECT_EQ(labels, ref.labels);
  EXPECT_EQ(read_bbox(out / "roi_bbox.txt"), ref.roi);
  const auto gt = load_as<LabelVolume>(ph() / "gt.mhd");
  EXPECT_GT(evaluate(labels, gt, kLiver).dice_pct, 80.0);

  // With a CRF file the output matches the library run with that CRF, and
  // only voxels whose refined argmax differs change.
  const auto crf_dir = dir("infer_crf");
  fs::create_directories(crf_dir);
  save_crf_params(CrfParams{}, crf_dir / "crf.txt");
  ASSERT_EQ(run("infer " + (ph() / "ct.mhd").string() + " --liver-probs " + probs + " --lesion-probs " +
                probs + " --stage2-size 32x32 --crf " + (crf_dir / "crf.txt").string() + " --out " +
                crf_dir.string()),
            0);
  cfg.crf = CrfParams{};
  const auto refined = run_cascade(ct, model, model, cfg);
  const auto crf_labels = load_as<LabelVolume>(crf_dir / "labels.mhd");
  EXPECT_EQ(crf_labels, refined.labels);
  EXPECT_NE(crf_labels, labels);
  EXPECT_GT(evaluate(crf_labels, gt, kLiver).dice_pct, evaluate(labels, gt, kLiver).dice_pct);
  EXPECT_GT(std::stod(manifest_value(crf_dir, "timing_crf_s")), 0.0);
}

TEST_F(Cli, InferRejectsAmbiguousProviders) {
  const auto out = dir("infer_bad");
  const std::string probs = (ph() / "oracle_probs.mhd").string();
  EXPECT_EQ(run("infer " + (ph() / "ct.mhd").string() + " --lesion-probs " + probs + " --out " +
                out.string()),
            2);
  expect_complete_manifest(out, 2);
  EXPECT_EQ(run("infer " + (ph() / "ct.mhd").string() + " --liver-probs /nonexistent.mhd --lesion-probs " +
                probs + " --out " + out.string()),
            3);
  expect_complete_manifest(out, 3);
}

TEST_F(Cli, EvalRowsAndExitCodes) {
  const auto out = dir("eval");
  const std::string gt = (ph() / "gt.mhd").string();
  ASSERT_EQ(run("eval " + gt + " " + gt + " --id self --out " + out.string()), 0);
  expect_complete_manifest(out, 0);
  EXPECT_EQ(slurp(out / "metrics.csv"), std::string(kMetricsCsvHeader) +
                                             "\nself,1,0,0,0,0,100\nself,2,0,0,0,0,100\n");

  // Eroding the liver by its surface shell gives a negative RVD.
  auto g = load_as<LabelVolume>(gt);
  const auto shell = surface_mask(binarize(g, kLiver));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (shell[i]) g[i] = kBackground;
  save_volume(g, out / "eroded.mhd");
  const auto log = out / "eroded.log";
  ASSERT_EQ(run("eval " + (out / "eroded.mhd").string() + " " + gt + " --classes 1 --out " +
                (out / "eroded").string(), log),
            0);
  std::istringstream rows(slurp(out / "eroded" / "metrics.csv"));
  std::string header, row;
  std::getline(rows, header);
  std::getline(rows, row);
  const auto fields = [&] {
    std::vector<std::string> f;
    std::stringstream ss(row);
    for (std::string t; std::getline(ss, t, ',');) f.push_back(t);
    return f;
  }();
  ASSERT_EQ(fields.size(), 7u);
  EXPECT_LT(std::stod(fields[3]), 0.0);

  // Class 3 never occurs: data error, row still written.
  const auto miss = dir("eval_missing");
  EXPECT_EQ(run("eval " + gt + " " + gt + " --classes 1,3 --out " + miss.string()), 3);
  expect_complete_manifest(miss, 3);
  EXPECT_NE(slurp(miss / "metrics.csv").find(",3,0,NA,NA,NA,100"), std::string::npos);
  EXPECT_EQ(run("eval " + gt + " --out " + dir("eval_usage").string()), 2);
}

TEST_F(Cli, OverlayCountsAndErrors) {
  const auto out = dir("overlay");
  const std::string ct = (ph() / "ct.mhd").string(), gt = (ph() / "gt.mhd").string();
  ASSERT_EQ(run("overlay " + ct + " " + gt + " " + gt + " --slice 12 --out " + out.string()), 0);
  expect_complete_manifest(out, 0);
  const auto img = read_png(out / "overlay_z12.png");
  const auto labels = load_as<LabelVolume>(gt);
  EXPECT_EQ(img.width, 40u);
  EXPECT_EQ(img.height, 40u);
  const auto ref = render_overlay(load_as<CtVolume>(ct), labels, labels, 12);
  EXPECT_EQ(img.rgb, ref.image.rgb);
  EXPECT_EQ(manifest_value(out, "pixels_correct_liver"), std::to_string(ref.counts.correct_liver));
  EXPECT_EQ(manifest_value(out, "pixels_liver_error"), "0");
  EXPECT_EQ(manifest_value(out, "pixels_lesion_error"), "0");
  EXPECT_EQ(run("overlay " + ct + " " + gt + " " + gt + " --slice 24 --out " + dir("overlay_bad").string()),
            2);
  expect_complete_manifest(dir("overlay_bad"), 2);
}

TEST_F(Cli, TuneIsDeterministic) {
  const auto base = dir("tune");
  fs::create_directories(base);
  std::ofstream(base / "cases.txt") << "# id unary image gt\n"
                                    << "p3 " << (ph() / "oracle_probs.mhd").string() << ' '
                                    << (ph() / "ct.mhd").string() << ' ' << (ph() / "gt.mhd").string()
                                    << '\n';
  std::ofstream(base / "space.txt") << "w_pos = 0.5,3\nw_bil = 0.5,3\nsigma_pos_mm = 1,2\n"
                                       "sigma_bil_mm = 1,3\nsigma_int = 5,40\niterations = 5\n";
  const std::string args = "tune --cases " + (base / "cases.txt").string() + " --space " +
                           (base / "space.txt").string() + " --trials 3 --seed 9 --out ";
  ASSERT_EQ(run(args + (base / "a").string()), 0);
  ASSERT_EQ(run(args + (base / "b").string() + " --threads 2"), 0);
  expect_complete_manifest(base / "a", 0);
  EXPECT_EQ(slurp(base / "a" / "best_crf.txt"), slurp(base / "b" / "best_crf.txt"));
  EXPECT_EQ(slurp(base / "a" / "trace.csv"), slurp(base / "b" / "trace.csv"));
  std::istringstream trace(slurp(base / "a" / "trace.csv"));
  int lines = 0;
  for (std::string l; std::getline(trace, l);) ++lines;
  EXPECT_EQ(lines, 4);
  EXPECT_NO_THROW(load_crf_params(base / "a" / "best_crf.txt"));
}

TEST_F(Cli, TrainToyLossDecreasesAndZeroLrKeepsInit) {
  const std::string data = "--ct " + (ph() / "ct.mhd").string() + " --gt " + (ph() / "gt.mhd").string();
  const auto out = dir("train");
  ASSERT_EQ(run("train-toy " + data + " --layers 3 --hidden 4 --epochs 4 --batch 8 --lr 0.01 "
                "--augment-factor 0 --seed 2 --out " + out.string()),
            0);
  expect_complete_manifest(out, 0);
  std::istringstream trace(slurp(out / "loss_trace.csv"));
  std::string line;
  std::getline(trace, line);
  std::vector<double> loss;
  while (std::getline(trace, line)) loss.push_back(std::stod(line.substr(line.find(',') + 1)));
  ASSERT_EQ(loss.size(), 4u);
  for (std::size_t e = 1; e < loss.size(); ++e) EXPECT_LT(loss[e], loss[e - 1]) << e;
  const auto net = load_checkpoint(out / "model.toyfcn");
  EXPECT_EQ(net.layers().size(), 3u);

  const auto zero = dir("train_zero");
  ASSERT_EQ(run("train-toy " + data + " --layers 3 --hidden 4 --epochs 2 --lr 0 --augment-factor 1 "
                "--seed 2 --out " + zero.string()),
            0);
  EXPECT_EQ(load_checkpoint(zero / "model.toyfcn"), ToyNet<float>::random(2, 3, 4, 2, 1));

  // A checkpoint drives inference as a unary model.
  const auto inf = dir("train_infer");
  ASSERT_EQ(run("infer " + (ph() / "ct.mhd").string() + " --liver-model " + (out / "model.toyfcn").string() +
                " --lesion-probs " + (ph() / "oracle_probs.mhd").string() + " --stage2-size 32x32 --out " +
                inf.string()),
            0);
  EXPECT_EQ(manifest_value(inf, "liver_source"), "model:" + (out / "model.toyfcn").string());
}

TEST_F(Cli, ConfigFileAndUsageErrors) {
  const auto out = dir("config");
  fs::create_directories(out);
  std::ofstream(out / "pre.ini") << "[preprocess]\nwindow = \"-50,300\"\nno-equalize = true\n";
  ASSERT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --config " + (out / "pre.ini").string() +
                " --out " + out.string()),
            0);
  EXPECT_EQ(std::stod(manifest_value(out, "window_lo")), -50.0);
  EXPECT_EQ(manifest_value(out, "equalize"), "false");
  // Flags beat the config file.
  ASSERT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --config " + (out / "pre.ini").string() +
                " --window -100,200 --out " + out.string()),
            0);
  EXPECT_EQ(std::stod(manifest_value(out, "window_hi")), 200.0);

  const auto bad = dir("bad_flag");
  EXPECT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --bogus --out " + bad.string()), 2);
  expect_complete_manifest(bad, 2);
  EXPECT_EQ(run("preprocess " + (ph() / "ct.mhd").string() + " --window 5,1 --out " + bad.string()), 2);
  EXPECT_EQ(run("preprocess /nonexistent.mhd --out " + bad.string()), 3);
  expect_complete_manifest(bad, 3);
  EXPECT_EQ(run(""), 2);
}

}  // namespace
}  // namespace hepaseg
