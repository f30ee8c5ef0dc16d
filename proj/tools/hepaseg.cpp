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

// hepaseg command-line tool.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
// failure, 1 anything else. Every command that is given --out writes
// <out>/manifest.txt, also on failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hepaseg/hepaseg.hpp"
#include "hepaseg/png.hpp"

namespace fs = std::filesystem;
using namespace hepaseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

/// Collects manifest entries for one run.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& kv : kv_)
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    kv_.emplace_back(key, value);
  }
  void set(const std::string& key, double value) { set(key, format_real(value)); }
  void set_path(const std::string& key, const fs::path& p) { set(key, p.string()); }
  const KeyValues& entries() const { return kv_; }

 private:
  KeyValues kv_;
};

struct Common {
  int threads = 1;
  std::uint64_t seed = 0;
  std::string out;
};

std::pair<double, double> parse_window(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw UsageError("--window expects lo,hi");
  double lo, hi;
  try {
    lo = parse_real("--window", s.substr(0, comma));
    hi = parse_real("--window", s.substr(comma + 1));
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (!(lo < hi)) throw UsageError("--window lower bound must be below upper bound");
  return {lo, hi};
}

std::array<std::size_t, 2> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw UsageError("--stage2-size expects WxH");
  try {
    const long w = parse_integer("--stage2-size", s.substr(0, x));
    const long h = parse_integer("--stage2-size", s.substr(x + 1));
    if (w <= 0 || h <= 0) throw UsageError("--stage2-size must be positive");
    return {std::size_t(w), std::size_t(h)};
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

template <std::size_t N, typename T>
std::array<T, N> parse_tuple(const std::string& flag, const std::string& s) {
  std::array<T, N> out{};
  std::stringstream in(s);
  std::string tok;
  std::size_t k = 0;
  while (std::getline(in, tok, ',')) {
    if (k == N) throw UsageError(flag + " expects " + std::to_string(N) + " comma-separated values");
    try {
      if constexpr (std::is_integral_v<T>) {
        const long v = parse_integer(flag, tok);
        if (v <= 0) throw UsageError(flag + " values must be positive");
        out[k++] = T(v);
      } else {
        out[k++] = T(parse_real(flag, tok));
      }
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  if (k != N) throw UsageError(flag + " expects " + std::to_string(N) + " comma-separated values");
  return out;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out DIR is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string input;
  std::string window = "-100,400";
  bool no_equalize = false;
  int bins = 256;
};

void cmd_preprocess(const PreprocessArgs& a, const Common& c, Manifest& m) {
  const fs::path out = prepare_out(c.out);
  const auto [lo, hi] = parse_window(a.window);
  m.set_path("input", a.input);
  m.set("window_lo", lo);
  m.set("window_hi", hi);
  m.set("equalize", a.no_equalize ? "false" : "true");
  m.set("bins", std::to_string(a.bins));
  const auto t0 = std::chrono::steady_clock::now();
  const RealVolume img = load_intensity(a.input);
  RealVolume res = hu_window(img, lo, hi);
  if (!a.no_equalize) res = hist_equalize(res, a.bins, lo, hi);
  save_volume(res, out / "preprocessed.mhd");
  m.set_path("output", out / "preprocessed.mhd");
  m.set("timing_total_s", seconds_since(t0));
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string ct;
  std::string liver_probs, liver_model, lesion_probs, lesion_model;
  std::string crf;
  bool no_crf_liver = false, no_crf_lesion = false, crf_raw_hu = false;
  std::string window = "-100,400";
  bool no_equalize = false;
  std::string stage2_size = "256x256";
  double roi_pad_mm = 10.0;
  double threshold = 0.5;
  bool no_lcc = false;
};

std::unique_ptr<UnaryProvider> make_provider(const std::string& probs, const std::string& model,
                                             const char* stage, double lo, double hi, int threads,
                                             Manifest& m) {
  const std::string key = std::string(stage) + "_source";
  if (!probs.empty() == !model.empty())
    throw UsageError(std::string("give exactly one of --") + stage + "-probs or --" + stage + "-model");
  if (!probs.empty()) {
    m.set(key, "probs:" + probs);
    return std::make_unique<PrecomputedUnary>(load_as<ProbVolume>(probs), probs);
  }
  m.set(key, "model:" + model);
  return std::make_unique<ToyNetUnary>(load_checkpoint(model), lo, hi, threads, model);
}

void cmd_infer(const InferArgs& a, const Common& c, Manifest& m) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  CascadeConfig cfg;
  const auto [lo, hi] = parse_window(a.window);
  cfg.preprocess.window_lo = lo;
  cfg.preprocess.window_hi = hi;
  cfg.preprocess.equalize = !a.no_equalize;
  cfg.stage2_size = parse_size(a.stage2_size);
  cfg.roi_pad_mm = a.roi_pad_mm;
  cfg.liver_threshold = a.threshold;
  cfg.largest_component_only = !a.no_lcc;
  cfg.threads = c.threads;
  cfg.crf_liver = !a.no_crf_liver;
  cfg.crf_lesion = !a.no_crf_lesion;
  cfg.crf_intensity = a.crf_raw_hu ? CrfIntensity::kRaw : CrfIntensity::kWindowed;
  m.set_path("ct", a.ct);
  m.set("window_lo", lo);
  m.set("window_hi", hi);
  m.set("equalize", cfg.preprocess.equalize ? "true" : "false");
  m.set("stage2_size", std::to_string(cfg.stage2_size[0]) + "x" + std::to_string(cfg.stage2_size[1]));
  m.set("roi_pad_mm", cfg.roi_pad_mm);
  m.set("threshold", cfg.liver_threshold);
  m.set("largest_component_only", cfg.largest_component_only ? "true" : "false");
  if (!a.crf.empty()) {
    cfg.crf = load_crf_params(a.crf);
    m.set_path("crf_params", a.crf);
    for (const auto& [k, v] : to_key_values(*cfg.crf)) m.set("crf_" + k, v);
    m.set("crf_stages", std::string(cfg.crf_liver ? "liver" : "") +
                            (cfg.crf_liver && cfg.crf_lesion ? "," : "") +
                            (cfg.crf_lesion ? "lesion" : ""));
    m.set("crf_intensity", a.crf_raw_hu ? "raw" : "windowed");
  } else {
    m.set("crf_params", "none");
  }
  cfg.validate();
  const CtVolume ct = load_as<CtVolume>(a.ct);
  const auto liver = make_provider(a.liver_probs, a.liver_model, "liver", lo, hi, c.threads, m);
  const auto lesion = make_provider(a.lesion_probs, a.lesion_model, "lesion", lo, hi, c.threads, m);
  const CascadeResult r = run_cascade(ct, *liver, *lesion, cfg);

  save_volume(r.labels, out / "labels.mhd");
  save_volume(r.liver_probs, out / "liver_probs.mhd");
  save_volume(r.liver_mask, out / "liver_mask.mhd");
  save_volume(r.lesion_probs, out / "lesion_probs_roi.mhd");
  write_bbox(r.roi, out / "roi_bbox.txt");
  m.set_path("output_labels", out / "labels.mhd");
  m.set_path("output_liver_probs", out / "liver_probs.mhd");
  m.set_path("output_liver_mask", out / "liver_mask.mhd");
  m.set_path("output_lesion_probs_roi", out / "lesion_probs_roi.mhd");
  m.set_path("output_roi_bbox", out / "roi_bbox.txt");
  std::size_t counts[3] = {0, 0, 0};
  for (auto v : r.labels.storage()) ++counts[v];
  m.set("voxels_liver", std::to_string(counts[1]));
  m.set("voxels_lesion", std::to_string(counts[2]));
  m.set("timing_stage1_s", r.timings.stage1_s);
  m.set("timing_stage2_s", r.timings.stage2_s);
  m.set("timing_crf_s", r.timings.crf_s);
  m.set("timing_total_s", seconds_since(t0));
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt;
  std::string classes = "1,2";
  std::string id;
};

/// Returns true if every requested class was present in the reference.
bool cmd_eval(const EvalArgs& a, const Common& c, Manifest& m) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  m.set_path("pred", a.pred);
  m.set_path("gt", a.gt);
  m.set("classes", a.classes);
  const LabelVolume pred = load_as<LabelVolume>(a.pred);
  const LabelVolume gt = load_as<LabelVolume>(a.gt);
  require_same_grid(pred.grid(), gt.grid(), "eval");
  std::vector<int> classes;
  {
    std::stringstream in(a.classes);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      long v;
      try {
        v = parse_integer("--classes", tok);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      if (v < 1 || v > 255) throw UsageError("--classes entries must be labels in 1..255");
      classes.push_back(int(v));
    }
    if (classes.empty()) throw UsageError("--classes is empty");
  }
  const std::string id = a.id.empty() ? fs::path(a.pred).stem().string() : a.id;
  std::ostringstream csv;
  csv << kMetricsCsvHeader << '\n';
  bool complete = true;
  for (int cls : classes) {
    const MetricsReport r = evaluate(pred, gt, std::uint8_t(cls));
    csv << metrics_csv_row(id, cls, r) << '\n';
    if (!r.rvd_pct) {
      complete = false;
      std::cerr << "warning: class " << cls << " is absent from the reference; RVD/ASD/MSD undefined\n";
      m.set("missing_class_" + std::to_string(cls), "true");
    }
  }
  std::ofstream f(out / "metrics.csv", std::ios::trunc);
  if (!f) throw DataError("cannot write metrics.csv");
  f << csv.str();
  if (!f) throw DataError("write failed for metrics.csv");
  std::cout << csv.str();
  m.set_path("output", out / "metrics.csv");
  m.set("timing_total_s", seconds_since(t0));
  return complete;
}

// ---------------------------------------------------------------------------

struct OverlayArgs {
  std::string ct, pred, gt;
  long slice = -1;
  std::string png;
  std::string window = "-100,400";
};

void cmd_overlay(const OverlayArgs& a, const Common& c, Manifest& m) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto [lo, hi] = parse_window(a.window);
  m.set_path("ct", a.ct);
  m.set_path("pred", a.pred);
  m.set_path("gt", a.gt);
  m.set("slice", std::to_string(a.slice));
  if (a.slice < 0) throw UsageError("--slice must be nonnegative");
  const CtVolume ct = load_as<CtVolume>(a.ct);
  const LabelVolume pred = load_as<LabelVolume>(a.pred);
  const LabelVolume gt = load_as<LabelVolume>(a.gt);
  const Overlay ov = render_overlay(ct, pred, gt, std::size_t(a.slice), lo, hi);
  const fs::path png = a.png.empty() ? out / ("overlay_z" + std::to_string(a.slice) + ".png")
                                     : fs::path(a.png);
  write_png(ov.image, png);
  m.set_path("output", png);
  m.set("pixels_correct_liver", std::to_string(ov.counts.correct_liver));
  m.set("pixels_liver_error", std::to_string(ov.counts.liver_error));
  m.set("pixels_correct_lesion", std::to_string(ov.counts.correct_lesion));
  m.set("pixels_lesion_error", std::to_string(ov.counts.lesion_error));
  m.set("timing_total_s", seconds_since(t0));
}

// ---------------------------------------------------------------------------

struct TuneArgs {
  std::string cases;
  std::string space;
  int trials = 0;
  std::string window = "-100,400";
};

/// `name = low,high[,log|linear]` or a single value for a collapsed range.
ParamRange parse_range(const std::string& key, const std::string& v, ParamRange def) {
  std::stringstream in(v);
  std::string tok;
  std::vector<std::string> parts;
  while (std::getline(in, tok, ',')) {
    const auto b = tok.find_first_not_of(" \t");
    const auto e = tok.find_last_not_of(" \t");
    parts.push_back(b == std::string::npos ? "" : tok.substr(b, e - b + 1));
  }
  ParamRange r = def;
  if (parts.size() == 1) {
    r.low = r.high = parse_real(key, parts[0]);
    return r;
  }
  if (parts.size() < 2 || parts.size() > 3) throw DataError("bad range for " + key);
  r.low = parse_real(key, parts[0]);
  r.high = parse_real(key, parts[1]);
  if (parts.size() == 3) {
    if (parts[2] == "log") r.log_scale = true;
    else if (parts[2] == "linear") r.log_scale = false;
    else throw DataError("scale for " + key + " must be log or linear");
  }
  return r;
}

SearchSpace load_space(const fs::path& path) {
  SearchSpace s;
  for (const auto& [k, v] : read_key_values(path)) {
    if (k == "w_pos") s.w_pos = parse_range(k, v, s.w_pos);
    else if (k == "w_bil") s.w_bil = parse_range(k, v, s.w_bil);
    else if (k == "sigma_pos_mm") s.sigma_pos_mm = parse_range(k, v, s.sigma_pos_mm);
    else if (k == "sigma_bil_mm") s.sigma_bil_mm = parse_range(k, v, s.sigma_bil_mm);
    else if (k == "sigma_int") s.sigma_int = parse_range(k, v, s.sigma_int);
    else if (k == "trials") s.trials = int(parse_integer(k, v));
    else if (k == "seed") s.seed = std::uint64_t(parse_integer(k, v));
    else if (k == "iterations") s.iterations = int(parse_integer(k, v));
    else throw DataError("unknown search-space key '" + k + "'");
  }
  return s;
}

/// Case list: one case per line, `id unary.mhd image.mhd gt.mhd [class]`;
/// relative paths resolve against the list's directory.
std::vector<TuneCase> load_cases(const fs::path& path, double lo, double hi) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const fs::path dir = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : dir / p; };
  std::vector<TuneCase> cases;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string id, unary, image, gt, cls;
    if (!(ls >> id) || id[0] == '#') continue;
    if (!(ls >> unary >> image >> gt))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id unary image gt [class]");
    TuneCase c{id, load_as<ProbVolume>(resolve(unary)), hu_window(load_intensity(resolve(image)), lo, hi),
               load_as<LabelVolume>(resolve(gt)), std::nullopt};
    if (ls >> cls) {
      const long v = parse_integer("class", cls);
      if (v < 0 || v > 255) throw DataError("bad class on line " + std::to_string(lineno));
      c.cls = std::uint8_t(v);
    }
    cases.push_back(std::move(c));
  }
  if (cases.empty()) throw DataError("case list " + path.string() + " is empty");
  return cases;
}

void cmd_tune(const TuneArgs& a, const Common& c, Manifest& m, bool seed_given) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto [lo, hi] = parse_window(a.window);
  m.set_path("cases", a.cases);
  m.set("space", a.space.empty() ? std::string("default") : a.space);
  SearchSpace space = a.space.empty() ? SearchSpace{} : load_space(a.space);
  if (a.trials > 0) space.trials = a.trials;
  if (seed_given) space.seed = c.seed;
  space.validate();
  m.set("trials", std::to_string(space.trials));
  m.set("seed", std::to_string(space.seed));
  const auto cases = load_cases(a.cases, lo, hi);
  const double baseline = baseline_score(cases);
  const SearchResult r = random_search(space, cases, c.threads);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  save_crf_params(r.best, out / "best_crf.txt");
  write_trace_csv(r, cases, out / "trace.csv");
  m.set_path("output_best", out / "best_crf.txt");
  m.set_path("output_trace", out / "trace.csv");
  m.set("best_trial", std::to_string(r.best_trial));
  m.set("best_score", r.best_score);
  m.set("baseline_score", baseline);
  m.set("warnings", std::to_string(r.warnings.size()));
  m.set("timing_total_s", seconds_since(t0));
  std::cout << "best trial " << r.best_trial << " score " << r.best_score << " (baseline " << baseline
            << ")\n";
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string spec;
  std::string dims;
  std::string spacing;
  double noise = -1.0;
  double oracle_blur_mm = 1.0;
  double oracle_error_rate = 0.0;
  double oracle_smoothing = 0.1;
  bool random_geometry = false;
};

void cmd_phantom(const PhantomArgs& a, const Common& c, Manifest& m, bool seed_given) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  PhantomSpec spec;
  if (!a.spec.empty()) {
    spec = load_phantom_spec(a.spec);
    m.set_path("spec", a.spec);
    if (!a.dims.empty() || !a.spacing.empty() || a.random_geometry)
      throw UsageError("--dims/--spacing/--random cannot be combined with --spec");
    if (seed_given) spec.seed = c.seed;
  } else {
    Grid g{{64, 64, 64}, {1.0, 1.0, 1.0}};
    if (!a.dims.empty()) {
      const auto d = parse_tuple<3, std::size_t>("--dims", a.dims);
      g.dims = {d[0], d[1], d[2]};
    }
    if (!a.spacing.empty()) {
      const auto s = parse_tuple<3, double>("--spacing", a.spacing);
      g.spacing = {s[0], s[1], s[2]};
    }
    g.validate();
    spec = a.random_geometry ? random_phantom(g, c.seed) : standard_phantom(g, c.seed);
  }
  if (a.noise >= 0.0) spec.noise_sigma = a.noise;
  spec.validate();
  const Phantom ph = generate_phantom(spec);
  save_volume(ph.ct, out / "ct.mhd");
  save_volume(ph.gt, out / "gt.mhd");
  write_key_values_atomic(out / "phantom_spec.txt", to_key_values(spec));
  OracleOptions o;
  o.blur_sigma_mm = a.oracle_blur_mm;
  o.error_rate = a.oracle_error_rate;
  o.smoothing = a.oracle_smoothing;
  o.seed = c.seed + 1;
  const ProbVolume probs = oracle_unary(ph.gt, o);
  save_volume(probs, out / "oracle_probs.mhd");
  m.set_path("output_ct", out / "ct.mhd");
  m.set_path("output_gt", out / "gt.mhd");
  m.set_path("output_spec", out / "phantom_spec.txt");
  m.set_path("output_oracle_probs", out / "oracle_probs.mhd");
  m.set("seed", std::to_string(spec.seed));
  m.set("lesions", std::to_string(spec.lesions.size()));
  m.set("oracle_blur_mm", o.blur_sigma_mm);
  m.set("oracle_error_rate", o.error_rate);
  m.set("oracle_smoothing", o.smoothing);
  m.set("timing_total_s", seconds_since(t0));
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> ct, gt;
  std::string target = "liver";
  int layers = 4, hidden = 16, epochs = 10, batch = 4;
  double lr = 0.001, momentum = 0.8, weight_decay = 0.0005;
  bool no_normalize_weights = false;
  int augment_factor = 0;
  int max_shift = 20;
  double max_rot = 10.0, aug_noise = 10.0;
  std::string window = "-100,400";
  bool no_equalize = false;
  std::string stage2_size = "64x64";
  double roi_pad_mm = 10.0;
};

void cmd_train(const TrainArgs& a, const Common& c, Manifest& m) {
  const fs::path out = prepare_out(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  if (a.ct.empty() || a.ct.size() != a.gt.size())
    throw UsageError("give the same positive number of --ct and --gt volumes");
  if (a.target != "liver" && a.target != "lesion") throw UsageError("--target must be liver or lesion");
  if (a.augment_factor < 0) throw UsageError("--augment-factor must be nonnegative");
  const auto [lo, hi] = parse_window(a.window);
  PreprocessOptions pre{lo, hi, !a.no_equalize, 256};
  const bool lesion = a.target == "lesion";
  const auto s2 = parse_size(a.stage2_size);
  m.set("target", a.target);
  for (std::size_t k = 0; k < a.ct.size(); ++k) {
    m.set_path("ct_" + std::to_string(k), a.ct[k]);
    m.set_path("gt_" + std::to_string(k), a.gt[k]);
  }

  std::vector<TrainSample> data;
  for (std::size_t k = 0; k < a.ct.size(); ++k) {
    const CtVolume ct = load_as<CtVolume>(a.ct[k]);
    const LabelVolume gt = load_as<LabelVolume>(a.gt[k]);
    require_same_dims(ct.grid(), gt.grid(), "training pair");
    RealVolume img = preprocess(ct, pre);
    LabelVolume target(gt.grid());
    for (std::size_t i = 0; i < gt.size(); ++i) target[i] = lesion ? gt[i] == kLesion : gt[i] != 0;
    if (lesion) {
      // Train where the lesion stage runs: the padded liver box, resampled in-plane.
      LabelVolume liver(gt.grid());
      for (std::size_t i = 0; i < gt.size(); ++i) liver[i] = gt[i] != 0;
      const BoundingBox box = pad_box(mask_bounds(liver), gt.grid(), a.roi_pad_mm);
      const Dims dims{s2[0], s2[1], box.extent()[2]};
      img = resample(crop(img, box), dims, Interp::kLinear);
      target = resample(crop(target, box), dims, Interp::kNearest);
    }
    for (std::size_t z = 0; z < img.dims()[2]; ++z) {
      const Image2D<float> slice = extract_slice(img, z);
      const Image2D<std::uint8_t> lab = extract_slice(target, z);
      data.push_back({normalize_input(slice, lo, hi), lab});
      for (int r = 0; r < a.augment_factor; ++r) {
        AugmentParams ap{a.max_shift, a.max_rot, a.aug_noise,
                         c.seed * 1000003ULL + (k * 65536 + z) * 64 + std::uint64_t(r)};
        const AugmentedSlice aug = augment(slice, lab, ap);
        data.push_back({normalize_input(aug.image, lo, hi), aug.labels});
      }
    }
  }
  std::vector<Image2D<std::uint8_t>> labels;
  for (const auto& s : data) labels.push_back(s.target);
  const ClassWeights w = class_weights(labels, 2);

  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.momentum = a.momentum;
  cfg.weight_decay = a.weight_decay;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = c.seed;
  cfg.normalize_weights = !a.no_normalize_weights;
  cfg.validate();
  ToyNet<float> net = ToyNet<float>::random(c.seed, a.layers, a.hidden, 2, 1);
  const auto trace = train(net, data, cfg, w);
  save_checkpoint(net, out / "model.toyfcn");
  {
    std::ofstream f(out / "loss_trace.csv", std::ios::trunc);
    if (!f) throw DataError("cannot write loss_trace.csv");
    f << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < trace.size(); ++e) f << e << ',' << format_real(trace[e]) << '\n';
  }
  m.set_path("output_model", out / "model.toyfcn");
  m.set_path("output_loss_trace", out / "loss_trace.csv");
  m.set("slices", std::to_string(data.size()));
  m.set("layers", std::to_string(a.layers));
  m.set("hidden", std::to_string(a.hidden));
  m.set("epochs", std::to_string(cfg.epochs));
  m.set("batch_size", std::to_string(cfg.batch_size));
  m.set("learning_rate", cfg.learning_rate);
  m.set("momentum", cfg.momentum);
  m.set("weight_decay", cfg.weight_decay);
  m.set("normalize_weights", cfg.normalize_weights ? "true" : "false");
  m.set("class_weight_0", w.w[0]);
  m.set("class_weight_1", w.w[1]);
  m.set("augment_factor", std::to_string(a.augment_factor));
  if (!trace.empty()) {
    m.set("loss_first", trace.front());
    m.set("loss_last", trace.back());
  }
  m.set("timing_total_s", seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  const auto t_start = std::chrono::steady_clock::now();
  CLI::App app{"hepaseg: cascaded liver/lesion segmentation with a dense 3-D CRF"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "Read option defaults from a TOML/INI file (flags take precedence)");
  app.require_subcommand(1);
  app.fallthrough();  // lets --config follow the subcommand name
  Common common;
  auto add_common = [&](CLI::App* sub, bool with_threads) {
    sub->add_option("--out", common.out, "Output directory")->required();
    sub->add_option("--seed", common.seed, "Random seed");
    if (with_threads) sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  PreprocessArgs pre;
  auto* s_pre = app.add_subcommand("preprocess", "HU windowing and per-slice histogram equalization");
  s_pre->add_option("input", pre.input, "Input CT (.mhd)")->required();
  s_pre->add_option("--window", pre.window, "HU window lo,hi");
  s_pre->add_flag("--no-equalize", pre.no_equalize, "Window only");
  s_pre->add_option("--bins", pre.bins, "Histogram bins")->check(CLI::PositiveNumber);
  add_common(s_pre, false);

  InferArgs inf;
  auto* s_inf = app.add_subcommand("infer", "Run the two-stage cascade with optional CRF refinement");
  s_inf->add_option("ct", inf.ct, "Input CT (.mhd, MET_SHORT)")->required();
  s_inf->add_option("--liver-probs", inf.liver_probs, "Precomputed liver probability map");
  s_inf->add_option("--liver-model", inf.liver_model, "Liver network checkpoint");
  s_inf->add_option("--lesion-probs", inf.lesion_probs, "Precomputed lesion probability map");
  s_inf->add_option("--lesion-model", inf.lesion_model, "Lesion network checkpoint");
  s_inf->add_option("--crf", inf.crf, "CRF parameter file (enables refinement)");
  s_inf->add_flag("--no-crf-liver", inf.no_crf_liver, "Skip CRF on the liver stage");
  s_inf->add_flag("--no-crf-lesion", inf.no_crf_lesion, "Skip CRF on the lesion stage");
  s_inf->add_flag("--crf-raw-hu", inf.crf_raw_hu, "CRF intensity feature from raw HU instead of windowed");
  s_inf->add_option("--window", inf.window, "HU window lo,hi");
  s_inf->add_flag("--no-equalize", inf.no_equalize, "Skip histogram equalization");
  s_inf->add_option("--stage2-size", inf.stage2_size, "Lesion-stage in-plane size WxH");
  s_inf->add_option("--roi-pad-mm", inf.roi_pad_mm, "Padding around the liver box (mm)");
  s_inf->add_option("--threshold", inf.threshold, "Liver probability threshold");
  s_inf->add_flag("--no-lcc", inf.no_lcc, "Keep all liver components");
  add_common(s_inf, true);

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Segmentation metrics as CSV");
  s_ev->add_option("pred", ev.pred, "Predicted labels (.mhd)")->required();
  s_ev->add_option("gt", ev.gt, "Reference labels (.mhd)")->required();
  s_ev->add_option("--classes", ev.classes, "Comma-separated labels to score");
  s_ev->add_option("--id", ev.id, "Volume id for the report");
  add_common(s_ev, false);

  OverlayArgs ov;
  auto* s_ov = app.add_subcommand("overlay", "Render a color overlay of one slice to PNG");
  s_ov->add_option("ct", ov.ct, "CT (.mhd)")->required();
  s_ov->add_option("pred", ov.pred, "Predicted labels (.mhd)")->required();
  s_ov->add_option("gt", ov.gt, "Reference labels (.mhd)")->required();
  s_ov->add_option("--slice", ov.slice, "Slice index (z)")->required();
  s_ov->add_option("--png", ov.png, "Output PNG path (default <out>/overlay_z<slice>.png)");
  s_ov->add_option("--window", ov.window, "Display window lo,hi");
  add_common(s_ov, false);

  TuneArgs tu;
  auto* s_tu = app.add_subcommand("tune", "Random search over CRF parameters");
  s_tu->add_option("--cases", tu.cases, "Case list file")->required();
  s_tu->add_option("--space", tu.space, "Search-space file");
  s_tu->add_option("--trials", tu.trials, "Number of trials (overrides the space file)");
  s_tu->add_option("--window", tu.window, "HU window lo,hi for the intensity feature");
  add_common(s_tu, true);

  PhantomArgs ph;
  auto* s_ph = app.add_subcommand("phantom", "Generate a synthetic phantom and oracle probabilities");
  s_ph->add_option("--spec", ph.spec, "Phantom spec file (key=value)");
  s_ph->add_option("--dims", ph.dims, "Volume size x,y,z");
  s_ph->add_option("--spacing", ph.spacing, "Voxel spacing x,y,z in mm");
  s_ph->add_option("--noise", ph.noise, "Noise sigma in HU");
  s_ph->add_flag("--random", ph.random_geometry, "Seeded random liver/lesion geometry");
  s_ph->add_option("--oracle-blur-mm", ph.oracle_blur_mm, "Oracle probability blur (mm)");
  s_ph->add_option("--oracle-error-rate", ph.oracle_error_rate, "Fraction of voxels with swapped top classes");
  s_ph->add_option("--oracle-smoothing", ph.oracle_smoothing, "Uniform mixing weight for the oracle");
  add_common(s_ph, false);

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train-toy", "Train the small unary network");
  s_tr->add_option("--ct", tr.ct, "Training CT volumes")->required();
  s_tr->add_option("--gt", tr.gt, "Matching label volumes")->required();
  s_tr->add_option("--target", tr.target, "liver or lesion");
  s_tr->add_option("--layers", tr.layers, "Convolution layers including the classifier")->check(CLI::PositiveNumber);
  s_tr->add_option("--hidden", tr.hidden, "Hidden channels")->check(CLI::PositiveNumber);
  s_tr->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  s_tr->add_option("--batch", tr.batch, "Slices per batch")->check(CLI::PositiveNumber);
  s_tr->add_option("--lr", tr.lr, "Learning rate");
  s_tr->add_option("--momentum", tr.momentum, "Momentum");
  s_tr->add_option("--weight-decay", tr.weight_decay, "L2 weight decay");
  s_tr->add_flag("--no-normalize-weights", tr.no_normalize_weights, "Use raw inverse-count class weights");
  s_tr->add_option("--augment-factor", tr.augment_factor, "Augmented copies per slice");
  s_tr->add_option("--max-shift", tr.max_shift, "Augmentation shift bound (voxels)");
  s_tr->add_option("--max-rot", tr.max_rot, "Augmentation rotation bound (degrees)");
  s_tr->add_option("--aug-noise", tr.aug_noise, "Augmentation noise sigma (HU)");
  s_tr->add_option("--window", tr.window, "HU window lo,hi");
  s_tr->add_flag("--no-equalize", tr.no_equalize, "Skip histogram equalization");
  s_tr->add_option("--stage2-size", tr.stage2_size, "In-plane size of lesion training crops WxH");
  s_tr->add_option("--roi-pad-mm", tr.roi_pad_mm, "Padding around the liver box for lesion crops");
  add_common(s_tr, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    // Still leave a manifest behind when the output directory is recognizable.
    for (int k = 1; k + 1 < argc; ++k) {
      if (std::string(argv[k]) != "--out") continue;
      Manifest m;
      m.set("tool", "hepaseg");
      m.set("version", kVersion);
      m.set("command", argc > 1 ? argv[1] : "");
      std::string args;
      for (int j = 1; j < argc; ++j) args += (j > 1 ? " " : "") + std::string(argv[j]);
      m.set("args", args);
      m.set("out", argv[k + 1]);
      m.set("status", "error");
      m.set("exit_code", std::to_string(kExitUsage));
      m.set("error", e.what());
      m.set("timing_total_s", seconds_since(t_start));
      try {
        fs::create_directories(argv[k + 1]);
        write_key_values_atomic(fs::path(argv[k + 1]) / "manifest.txt", m.entries());
      } catch (const std::exception&) {
      }
      break;
    }
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest m;
  m.set("tool", "hepaseg");
  m.set("version", kVersion);
  m.set("command", sub->get_name());
  {
    std::string args;
    for (int k = 1; k < argc; ++k) args += (k > 1 ? " " : "") + std::string(argv[k]);
    m.set("args", args);
  }
  {
    const CLI::Option* cfg = app.get_config_ptr();
    m.set("config", cfg && cfg->count() > 0 ? cfg->as<std::string>() : std::string("none"));
  }
  m.set("threads", std::to_string(common.threads));
  m.set("seed", std::to_string(common.seed));
  m.set("out", common.out);
  const bool seed_given = sub->count("--seed") > 0;

  int code = kExitOk;
  std::string error;
  try {
    const std::string name = sub->get_name();
    if (name == "preprocess") cmd_preprocess(pre, common, m);
    else if (name == "infer") cmd_infer(inf, common, m);
    else if (name == "eval") code = cmd_eval(ev, common, m) ? kExitOk : kExitData;
    else if (name == "overlay") cmd_overlay(ov, common, m);
    else if (name == "tune") cmd_tune(tu, common, m, seed_given);
    else if (name == "phantom") cmd_phantom(ph, common, m, seed_given);
    else if (name == "train-toy") cmd_train(tr, common, m);
    if (code == kExitData) error = "reference lacks a requested class";
  } catch (const UsageError& e) {
    code = kExitUsage;
    error = e.what();
  } catch (const DataError& e) {
    code = kExitData;
    error = e.what();
  } catch (const NumericalError& e) {
    code = kExitNumerical;
    error = e.what();
  } catch (const std::exception& e) {
    code = 1;
    error = e.what();
  }
  if (!error.empty()) std::cerr << "hepaseg " << sub->get_name() << ": error: " << error << '\n';
  m.set("status", code == kExitOk ? "ok" : "error");
  m.set("exit_code", std::to_string(code));
  if (!error.empty()) m.set("error", error);
  // Failed runs never reach the command's own total; cover them here.
  if (code != kExitOk) m.set("timing_total_s", seconds_since(t_start));
  if (!common.out.empty()) {
    try {
      std::error_code ec;
      fs::create_directories(common.out, ec);
      write_key_values_atomic(fs::path(common.out) / "manifest.txt", m.entries());
    } catch (const std::exception& e) {
      std::cerr << "hepaseg: cannot write manifest: " << e.what() << '\n';
      if (code == kExitOk) code = kExitData;
    }
  }
  return code;
}
