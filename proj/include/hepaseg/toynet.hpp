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

// A small fully convolutional network used as a trainable unary model:
// (layers - 1) 3x3 convolutions with ReLU, then a 1x1 convolution to class
// logits, then a per-pixel softmax. Zero padding keeps the spatial size.
//
// Training uses the class-weighted binary cross-entropy
//   L = -(1/n) sum_i w_i [t_i log P_i + (1 - t_i) log(1 - P_i)]
// with P the foreground probability, clamped to [1e-7, 1 - 1e-7], and n the
// number of pixels in the batch.

#ifndef HEPASEG_TOYNET_HPP
#define HEPASEG_TOYNET_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/preprocess.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

inline constexpr double kProbEpsilon = 1e-7;

template <typename Real>
struct ConvLayer {
  int in = 0;
  int out = 0;
  int kernel = 3;
  std::vector<Real> weights;  // [out][in][ky][kx]
  std::vector<Real> bias;     // [out]

  std::size_t weight_count() const { return std::size_t(out) * in * kernel * kernel; }
  std::size_t param_count() const { return weight_count() + std::size_t(out); }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Class-major per-pixel distribution: p[c * width * height + y * width + x].
template <typename Real>
struct PixelProbs {
  std::size_t classes = 0, width = 0, height = 0;
  std::vector<Real> p;

  Real at(std::size_t c, std::size_t i) const { return p[c * width * height + i]; }
};

struct ClassWeights {
  std::vector<double> w;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dP per pixel
};

/// Weighted binary cross-entropy and its derivative in P.
inline LossResult weighted_ce_loss(std::span<const double> p, std::span<const double> target,
                                   std::span<const double> w, double n = 0.0) {
  if (p.size() != target.size() || p.size() != w.size()) throw UsageError("loss inputs differ in size");
  if (n <= 0.0) n = double(p.size());
  LossResult r;
  r.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(w[i] > 0.0)) throw UsageError("loss weights must be positive");
    const double pi = std::clamp(p[i], kProbEpsilon, 1.0 - kProbEpsilon);
    const double t = target[i];
    r.loss -= w[i] * (t * std::log(pi) + (1.0 - t) * std::log(1.0 - pi));
    r.grad[i] = -(w[i] / n) * (t / pi - (1.0 - t) / (1.0 - pi));
  }
  r.loss /= n;
  return r;
}

/// w[k] = 1 / (number of pixels labelled k across all inputs).
inline ClassWeights class_weights(const std::vector<std::span<const std::uint8_t>>& labels,
                                  std::size_t classes) {
  std::vector<std::size_t> count(classes, 0);
  for (const auto& l : labels)
    for (auto v : l) {
      if (v >= classes) throw DataError("label " + std::to_string(v) + " exceeds class count");
      ++count[v];
    }
  ClassWeights cw;
  for (std::size_t k = 0; k < classes; ++k) {
    if (count[k] == 0)
      throw DataError("class " + std::to_string(k) + " is absent; its weight would be infinite");
    cw.w.push_back(1.0 / double(count[k]));
  }
  return cw;
}

inline ClassWeights class_weights(const std::vector<LabelVolume>& labels, std::size_t classes) {
  std::vector<std::span<const std::uint8_t>> spans;
  for (const auto& l : labels) spans.push_back(l.data());
  return class_weights(spans, classes);
}

inline ClassWeights class_weights(const std::vector<Image2D<std::uint8_t>>& labels,
                                  std::size_t classes) {
  std::vector<std::span<const std::uint8_t>> spans;
  for (const auto& l : labels) spans.push_back(l.data);
  return class_weights(spans, classes);
}

template <typename Real = float>
class ToyNet {
 public:
  ToyNet() = default;
  explicit ToyNet(std::vector<ConvLayer<Real>> layers, bool relu = true)
      : layers_(std::move(layers)), relu_(relu) {
    if (layers_.empty()) throw UsageError("a network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.in <= 0 || L.out <= 0 || L.kernel <= 0 || L.kernel % 2 == 0)
        throw UsageError("bad layer shape");
      if (L.weights.size() != L.weight_count() || L.bias.size() != std::size_t(L.out))
        throw UsageError("layer parameter count mismatch");
      if (l > 0 && L.in != layers_[l - 1].out) throw UsageError("layer channel mismatch");
    }
    if (classes() < 2) throw UsageError("a network needs at least 2 output classes");
  }

  /// He-initialised network; `layers` counts all convolutions including the
  /// final 1x1 classifier.
  static ToyNet random(std::uint64_t seed, int layers = 4, int hidden = 16, int classes = 2,
                       int in_channels = 1, bool relu = true) {
    if (layers < 1 || hidden < 1 || classes < 2 || in_channels < 1)
      throw UsageError("bad network shape");
    std::mt19937_64 rng(seed);
    std::vector<ConvLayer<Real>> ls;
    int in = in_channels;
    for (int l = 0; l < layers; ++l) {
      ConvLayer<Real> L;
      const bool last = l == layers - 1;
      L.in = in;
      L.out = last ? classes : hidden;
      L.kernel = last ? 1 : 3;
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (L.in * L.kernel * L.kernel)));
      L.weights.resize(L.weight_count());
      for (auto& w : L.weights) w = static_cast<Real>(nd(rng));
      L.bias.assign(std::size_t(L.out), Real(0));
      in = L.out;
      ls.push_back(std::move(L));
    }
    return ToyNet(std::move(ls), relu);
  }

  const std::vector<ConvLayer<Real>>& layers() const { return layers_; }
  std::vector<ConvLayer<Real>>& layers() { return layers_; }
  bool relu() const { return relu_; }
  int in_channels() const { return layers_.front().in; }
  int classes() const { return layers_.back().out; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& L : layers_) n += L.param_count();
    return n;
  }

  /// Flattened parameter views in declaration order (weights then bias).
  std::vector<Real*> param_pointers() {
    std::vector<Real*> out;
    for (auto& L : layers_) {
      for (auto& w : L.weights) out.push_back(&w);
      for (auto& b : L.bias) out.push_back(&b);
    }
    return out;
  }

  template <typename Other>
  ToyNet<Other> cast() const {
    std::vector<ConvLayer<Other>> ls;
    for (const auto& L : layers_) {
      ConvLayer<Other> o{L.in, L.out, L.kernel, {}, {}};
      o.weights.assign(L.weights.begin(), L.weights.end());
      o.bias.assign(L.bias.begin(), L.bias.end());
      ls.push_back(std::move(o));
    }
    return ToyNet<Other>(std::move(ls), relu_);
  }

  /// Cached activations of one forward pass.
  struct Trace {
    std::size_t width = 0, height = 0;
    std::vector<std::vector<Real>> acts;  // acts[0] = input, acts[l+1] = output of layer l
    std::vector<std::vector<Real>> pre;   // pre-activation of hidden layers
    PixelProbs<Real> probs;
  };

  Trace forward_trace(std::span<const Real> input, std::size_t width, std::size_t height) const {
    if (input.size() != std::size_t(in_channels()) * width * height)
      throw DataError("input channel count does not match the network");
    Trace t;
    t.width = width;
    t.height = height;
    t.acts.emplace_back(input.begin(), input.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<Real> out = conv_forward(layers_[l], t.acts.back(), width, height);
      if (l + 1 < layers_.size()) {
        t.pre.push_back(out);
        if (relu_)
          for (auto& v : out) v = v > Real(0) ? v : Real(0);
      }
      t.acts.push_back(std::move(out));
    }
    t.probs = softmax(t.acts.back(), std::size_t(classes()), width, height);
    return t;
  }

  PixelProbs<Real> forward(const Image2D<float>& image) const {
    std::vector<Real> in(image.data.begin(), image.data.end());
    return forward_trace(in, image.width, image.height).probs;
  }

  /// Gradients of all parameters given dL/dlogits, in param_pointers() order.
  std::vector<Real> backward(const Trace& t, std::vector<Real> dlogits) const {
    const std::size_t w = t.width, h = t.height;
    std::vector<std::vector<Real>> grads(layers_.size());
    std::vector<Real> dout = std::move(dlogits);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      if (l + 1 < layers_.size() && relu_) {
        const auto& pre = t.pre[l];
        for (std::size_t i = 0; i < dout.size(); ++i)
          if (!(pre[i] > Real(0))) dout[i] = Real(0);
      }
      std::vector<Real> din;
      grads[l] = conv_backward(L, t.acts[l], dout, w, h, l > 0 ? &din : nullptr);
      dout = std::move(din);
    }
    std::vector<Real> flat;
    for (auto& g : grads) flat.insert(flat.end(), g.begin(), g.end());
    return flat;
  }

 private:
  static std::vector<Real> conv_forward(const ConvLayer<Real>& L, const std::vector<Real>& in,
                                        std::size_t w, std::size_t h) {
    const std::size_t hw = w * h;
    const long p = L.kernel / 2;
    std::vector<Real> out(std::size_t(L.out) * hw);
    for (int o = 0; o < L.out; ++o) {
      Real* dst = &out[std::size_t(o) * hw];
      std::fill(dst, dst + hw, L.bias[std::size_t(o)]);
      for (int i = 0; i < L.in; ++i) {
        const Real* src = &in[std::size_t(i) * hw];
        for (int ky = 0; ky < L.kernel; ++ky)
          for (int kx = 0; kx < L.kernel; ++kx) {
            const Real k = L.weights[((std::size_t(o) * L.in + i) * L.kernel + ky) * L.kernel + kx];
            const long dy = ky - p, dx = kx - p;
            for (long y = std::max(0L, -dy); y < std::min(long(h), long(h) - dy); ++y) {
              const long x0 = std::max(0L, -dx), x1 = std::min(long(w), long(w) - dx);
              Real* row = dst + y * long(w);
              const Real* srow = src + (y + dy) * long(w) + dx;
              for (long x = x0; x < x1; ++x) row[x] += k * srow[x];
            }
          }
      }
    }
    return out;
  }

  static std::vector<Real> conv_backward(const ConvLayer<Real>& L, const std::vector<Real>& in,
                                         const std::vector<Real>& dout, std::size_t w,
                                         std::size_t h, std::vector<Real>* din) {
    const std::size_t hw = w * h;
    const long p = L.kernel / 2;
    std::vector<Real> g(L.param_count(), Real(0));
    if (din) din->assign(std::size_t(L.in) * hw, Real(0));
    for (int o = 0; o < L.out; ++o) {
      const Real* go = &dout[std::size_t(o) * hw];
      Real bsum = 0;
      for (std::size_t q = 0; q < hw; ++q) bsum += go[q];
      g[L.weight_count() + std::size_t(o)] = bsum;
      for (int i = 0; i < L.in; ++i) {
        const Real* src = &in[std::size_t(i) * hw];
        for (int ky = 0; ky < L.kernel; ++ky)
          for (int kx = 0; kx < L.kernel; ++kx) {
            const std::size_t widx = ((std::size_t(o) * L.in + i) * L.kernel + ky) * L.kernel + kx;
            const Real k = L.weights[widx];
            const long dy = ky - p, dx = kx - p;
            Real acc = 0;
            for (long y = std::max(0L, -dy); y < std::min(long(h), long(h) - dy); ++y) {
              const long x0 = std::max(0L, -dx), x1 = std::min(long(w), long(w) - dx);
              const Real* grow = go + y * long(w);
              const Real* srow = src + (y + dy) * long(w) + dx;
              for (long x = x0; x < x1; ++x) acc += grow[x] * srow[x];
              if (din) {
                Real* drow = din->data() + std::size_t(i) * hw + (y + dy) * long(w) + dx;
                for (long x = x0; x < x1; ++x) drow[x] += k * grow[x];
              }
            }
            g[widx] = acc;
          }
      }
    }
    return g;
  }

  static PixelProbs<Real> softmax(const std::vector<Real>& logits, std::size_t classes,
                                  std::size_t w, std::size_t h) {
    const std::size_t hw = w * h;
    PixelProbs<Real> out{classes, w, h, std::vector<Real>(classes * hw)};
    for (std::size_t q = 0; q < hw; ++q) {
      Real m = logits[q];
      for (std::size_t c = 1; c < classes; ++c) m = std::max(m, logits[c * hw + q]);
      Real s = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const Real e = std::exp(logits[c * hw + q] - m);
        out.p[c * hw + q] = e;
        s += e;
      }
      for (std::size_t c = 0; c < classes; ++c) out.p[c * hw + q] /= s;
    }
    return out;
  }

  std::vector<ConvLayer<Real>> layers_;
  bool relu_ = true;

 public:
  friend bool operator==(const ToyNet&, const ToyNet&) = default;
};

/// Loss and dL/dlogits of a two-class net on a batch of slices. Weights are
/// looked up per pixel by ground-truth class; n defaults to the batch pixel
/// count.
template <typename Real>
struct BatchLoss {
  double loss = 0.0;
  std::vector<std::vector<Real>> dlogits;
};

template <typename Real>
BatchLoss<Real> binary_batch_loss(const std::vector<const PixelProbs<Real>*>& probs,
                                  const std::vector<const Image2D<std::uint8_t>*>& targets,
                                  const ClassWeights& weights) {
  if (weights.w.size() < 2) throw UsageError("binary loss needs two class weights");
  double n = 0.0;
  for (const auto* t : targets) n += double(t->size());
  BatchLoss<Real> out;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    const auto& P = *probs[b];
    const auto& T = *targets[b];
    if (P.classes != 2) throw UsageError("training requires a two-class network");
    const std::size_t hw = P.width * P.height;
    if (T.size() != hw) throw DataError("label slice does not match image size");
    std::vector<Real> dl(2 * hw);
    for (std::size_t q = 0; q < hw; ++q) {
      const double t = T.data[q] ? 1.0 : 0.0;
      const double w = weights.w[T.data[q] ? 1 : 0];
      const double raw = double(P.p[hw + q]);
      const double pc = std::clamp(raw, kProbEpsilon, 1.0 - kProbEpsilon);
      out.loss -= w * (t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
      // The clamp has zero slope outside its range.
      const double dldp =
          (raw > kProbEpsilon && raw < 1.0 - kProbEpsilon) ? -(w / n) * (t / pc - (1.0 - t) / (1.0 - pc)) : 0.0;
      const double p1 = raw, p0 = double(P.p[q]);
      // softmax Jacobian: dp1/dz1 = p1 p0, dp1/dz0 = -p1 p0
      dl[hw + q] = static_cast<Real>(dldp * p1 * p0);
      dl[q] = static_cast<Real>(-dldp * p1 * p0);
    }
    out.dlogits.push_back(std::move(dl));
  }
  out.loss /= n;
  return out;
}

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.8;
  double weight_decay = 0.0005;
  int epochs = 10;
  int batch_size = 4;
  std::uint64_t seed = 0;
  /// Multiplies the class weights by a common factor so the mean per-pixel
  /// weight is 1. Equivalent to rescaling the learning rate; inverse-count
  /// weights otherwise make gradients vanishingly small.
  bool normalize_weights = true;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw UsageError("learning rate must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be nonnegative");
    if (epochs < 0 || batch_size < 1) throw UsageError("bad epoch or batch size");
  }
};

struct TrainSample {
  Image2D<float> image;          // network input
  Image2D<std::uint8_t> target;  // 0 / 1
};

/// SGD with momentum and L2 weight decay. Returns the per-pixel mean loss of
/// each epoch (batch losses weighted by batch size).
template <typename Real>
std::vector<double> train(ToyNet<Real>& net, const std::vector<TrainSample>& data,
                          const TrainConfig& cfg, ClassWeights weights) {
  cfg.validate();
  if (data.empty()) throw UsageError("training set is empty");
  if (net.classes() != 2 || net.in_channels() != 1)
    throw UsageError("training expects a single-channel two-class network");
  if (weights.w.size() != 2) throw UsageError("training expects two class weights");
  if (cfg.normalize_weights) {
    std::size_t pos = 0, total = 0;
    for (const auto& s : data) {
      total += s.target.size();
      for (auto v : s.target.data) pos += v ? 1 : 0;
    }
    const double mean = (weights.w[1] * double(pos) + weights.w[0] * double(total - pos)) / double(total);
    for (auto& w : weights.w) w /= mean;
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto params = net.param_pointers();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0, pixels = 0.0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<typename ToyNet<Real>::Trace> traces;
      std::vector<const PixelProbs<Real>*> probs;
      std::vector<const Image2D<std::uint8_t>*> targets;
      traces.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data[order[k]];
        std::vector<Real> in(s.image.data.begin(), s.image.data.end());
        traces.push_back(net.forward_trace(in, s.image.width, s.image.height));
        targets.push_back(&s.target);
      }
      for (const auto& t : traces) probs.push_back(&t.probs);
      auto bl = binary_batch_loss(probs, targets, weights);
      if (!std::isfinite(bl.loss))
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                             ": non-finite loss");
      std::vector<double> grad(params.size(), 0.0);
      for (std::size_t b = 0; b < traces.size(); ++b) {
        const auto g = net.backward(traces[b], std::move(bl.dlogits[b]));
        for (std::size_t k = 0; k < g.size(); ++k) grad[k] += double(g[k]);
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        const double theta = double(*params[k]);
        velocity[k] = cfg.momentum * velocity[k] -
                      cfg.learning_rate * (grad[k] + cfg.weight_decay * theta);
        *params[k] = static_cast<Real>(theta + velocity[k]);
      }
      double batch_pixels = 0.0;
      for (const auto* t : targets) batch_pixels += double(t->size());
      sum += bl.loss * batch_pixels;
      pixels += batch_pixels;
    }
    trace.push_back(sum / pixels);
  }
  return trace;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Parameters skipped because a +-h perturbation flipped a ReLU, where the
  /// loss is not differentiable and finite differences are meaningless.
  std::size_t skipped_kinks = 0;
};

/// Analytic vs central-difference gradients, evaluated in double precision.
/// `corrupt` (test hook) may modify the analytic gradient before comparison.
template <typename Real>
GradientCheckResult gradient_check(const ToyNet<Real>& source, const Image2D<float>& image,
                                   const Image2D<std::uint8_t>& target, const ClassWeights& weights,
                                   double h = 1e-4,
                                   const std::function<void(std::vector<double>&)>& corrupt = {}) {
  ToyNet<double> net = source.template cast<double>();
  if (net.param_count() > 10000) throw UsageError("gradient check limited to 10^4 parameters");
  const std::vector<double> in(image.data.begin(), image.data.end());
  auto eval = [&](std::vector<double>* grad, std::vector<bool>* pattern) {
    auto t = net.forward_trace(in, image.width, image.height);
    auto bl = binary_batch_loss<double>({&t.probs}, {&target}, weights);
    if (grad) *grad = net.backward(t, std::move(bl.dlogits[0]));
    if (pattern) {
      pattern->clear();
      for (const auto& pre : t.pre)
        for (double v : pre) pattern->push_back(v > 0.0);
    }
    return bl.loss;
  };
  std::vector<double> analytic;
  std::vector<bool> base_pattern, pattern;
  eval(&analytic, &base_pattern);
  if (corrupt) corrupt(analytic);
  auto params = net.param_pointers();
  GradientCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!(std::abs(analytic[k]) > 1e-8)) continue;
    const double theta = *params[k];
    *params[k] = theta + h;
    const double lp = eval(nullptr, &pattern);
    bool kink = net.relu() && pattern != base_pattern;
    *params[k] = theta - h;
    const double lm = eval(nullptr, &pattern);
    kink = kink || (net.relu() && pattern != base_pattern);
    *params[k] = theta;
    if (kink) {
      ++r.skipped_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double rel = numeric != 0.0 ? std::abs(analytic[k] - numeric) / std::abs(numeric) : INFINITY;
    r.max_relative_error = std::max(r.max_relative_error, rel);
    ++r.checked;
  }
  return r;
}

namespace detail {

inline void put_u32(std::ostream& o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::ostream& o, float f) { put_u32(o, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline constexpr char kCheckpointMagic[8] = {'T', 'O', 'Y', 'F', 'C', 'N', '1', '\0'};

}  // namespace detail

/// Checkpoint: magic, u32 layer count, then per layer u32 (in, out, kernel)
/// followed by float32 weights and biases, all little-endian.
template <typename Real>
void save_checkpoint(const ToyNet<Real>& net, const std::filesystem::path& path) {
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw DataError("cannot write checkpoint " + path.string());
  o.write(detail::kCheckpointMagic, 8);
  detail::put_u32(o, std::uint32_t(net.layers().size()));
  for (const auto& L : net.layers()) {
    detail::put_u32(o, std::uint32_t(L.in));
    detail::put_u32(o, std::uint32_t(L.out));
    detail::put_u32(o, std::uint32_t(L.kernel));
    for (auto w : L.weights) detail::put_f32(o, static_cast<float>(w));
    for (auto b : L.bias) detail::put_f32(o, static_cast<float>(b));
  }
  if (!o) throw DataError("write failed for " + path.string());
}

inline ToyNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + " is not a network checkpoint");
  const std::uint32_t count = detail::get_u32(in);
  if (count == 0 || count > 1024) throw DataError("implausible layer count in checkpoint");
  std::vector<ConvLayer<float>> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    ConvLayer<float> L;
    L.in = int(detail::get_u32(in));
    L.out = int(detail::get_u32(in));
    L.kernel = int(detail::get_u32(in));
    if (L.in <= 0 || L.out <= 0 || L.kernel <= 0 || L.in > 4096 || L.out > 4096 || L.kernel > 31)
      throw DataError("implausible layer shape in checkpoint");
    L.weights.resize(L.weight_count());
    for (auto& w : L.weights) w = detail::get_f32(in);
    L.bias.resize(std::size_t(L.out));
    for (auto& b : L.bias) b = detail::get_f32(in);
    layers.push_back(std::move(L));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint");
  try {
    return ToyNet<float>(std::move(layers));
  } catch (const UsageError& e) {
    throw DataError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

/// Maps windowed intensities to the network's input range.
inline Image2D<float> normalize_input(const Image2D<float>& slice, double lo, double hi) {
  Image2D<float> out(slice.width, slice.height);
  for (std::size_t i = 0; i < slice.size(); ++i)
    out.data[i] = static_cast<float>((double(slice.data[i]) - lo) / (hi - lo));
  return out;
}

}  // namespace hepaseg

#endif  // HEPASEG_TOYNET_HPP
