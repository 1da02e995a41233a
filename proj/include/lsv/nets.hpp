// lsv/nets.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef LSV_NETS_HPP_
#define LSV_NETS_HPP_

#include <algorithm>
#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/data.hpp"
#include "lsv/ladder.hpp"
#include "lsv/matrix.hpp"
#include "lsv/numcore.hpp"
#include "lsv/rng.hpp"

namespace lsv {

enum class Framework { kDvector, kXvector };
enum class LayerKind { kFullyConnected, kTimeDelay, kStatsPool, kSoftmax };
enum class Activation { kRelu, kNone };

inline const char* FrameworkName(Framework f) {
  return f == Framework::kDvector ? "d-vector" : "x-vector";
}

struct LayerSpec {
  LayerKind kind = LayerKind::kFullyConnected;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<int> context;  // time-delay layers only
  Activation act = Activation::kNone;

  int ContextSpan() const {
    return context.empty() ? 0 : context.back() - context.front();
  }

  void Validate() const {
    Require(in_dim >= 1 && out_dim >= 1, ErrorKind::kConfig,
            "layer dims must be >= 1");
    if (kind == LayerKind::kTimeDelay) {
      Require(!context.empty(), ErrorKind::kConfig,
              "time-delay layer needs at least one context offset");
      for (std::size_t i = 1; i < context.size(); ++i)
        Require(context[i] > context[i - 1], ErrorKind::kConfig,
                "context offsets must be strictly ascending");
    }
    if (kind == LayerKind::kStatsPool)
      Require(out_dim == 2 * in_dim, ErrorKind::kConfig,
              "stats-pool emits [mean||std], out_dim must be 2*in_dim");
  }
};

struct NetworkConfig {
  Framework framework = Framework::kDvector;
  std::size_t n_speakers = 0;
  std::size_t feat_dim = 0;    // per-frame feature dimension
  std::size_t width_scale = 0;  // base width of the chosen preset
  std::vector<LayerSpec> layers;  // full stack, softmax last
  std::size_t tap_layer = 0;      // embedding tap, index into layers

  std::optional<LadderConfig> ladder;
  bool multitask = false;
  std::size_t recon_levels = 0;        // hidden layers under reconstruction
  std::vector<std::size_t> recon_dims;  // dims of levels 0..recon_levels

  std::size_t InputDim() const { return layers.front().in_dim; }

  std::size_t FrameLayers() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      if (l.kind == LayerKind::kTimeDelay) ++n;
    return n;
  }

  // Minimum frames an utterance needs for one embedding.
  std::size_t MinFrames() const {
    if (framework == Framework::kDvector) return 51;
    std::size_t span = 0;
    for (const auto& l : layers)
      if (l.kind == LayerKind::kTimeDelay)
        span += static_cast<std::size_t>(l.ContextSpan());
    return span + 1;
  }

  void Validate() const {
    Require(!layers.empty(), ErrorKind::kConfig, "network has no layers");
    Require(layers.back().kind == LayerKind::kSoftmax, ErrorKind::kConfig,
            "last layer must be the softmax classifier");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      Require(layers[i].kind != LayerKind::kSoftmax, ErrorKind::kConfig,
              "softmax must appear exactly once, last");
    for (const auto& l : layers) l.Validate();
    Require(n_speakers >= 2, ErrorKind::kConfig, "need at least 2 speakers, got ",
            n_speakers);
  }
};

enum class SystemId { kDvector, kDladder, kXvector, kXladder, kXmulti };

inline const char* SystemName(SystemId s) {
  switch (s) {
    case SystemId::kDvector: return "d-vector";
    case SystemId::kDladder: return "d-ladder";
    case SystemId::kXvector: return "x-vector";
    case SystemId::kXladder: return "x-ladder";
    case SystemId::kXmulti: return "x-multi";
  }
  return "?";
}

inline SystemId ParseSystem(const std::string& name) {
  if (name == "d-vector") return SystemId::kDvector;
  if (name == "d-ladder") return SystemId::kDladder;
  if (name == "x-vector") return SystemId::kXvector;
  if (name == "x-ladder") return SystemId::kXladder;
  if (name == "x-multi") return SystemId::kXmulti;
  Throw(ErrorKind::kConfig, "unknown system \"", name,
        "\" (expected d-vector, d-ladder, x-vector, x-ladder, or x-multi)");
}

// ---------------------------------------------------------------------------
// Network: topology plus the named parameter store.  Classification-path
// tensors are prefixed "enc.", decoder tensors "dec.", combinator tensors
// "comb.".  The classifier never gains parameters from a ladder or
// multitask attachment.

class Network {
 public:
  NetworkConfig cfg;

  ParamTensor& AddParam(const std::string& name, std::vector<std::size_t> shape) {
    Require(index_.find(name) == index_.end(), ErrorKind::kConfig,
            "duplicate parameter name ", name);
    store_.emplace_back(name, std::move(shape));
    index_[name] = store_.size() - 1;
    return store_.back();
  }

  bool HasParam(const std::string& name) const {
    return index_.find(name) != index_.end();
  }

  ParamTensor& Param(const std::string& name) {
    auto it = index_.find(name);
    Require(it != index_.end(), ErrorKind::kLookup, "no parameter named ", name);
    return store_[it->second];
  }

  const ParamTensor& Param(const std::string& name) const {
    auto it = index_.find(name);
    Require(it != index_.end(), ErrorKind::kLookup, "no parameter named ", name);
    return store_[it->second];
  }

  // Creation order; the order is part of the determinism contract because
  // initialization and checkpoints follow it.
  std::vector<ParamTensor*> Params(const std::string& prefix = "") {
    std::vector<ParamTensor*> out;
    for (auto& p : store_)
      if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
    return out;
  }

  std::vector<const ParamTensor*> Params(const std::string& prefix = "") const {
    std::vector<const ParamTensor*> out;
    for (const auto& p : store_)
      if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
    return out;
  }

  std::size_t ParamCount(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& p : store_)
      if (p.name.rfind(prefix, 0) == 0) n += p.size();
    return n;
  }

  void ZeroGrads() {
    for (auto& p : store_) p.ZeroGrad();
  }

  static std::string WeightName(std::size_t layer_idx) {
    return Str("enc.l", layer_idx + 1, ".W");
  }
  static std::string BiasName(std::size_t layer_idx) {
    return Str("enc.l", layer_idx + 1, ".b");
  }

  ParamTensor& LayerW(std::size_t i) { return Param(WeightName(i)); }
  ParamTensor& LayerB(std::size_t i) { return Param(BiasName(i)); }
  const ParamTensor& LayerW(std::size_t i) const { return Param(WeightName(i)); }
  const ParamTensor& LayerB(std::size_t i) const { return Param(BiasName(i)); }

  CombinatorParams Combinator(std::size_t level) {
    CombinatorParams c;
    for (int i = 0; i < 10; ++i)
      c.a[i] = &Param(Str("comb.l", level, ".a", i + 1));
    return c;
  }

  SystemId System() const {
    if (cfg.framework == Framework::kDvector)
      return cfg.ladder ? SystemId::kDladder : SystemId::kDvector;
    if (cfg.multitask) return SystemId::kXmulti;
    return cfg.ladder ? SystemId::kXladder : SystemId::kXvector;
  }

 private:
  std::deque<ParamTensor> store_;  // stable addresses under push_back
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void InitAffine(ParamTensor& w, ParamTensor& b, RngStream& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.shape[1]));
  for (auto& v : w.value) v = scale * rng.NextGaussian();
  std::fill(b.value.begin(), b.value.end(), 0.0);
}

inline void AddLayerParams(Network& net, std::size_t layer_idx, RngStream& rng) {
  const LayerSpec& spec = net.cfg.layers[layer_idx];
  if (spec.kind == LayerKind::kStatsPool) return;
  const std::size_t fan_in = spec.kind == LayerKind::kTimeDelay
                                 ? spec.context.size() * spec.in_dim
                                 : spec.in_dim;
  auto& w = net.AddParam(Network::WeightName(layer_idx), {spec.out_dim, fan_in});
  auto& b = net.AddParam(Network::BiasName(layer_idx), {spec.out_dim});
  InitAffine(w, b, rng);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Builders.

// Frame-stacked fully connected classifier: 4 FC-ReLU layers of `width`
// units over a 51-frame context window, softmax on top.  The embedding tap
// is the last hidden layer.
inline Network BuildDvector(std::size_t n_speakers, std::size_t feat_dim,
                            std::size_t width, std::uint64_t seed) {
  Require(n_speakers >= 2, ErrorKind::kConfig, "d-vector needs n_speakers >= 2, got ",
          n_speakers);
  Require(feat_dim >= 1 && width >= 1, ErrorKind::kConfig,
          "d-vector needs feat_dim >= 1 and width >= 1");
  Network net;
  net.cfg.framework = Framework::kDvector;
  net.cfg.n_speakers = n_speakers;
  net.cfg.feat_dim = feat_dim;
  net.cfg.width_scale = width;
  const std::size_t input_dim = 51 * feat_dim;
  std::size_t in = input_dim;
  for (int i = 0; i < 4; ++i) {
    net.cfg.layers.push_back(
        {LayerKind::kFullyConnected, in, width, {}, Activation::kRelu});
    in = width;
  }
  net.cfg.layers.push_back(
      {LayerKind::kSoftmax, width, n_speakers, {}, Activation::kNone});
  net.cfg.tap_layer = net.cfg.layers.size() - 2;
  net.cfg.Validate();
  RngStream rng(seed, "init");
  for (std::size_t i = 0; i < net.cfg.layers.size(); ++i)
    detail::AddLayerParams(net, i, rng);
  return net;
}

struct XvectorShape {
  std::vector<std::size_t> frame_widths = {64, 64, 64, 64, 128};
  std::vector<std::size_t> segment_widths = {64, 64};
  std::vector<std::vector<int>> contexts = {
      {-2, -1, 0, 1, 2}, {-2, 0, 2}, {-3, 0, 3}, {0}, {0}};

  static XvectorShape Desk() { return {}; }
  static XvectorShape Full() {
    XvectorShape s;
    s.frame_widths = {512, 512, 512, 512, 1500};
    s.segment_widths = {512, 512};
    return s;
  }
};

// 9-layer segment classifier: 5 frame-level time-delay layers, statistics
// pooling, 2 segment-level FC layers, softmax.  The embedding tap is the
// first segment-level layer.
inline Network BuildXvector(std::size_t n_speakers, std::size_t feat_dim,
                            const XvectorShape& shape, std::uint64_t seed) {
  Require(n_speakers >= 2, ErrorKind::kConfig, "x-vector needs n_speakers >= 2, got ",
          n_speakers);
  Require(shape.frame_widths.size() == 5, ErrorKind::kConfig,
          "x-vector takes exactly 5 frame-level widths");
  Require(shape.contexts.size() == 5, ErrorKind::kConfig,
          "x-vector takes exactly 5 frame-level contexts");
  Require(shape.segment_widths.size() == 2, ErrorKind::kConfig,
          "x-vector takes exactly 2 segment-level widths");
  Network net;
  net.cfg.framework = Framework::kXvector;
  net.cfg.n_speakers = n_speakers;
  net.cfg.feat_dim = feat_dim;
  net.cfg.width_scale = shape.frame_widths[0];
  std::size_t in = feat_dim;
  for (std::size_t i = 0; i < 5; ++i) {
    net.cfg.layers.push_back({LayerKind::kTimeDelay, in, shape.frame_widths[i],
                              shape.contexts[i], Activation::kRelu});
    in = shape.frame_widths[i];
  }
  net.cfg.layers.push_back({LayerKind::kStatsPool, in, 2 * in, {}, Activation::kNone});
  in = 2 * in;
  for (std::size_t i = 0; i < 2; ++i) {
    net.cfg.layers.push_back(
        {LayerKind::kFullyConnected, in, shape.segment_widths[i], {}, Activation::kRelu});
    in = shape.segment_widths[i];
  }
  net.cfg.layers.push_back(
      {LayerKind::kSoftmax, in, n_speakers, {}, Activation::kNone});
  net.cfg.tap_layer = 6;  // first segment-level FC
  net.cfg.Validate();
  RngStream rng(seed, "init");
  for (std::size_t i = 0; i < net.cfg.layers.size(); ++i)
    detail::AddLayerParams(net, i, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Time-delay kernels.  Output frame t is an affine function of the input
// frames at t + (offset - min_offset); sequences shrink by the context span
// (valid convolution, no padding).

inline std::size_t TdnnOutFrames(std::size_t in_frames, const LayerSpec& spec) {
  const std::size_t span = static_cast<std::size_t>(spec.ContextSpan());
  Require(in_frames >= span + 1, ErrorKind::kLength, "time-delay layer needs >= ",
          span + 1, " frames, got ", in_frames);
  return in_frames - span;
}

inline Matrix2D TdnnForward(const Matrix2D& x, const LayerSpec& spec,
                            const ParamTensor& w, const ParamTensor& b) {
  spec.Validate();
  Require(x.cols() == spec.in_dim, ErrorKind::kDimension, "tdnn ", w.name,
          ": input dim ", x.cols(), " != ", spec.in_dim);
  const std::size_t k = spec.context.size();
  Require(w.shape[0] == spec.out_dim && w.shape[1] == k * spec.in_dim,
          ErrorKind::kDimension, "tdnn weight shape mismatch for ", w.name);
  const std::size_t out_frames = TdnnOutFrames(x.rows(), spec);
  const std::size_t din = spec.in_dim, dout = spec.out_dim;
  Matrix2D y(out_frames, dout);
  for (std::size_t t = 0; t < out_frames; ++t) {
    double* yr = y.Row(t);
    for (std::size_t o = 0; o < dout; ++o) {
      const double* wr = w.value.data() + o * k * din;
      double s = b.value[o];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = t + static_cast<std::size_t>(spec.context[j] -
                                                             spec.context[0]);
        const double* xr = x.Row(src);
        const double* wj = wr + j * din;
        for (std::size_t i = 0; i < din; ++i) s += wj[i] * xr[i];
      }
      yr[o] = s;
    }
  }
  return y;
}

inline Matrix2D TdnnBackward(const Matrix2D& x, const LayerSpec& spec,
                             ParamTensor& w, ParamTensor& b, const Matrix2D& dy) {
  const std::size_t k = spec.context.size();
  const std::size_t din = spec.in_dim, dout = spec.out_dim;
  Matrix2D dx(x.rows(), din);
  for (std::size_t t = 0; t < dy.rows(); ++t) {
    const double* dyr = dy.Row(t);
    for (std::size_t o = 0; o < dout; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      b.grad[o] += g;
      const double* wr = w.value.data() + o * k * din;
      double* dwr = w.grad.data() + o * k * din;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = t + static_cast<std::size_t>(spec.context[j] -
                                                             spec.context[0]);
        const double* xr = x.Row(src);
        double* dxr = dx.Row(src);
        const double* wj = wr + j * din;
        double* dwj = dwr + j * din;
        for (std::size_t i = 0; i < din; ++i) {
          dxr[i] += g * wj[i];
          dwj[i] += g * xr[i];
        }
      }
    }
  }
  return dx;
}

// Adjoint time-delay layer (the decoder mirror): scatter-adds each input
// frame through transposed context blocks, growing the sequence back by the
// span.  Edge frames receive fewer contributions and stay in the output.
inline Matrix2D AdjointTdnnForward(const Matrix2D& z, const LayerSpec& enc_spec,
                                   const ParamTensor& v, const ParamTensor& c) {
  const std::size_t k = enc_spec.context.size();
  const std::size_t d_up = enc_spec.out_dim, d_down = enc_spec.in_dim;
  Require(z.cols() == d_up, ErrorKind::kDimension, "adjoint tdnn ", v.name,
          ": input dim ", z.cols(), " != ", d_up);
  Require(v.shape[0] == d_down && v.shape[1] == k * d_up, ErrorKind::kDimension,
          "adjoint tdnn weight shape mismatch for ", v.name);
  const std::size_t span = static_cast<std::size_t>(enc_spec.ContextSpan());
  Matrix2D p(z.rows() + span, d_down);
  for (std::size_t t = 0; t < p.rows(); ++t) {
    double* pr = p.Row(t);
    for (std::size_t o = 0; o < d_down; ++o) pr[o] = c.value[o];
  }
  for (std::size_t t = 0; t < z.rows(); ++t) {
    const double* zr = z.Row(t);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t dst = t + static_cast<std::size_t>(enc_spec.context[j] -
                                                           enc_spec.context[0]);
      double* pr = p.Row(dst);
      for (std::size_t o = 0; o < d_down; ++o) {
        const double* vr = v.value.data() + o * k * d_up + j * d_up;
        double s = 0.0;
        for (std::size_t i = 0; i < d_up; ++i) s += vr[i] * zr[i];
        pr[o] += s;
      }
    }
  }
  return p;
}

inline Matrix2D AdjointTdnnBackward(const Matrix2D& z, const LayerSpec& enc_spec,
                                    ParamTensor& v, ParamTensor& c,
                                    const Matrix2D& dp) {
  const std::size_t k = enc_spec.context.size();
  const std::size_t d_up = enc_spec.out_dim, d_down = enc_spec.in_dim;
  for (std::size_t t = 0; t < dp.rows(); ++t) {
    const double* dpr = dp.Row(t);
    for (std::size_t o = 0; o < d_down; ++o) c.grad[o] += dpr[o];
  }
  Matrix2D dz(z.rows(), d_up);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    const double* zr = z.Row(t);
    double* dzr = dz.Row(t);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t dst = t + static_cast<std::size_t>(enc_spec.context[j] -
                                                           enc_spec.context[0]);
      const double* dpr = dp.Row(dst);
      for (std::size_t o = 0; o < d_down; ++o) {
        const double g = dpr[o];
        if (g == 0.0) continue;
        const double* vr = v.value.data() + o * k * d_up + j * d_up;
        double* dvr = v.grad.data() + o * k * d_up + j * d_up;
        for (std::size_t i = 0; i < d_up; ++i) {
          dzr[i] += g * vr[i];
          dvr[i] += g * zr[i];
        }
      }
    }
  }
  return dz;
}

// ---------------------------------------------------------------------------
// Statistics pooling: per-dimension mean and population std over frames.
// Sums run over sorted addends so the result is exactly invariant to frame
// permutation.

namespace detail {

inline double OrderInvariantSum(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double v : scratch) s += v;
  return s;
}

}  // namespace detail

struct StatsPoolCache {
  std::vector<double> mean;
  std::vector<double> std;  // sqrt(var + 1e-10)
  std::size_t frames = 0;
};

constexpr double kStatsPoolEps = 1e-10;

inline Matrix2D StatsPoolForward(const Matrix2D& x, StatsPoolCache* cache = nullptr) {
  Require(x.rows() >= 1, ErrorKind::kLength, "stats pooling needs at least 1 frame");
  const std::size_t t_frames = x.rows(), d = x.cols();
  Matrix2D out(1, 2 * d);
  StatsPoolCache local;
  StatsPoolCache& c = cache ? *cache : local;
  c.mean.assign(d, 0.0);
  c.std.assign(d, 0.0);
  c.frames = t_frames;
  std::vector<double> scratch(t_frames);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t t = 0; t < t_frames; ++t) scratch[t] = x(t, j);
    c.mean[j] = detail::OrderInvariantSum(scratch) / static_cast<double>(t_frames);
    for (std::size_t t = 0; t < t_frames; ++t) {
      const double dlt = x(t, j) - c.mean[j];
      scratch[t] = dlt * dlt;
    }
    const double var = detail::OrderInvariantSum(scratch) / static_cast<double>(t_frames);
    c.std[j] = std::sqrt(var + kStatsPoolEps);
    out(0, j) = c.mean[j];
    out(0, d + j) = c.std[j];
  }
  return out;
}

inline Matrix2D StatsPoolBackward(const Matrix2D& x, const StatsPoolCache& c,
                                  const Matrix2D& dout) {
  const std::size_t t_frames = x.rows(), d = x.cols();
  Require(dout.rows() == 1 && dout.cols() == 2 * d, ErrorKind::kDimension,
          "stats pool backward: bad upstream shape");
  Matrix2D dx(t_frames, d);
  const double inv_t = 1.0 / static_cast<double>(t_frames);
  for (std::size_t t = 0; t < t_frames; ++t) {
    double* dxr = dx.Row(t);
    const double* xr = x.Row(t);
    for (std::size_t j = 0; j < d; ++j) {
      const double dmean = dout(0, j);
      const double dstd = dout(0, d + j);
      dxr[j] = dmean * inv_t + dstd * (xr[j] - c.mean[j]) * inv_t / c.std[j];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Ladder / multitask attachment.  Decoder level l maps the reconstruction at
// level l+1 down to level l; level 0 is the raw input.  Combinators exist
// only for the ladder.

namespace detail {

inline std::vector<std::size_t> ReconDims(const NetworkConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(cfg.InputDim());
  for (const auto& l : cfg.layers) {
    if (l.kind == LayerKind::kSoftmax || l.kind == LayerKind::kStatsPool) break;
    if (cfg.framework == Framework::kXvector && l.kind != LayerKind::kTimeDelay)
      break;
    dims.push_back(l.out_dim);
  }
  return dims;
}

inline void AddDecoderParams(Network& net, std::uint64_t seed) {
  RngStream rng(seed, "init.ladder");
  const auto& layers = net.cfg.layers;
  const std::size_t top = net.cfg.recon_levels;
  for (std::size_t l = 0; l < top; ++l) {
    // Mirror of encoder layer l+1 (cfg.layers[l]); adjoint blocks for
    // time-delay layers, plain transpose shape for FC layers.
    const LayerSpec& enc = layers[l];
    const std::size_t k =
        enc.kind == LayerKind::kTimeDelay ? enc.context.size() : 1;
    auto& w = net.AddParam(Str("dec.l", l, ".W"), {enc.in_dim, k * enc.out_dim});
    auto& b = net.AddParam(Str("dec.l", l, ".b"), {enc.in_dim});
    InitAffine(w, b, rng);
  }
}

}  // namespace detail

// Attaches the per-layer denoising autoencoder.  The classification path is
// untouched: decoders and combinators live under their own prefixes.
inline void AttachLadder(Network& net, const LadderConfig& cfg, std::uint64_t seed) {
  Require(!net.cfg.ladder, ErrorKind::kConfig, "ladder already attached");
  Require(!net.cfg.multitask, ErrorKind::kConfig,
          "cannot attach a ladder to a multitask network");
  Require(cfg.sigma >= 0.0, ErrorKind::kConfig, "sigma must be >= 0");
  const auto dims = detail::ReconDims(net.cfg);
  const std::size_t top = dims.size() - 1;
  Require(cfg.lambda.size() == top + 1, ErrorKind::kConfig, "lambda list has ",
          cfg.lambda.size(), " entries; this network reconstructs ", top,
          " hidden layers plus the input (", top + 1, " weights)");
  for (double l : cfg.lambda)
    Require(l >= 0.0, ErrorKind::kConfig, "lambda weights must be >= 0");
  net.cfg.ladder = cfg;
  net.cfg.recon_levels = top;
  net.cfg.recon_dims = dims;
  detail::AddDecoderParams(net, seed);
  for (std::size_t l = 0; l <= top; ++l) {
    for (int i = 0; i < 10; ++i) {
      auto& a = net.AddParam(Str("comb.l", l, ".a", i + 1), {dims[l]});
      // Identity denoising at start: mu = 0, nu = 1, so h_hat = h_tilde.
      if (i == 9) std::fill(a.value.begin(), a.value.end(), 1.0);
    }
  }
}

// Attaches a conventional reconstruction head: same decoder stack as the
// ladder (identical parameter shapes), no combinators, input-level cost only.
inline void AttachMultitask(Network& net, const LadderConfig& cfg,
                            std::uint64_t seed) {
  Require(net.cfg.framework == Framework::kXvector, ErrorKind::kConfig,
          "multitask reconstruction is only defined for the x-vector framework");
  Require(!net.cfg.ladder && !net.cfg.multitask, ErrorKind::kConfig,
          "network already has a reconstruction attachment");
  Require(cfg.sigma >= 0.0, ErrorKind::kConfig, "sigma must be >= 0");
  Require(!cfg.lambda.empty(), ErrorKind::kConfig,
          "multitask needs lambda[0] for the input reconstruction cost");
  net.cfg.multitask = true;
  net.cfg.ladder = cfg;  // sigma and lambda[0] drive corruption and the cost
  const auto dims = detail::ReconDims(net.cfg);
  net.cfg.recon_levels = dims.size() - 1;
  net.cfg.recon_dims = dims;
  detail::AddDecoderParams(net, seed);
}

// ---------------------------------------------------------------------------
// Clean classification forward to the embedding tap.

// d-vector: tap activations for a batch of context windows.
inline Matrix2D DvectorTapForward(const Network& net, const Matrix2D& windows) {
  Matrix2D h = windows;
  for (std::size_t i = 0; i <= net.cfg.tap_layer; ++i) {
    h = AffineForward(net.LayerW(i), net.LayerB(i), h);
    if (net.cfg.layers[i].act == Activation::kRelu) h = ReluForward(h);
  }
  return h;
}

// x-vector: single tap vector for one whole segment.
inline std::vector<double> XvectorTapForward(const Network& net,
                                             const Matrix2D& frames) {
  Matrix2D h = frames;
  for (std::size_t i = 0; i < net.cfg.layers.size(); ++i) {
    const LayerSpec& spec = net.cfg.layers[i];
    if (spec.kind == LayerKind::kTimeDelay) {
      h = TdnnForward(h, spec, net.LayerW(i), net.LayerB(i));
    } else if (spec.kind == LayerKind::kStatsPool) {
      h = StatsPoolForward(h);
    } else {
      h = AffineForward(net.LayerW(i), net.LayerB(i), h);
    }
    if (spec.act == Activation::kRelu) h = ReluForward(h);
    if (i == net.cfg.tap_layer) break;
  }
  Require(h.rows() == 1, ErrorKind::kState, "x-vector tap expected one row");
  return std::vector<double>(h.Row(0), h.Row(0) + h.cols());
}

// Utterance embedding on the clean path.  d-vector: tap activations of
// consecutive non-overlapping 51-frame windows, averaged over the utterance.
// x-vector: the tap vector of the whole segment.
inline std::vector<double> ExtractEmbedding(const Network& net,
                                            const FeatureSequence& utt) {
  Require(utt.frames.cols() == net.cfg.feat_dim, ErrorKind::kDimension,
          "utterance ", utt.utterance_id, " has dim ", utt.frames.cols(),
          " but the network expects ", net.cfg.feat_dim);
  if (net.cfg.framework == Framework::kDvector) {
    const auto windows = WindowContext(utt, 25, 25);
    Require(!windows.empty(), ErrorKind::kLength, "utterance ", utt.utterance_id,
            " has ", utt.frames.rows(), " frames; d-vector extraction needs >= ",
            net.cfg.MinFrames());
    Matrix2D x(windows.size(), windows[0].size());
    for (std::size_t i = 0; i < windows.size(); ++i)
      std::copy(windows[i].begin(), windows[i].end(), x.Row(i));
    const Matrix2D taps = DvectorTapForward(net, x);
    std::vector<double> emb(taps.cols(), 0.0);
    for (std::size_t i = 0; i < taps.rows(); ++i)
      for (std::size_t j = 0; j < taps.cols(); ++j) emb[j] += taps(i, j);
    for (auto& v : emb) v /= static_cast<double>(taps.rows());
    return emb;
  }
  Require(utt.frames.rows() >= net.cfg.MinFrames(), ErrorKind::kLength,
          "utterance ", utt.utterance_id, " has ", utt.frames.rows(),
          " frames; x-vector extraction needs >= ", net.cfg.MinFrames());
  return XvectorTapForward(net, utt.frames);
}

}  // namespace lsv

#endif  // LSV_NETS_HPP_
