// lsv/passes.hpp
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
//
// Training-time forward/backward passes for the five systems.  Each step
// accumulates gradients into the network's parameter tensors; the caller
// zeroes gradients at batch boundaries.  The corrupted encoder feeds the
// classification loss during training; inference always runs the clean path.

#ifndef LSV_PASSES_HPP_
#define LSV_PASSES_HPP_

#include <cstddef>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/ladder.hpp"
#include "lsv/matrix.hpp"
#include "lsv/nets.hpp"
#include "lsv/numcore.hpp"
#include "lsv/rng.hpp"

namespace lsv {

struct StepResult {
  double ce = 0.0;
  double denoise = 0.0;
  double total = 0.0;
};

namespace detail {

inline Matrix2D Negated(const Matrix2D& m) {
  Matrix2D out = m;
  ScaleInPlace(out, -1.0);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Noise layout helpers.  Ladder corruption touches the input (level 0) and
// every reconstructed hidden layer; matrices are drawn in level order so a
// frozen draw can be replayed for gradient checks.

inline std::vector<Matrix2D> DrawDladderNoise(const Network& net, std::size_t rows,
                                              RngStream& rng) {
  Require(net.cfg.ladder.has_value(), ErrorKind::kState, "network has no ladder");
  std::vector<Matrix2D> noise;
  for (std::size_t dim : net.cfg.recon_dims)
    noise.push_back(DrawNoise(rows, dim, net.cfg.ladder->sigma, rng));
  return noise;
}

inline std::vector<Matrix2D> DrawXladderNoise(const Network& net,
                                              std::size_t in_frames,
                                              RngStream& rng) {
  Require(net.cfg.ladder.has_value(), ErrorKind::kState, "network has no ladder");
  std::vector<Matrix2D> noise;
  std::size_t t = in_frames;
  noise.push_back(DrawNoise(t, net.cfg.recon_dims[0], net.cfg.ladder->sigma, rng));
  for (std::size_t l = 0; l < net.cfg.recon_levels; ++l) {
    t = TdnnOutFrames(t, net.cfg.layers[l]);
    noise.push_back(DrawNoise(t, net.cfg.recon_dims[l + 1], net.cfg.ladder->sigma, rng));
  }
  return noise;
}

// ---------------------------------------------------------------------------
// d-vector: plain supervised step over a batch of context windows.

inline StepResult DvectorStep(Network& net, const Matrix2D& x,
                              const std::vector<int>& labels,
                              bool backward = true) {
  const std::size_t n_hidden = net.cfg.layers.size() - 1;
  std::vector<Matrix2D> acts(n_hidden + 1), pres(n_hidden + 1);
  acts[0] = x;
  for (std::size_t l = 1; l <= n_hidden; ++l) {
    pres[l] = AffineForward(net.LayerW(l - 1), net.LayerB(l - 1), acts[l - 1]);
    acts[l] = ReluForward(pres[l]);
  }
  const std::size_t sm = n_hidden;  // softmax layer index in cfg.layers
  Matrix2D logits = AffineForward(net.LayerW(sm), net.LayerB(sm), acts[n_hidden]);
  auto xent = SoftmaxXent(logits, labels);
  StepResult r{xent.loss, 0.0, xent.loss};
  if (!backward) return r;
  Matrix2D dh = AffineBackward(net.LayerW(sm), net.LayerB(sm), acts[n_hidden],
                               xent.dlogits);
  for (std::size_t l = n_hidden; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pres[l], dh);
    dh = AffineBackward(net.LayerW(l - 1), net.LayerB(l - 1), acts[l - 1], dpre);
  }
  return r;
}

// ---------------------------------------------------------------------------
// d-ladder: clean encoder for targets, corrupted encoder for the supervised
// loss, top-down decoder producing u = batchnorm(decoder affine), per-level
// denoising via the combinator, weighted reconstruction cost.  Gradients of
// the joint loss flow through both encoder passes and the decoder.

inline StepResult DladderStep(Network& net, const Matrix2D& x,
                              const std::vector<int>& labels,
                              const std::vector<Matrix2D>& noise,
                              bool backward = true) {
  Require(net.cfg.ladder.has_value(), ErrorKind::kState,
          "d-ladder step needs an attached ladder");
  const LadderConfig& lcfg = *net.cfg.ladder;
  const std::size_t top = net.cfg.recon_levels;
  Require(noise.size() == top + 1, ErrorKind::kDimension, "expected ", top + 1,
          " noise matrices, got ", noise.size());

  // Clean encoder.
  std::vector<Matrix2D> h(top + 1), pre_c(top + 1);
  h[0] = x;
  for (std::size_t l = 1; l <= top; ++l) {
    pre_c[l] = AffineForward(net.LayerW(l - 1), net.LayerB(l - 1), h[l - 1]);
    h[l] = ReluForward(pre_c[l]);
  }

  // Corrupted encoder.
  std::vector<Matrix2D> ht(top + 1), pre_t(top + 1);
  ht[0] = AddNoise(x, noise[0]);
  for (std::size_t l = 1; l <= top; ++l) {
    pre_t[l] = AffineForward(net.LayerW(l - 1), net.LayerB(l - 1), ht[l - 1]);
    ht[l] = AddNoise(ReluForward(pre_t[l]), noise[l]);
  }
  const std::size_t sm = top;
  Matrix2D logits = AffineForward(net.LayerW(sm), net.LayerB(sm), ht[top]);
  auto xent = SoftmaxXent(logits, labels);

  // Decoder, top to bottom.
  std::vector<BatchNormCache> bn(top + 1);
  std::vector<DenoiseCache> dn(top + 1);
  std::vector<CombinatorParams> comb(top + 1);
  for (std::size_t l = 0; l <= top; ++l) comb[l] = net.Combinator(l);
  bn[top] = BatchNormForward(ht[top]);
  dn[top] = DenoiseForward(ht[top], bn[top].y, comb[top]);
  for (std::size_t l = top; l-- > 0;) {
    Matrix2D pre_d = AffineForward(net.Param(Str("dec.l", l, ".W")),
                                   net.Param(Str("dec.l", l, ".b")),
                                   dn[l + 1].h_hat);
    bn[l] = BatchNormForward(pre_d);
    dn[l] = DenoiseForward(ht[l], bn[l].y, comb[l]);
  }

  double denoise = 0.0;
  for (std::size_t l = 0; l <= top; ++l)
    denoise += lcfg.lambda[l] * LayerReconCost(h[l], dn[l].h_hat);

  StepResult r{xent.loss, denoise, xent.loss + denoise};
  if (!backward) return r;

  std::vector<Matrix2D> grad_hhat(top + 1);
  for (std::size_t l = 0; l <= top; ++l)
    grad_hhat[l] = LayerReconGradHhat(h[l], dn[l].h_hat, lcfg.lambda[l]);

  // Decoder backward, bottom-up; lateral gradients feed the corrupted pass.
  std::vector<Matrix2D> dht_lat(top + 1);
  Matrix2D dhhat = grad_hhat[0];
  for (std::size_t l = 0; l < top; ++l) {
    DenoiseGrads g = DenoiseBackward(dn[l], dhhat, comb[l]);
    dht_lat[l] = std::move(g.dh_tilde);
    Matrix2D dpre_d = BatchNormBackward(bn[l], g.du);
    dhhat = AffineBackward(net.Param(Str("dec.l", l, ".W")),
                           net.Param(Str("dec.l", l, ".b")), dn[l + 1].h_hat,
                           dpre_d);
    AddInPlace(dhhat, grad_hhat[l + 1]);
  }
  DenoiseGrads gtop = DenoiseBackward(dn[top], dhhat, comb[top]);
  dht_lat[top] = std::move(gtop.dh_tilde);
  Matrix2D dht_from_u = BatchNormBackward(bn[top], gtop.du);

  // Corrupted encoder backward (classification head plus lateral terms).
  Matrix2D dht = AffineBackward(net.LayerW(sm), net.LayerB(sm), ht[top],
                                xent.dlogits);
  AddInPlace(dht, dht_lat[top]);
  AddInPlace(dht, dht_from_u);
  for (std::size_t l = top; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pre_t[l], dht);
    dht = AffineBackward(net.LayerW(l - 1), net.LayerB(l - 1), ht[l - 1], dpre);
    if (l - 1 >= 1) AddInPlace(dht, dht_lat[l - 1]);
  }

  // Clean encoder backward (reconstruction targets).
  Matrix2D dh = detail::Negated(grad_hhat[top]);
  for (std::size_t l = top; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pre_c[l], dh);
    dh = AffineBackward(net.LayerW(l - 1), net.LayerB(l - 1), h[l - 1], dpre);
    if (l - 1 >= 1) AddInPlace(dh, detail::Negated(grad_hhat[l - 1]));
  }
  return r;
}

inline StepResult DladderStep(Network& net, const Matrix2D& x,
                              const std::vector<int>& labels, RngStream& rng,
                              bool backward = true) {
  const auto noise = DrawDladderNoise(net, x.rows(), rng);
  return DladderStep(net, x, labels, noise, backward);
}

// ---------------------------------------------------------------------------
// x-vector segment-level head shared by the three x systems.

namespace detail {

struct SegmentHeadCache {
  StatsPoolCache pool;
  Matrix2D pooled;
  Matrix2D s1pre, s1, s2pre, s2, logits;
};

// frames_top is the (possibly corrupted) output of the last frame-level
// layer.  Returns the cross-entropy for the single chunk label.
inline double SegmentHeadForward(Network& net, const Matrix2D& frames_top,
                                 int label, SegmentHeadCache& c,
                                 Matrix2D* dlogits_out) {
  const auto& layers = net.cfg.layers;
  const std::size_t pool_idx = net.cfg.FrameLayers();
  Require(layers[pool_idx].kind == LayerKind::kStatsPool, ErrorKind::kState,
          "segment head expects stats-pool after the frame stack");
  c.pooled = StatsPoolForward(frames_top, &c.pool);
  c.s1pre = AffineForward(net.LayerW(pool_idx + 1), net.LayerB(pool_idx + 1), c.pooled);
  c.s1 = ReluForward(c.s1pre);
  c.s2pre = AffineForward(net.LayerW(pool_idx + 2), net.LayerB(pool_idx + 2), c.s1);
  c.s2 = ReluForward(c.s2pre);
  c.logits = AffineForward(net.LayerW(pool_idx + 3), net.LayerB(pool_idx + 3), c.s2);
  auto xent = SoftmaxXent(c.logits, {label});
  if (dlogits_out) *dlogits_out = std::move(xent.dlogits);
  return xent.loss;
}

// Returns the gradient w.r.t. frames_top.
inline Matrix2D SegmentHeadBackward(Network& net, const Matrix2D& frames_top,
                                    const SegmentHeadCache& c,
                                    const Matrix2D& dlogits) {
  const std::size_t pool_idx = net.cfg.FrameLayers();
  Matrix2D ds2 = AffineBackward(net.LayerW(pool_idx + 3), net.LayerB(pool_idx + 3),
                                c.s2, dlogits);
  Matrix2D ds2pre = ReluBackward(c.s2pre, ds2);
  Matrix2D ds1 = AffineBackward(net.LayerW(pool_idx + 2), net.LayerB(pool_idx + 2),
                                c.s1, ds2pre);
  Matrix2D ds1pre = ReluBackward(c.s1pre, ds1);
  Matrix2D dpooled = AffineBackward(net.LayerW(pool_idx + 1),
                                    net.LayerB(pool_idx + 1), c.pooled, ds1pre);
  return StatsPoolBackward(frames_top, c.pool, dpooled);
}

}  // namespace detail

// Plain x-vector step on one chunk.  grad_scale folds the batch average into
// the accumulated gradients (pass 1/batch_size when averaging over chunks).
inline StepResult XvectorChunkStep(Network& net, const Matrix2D& frames, int label,
                                   bool backward = true, double grad_scale = 1.0) {
  const std::size_t n_frame = net.cfg.FrameLayers();
  std::vector<Matrix2D> f(n_frame + 1), pre(n_frame + 1);
  f[0] = frames;
  for (std::size_t l = 0; l < n_frame; ++l) {
    pre[l + 1] = TdnnForward(f[l], net.cfg.layers[l], net.LayerW(l), net.LayerB(l));
    f[l + 1] = ReluForward(pre[l + 1]);
  }
  detail::SegmentHeadCache head;
  Matrix2D dlogits;
  const double ce = detail::SegmentHeadForward(net, f[n_frame], label, head,
                                               backward ? &dlogits : nullptr);
  StepResult r{ce, 0.0, ce};
  if (!backward) return r;
  ScaleInPlace(dlogits, grad_scale);
  Matrix2D df = detail::SegmentHeadBackward(net, f[n_frame], head, dlogits);
  for (std::size_t l = n_frame; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pre[l], df);
    df = TdnnBackward(f[l - 1], net.cfg.layers[l - 1], net.LayerW(l - 1),
                      net.LayerB(l - 1), dpre);
  }
  return r;
}

// ---------------------------------------------------------------------------
// x-ladder step on one chunk.  The ladder covers the input and the five
// frame-level layers; nothing above the statistics pooling is reconstructed.
// Decoder levels are adjoint time-delay layers, so every reconstruction has
// the time length of its encoder counterpart.

inline StepResult XladderChunkStep(Network& net, const Matrix2D& frames, int label,
                                   const std::vector<Matrix2D>& noise,
                                   bool backward = true, double grad_scale = 1.0) {
  Require(net.cfg.ladder.has_value() && !net.cfg.multitask, ErrorKind::kState,
          "x-ladder step needs an attached ladder");
  const LadderConfig& lcfg = *net.cfg.ladder;
  const std::size_t top = net.cfg.recon_levels;
  Require(noise.size() == top + 1, ErrorKind::kDimension, "expected ", top + 1,
          " noise matrices, got ", noise.size());

  // Clean frame stack (reconstruction targets; also the inference path).
  std::vector<Matrix2D> h(top + 1), pre_c(top + 1);
  h[0] = frames;
  for (std::size_t l = 0; l < top; ++l) {
    pre_c[l + 1] = TdnnForward(h[l], net.cfg.layers[l], net.LayerW(l), net.LayerB(l));
    h[l + 1] = ReluForward(pre_c[l + 1]);
  }

  // Corrupted frame stack + segment head.
  std::vector<Matrix2D> ht(top + 1), pre_t(top + 1);
  ht[0] = AddNoise(frames, noise[0]);
  for (std::size_t l = 0; l < top; ++l) {
    pre_t[l + 1] = TdnnForward(ht[l], net.cfg.layers[l], net.LayerW(l), net.LayerB(l));
    ht[l + 1] = AddNoise(ReluForward(pre_t[l + 1]), noise[l + 1]);
  }
  detail::SegmentHeadCache head;
  Matrix2D dlogits;
  const double ce = detail::SegmentHeadForward(net, ht[top], label, head,
                                               backward ? &dlogits : nullptr);

  // Decoder.
  std::vector<BatchNormCache> bn(top + 1);
  std::vector<DenoiseCache> dn(top + 1);
  std::vector<CombinatorParams> comb(top + 1);
  for (std::size_t l = 0; l <= top; ++l) comb[l] = net.Combinator(l);
  bn[top] = BatchNormForward(ht[top]);
  dn[top] = DenoiseForward(ht[top], bn[top].y, comb[top]);
  for (std::size_t l = top; l-- > 0;) {
    Matrix2D pre_d = AdjointTdnnForward(dn[l + 1].h_hat, net.cfg.layers[l],
                                        net.Param(Str("dec.l", l, ".W")),
                                        net.Param(Str("dec.l", l, ".b")));
    bn[l] = BatchNormForward(pre_d);
    dn[l] = DenoiseForward(ht[l], bn[l].y, comb[l]);
  }

  double denoise = 0.0;
  for (std::size_t l = 0; l <= top; ++l)
    denoise += lcfg.lambda[l] * LayerReconCost(h[l], dn[l].h_hat);

  StepResult r{ce, denoise, ce + denoise};
  if (!backward) return r;

  std::vector<Matrix2D> grad_hhat(top + 1);
  for (std::size_t l = 0; l <= top; ++l) {
    grad_hhat[l] = LayerReconGradHhat(h[l], dn[l].h_hat, lcfg.lambda[l]);
    ScaleInPlace(grad_hhat[l], grad_scale);
  }
  ScaleInPlace(dlogits, grad_scale);

  std::vector<Matrix2D> dht_lat(top + 1);
  Matrix2D dhhat = grad_hhat[0];
  for (std::size_t l = 0; l < top; ++l) {
    DenoiseGrads g = DenoiseBackward(dn[l], dhhat, comb[l]);
    dht_lat[l] = std::move(g.dh_tilde);
    Matrix2D dpre_d = BatchNormBackward(bn[l], g.du);
    dhhat = AdjointTdnnBackward(dn[l + 1].h_hat, net.cfg.layers[l],
                                net.Param(Str("dec.l", l, ".W")),
                                net.Param(Str("dec.l", l, ".b")), dpre_d);
    AddInPlace(dhhat, grad_hhat[l + 1]);
  }
  DenoiseGrads gtop = DenoiseBackward(dn[top], dhhat, comb[top]);
  dht_lat[top] = std::move(gtop.dh_tilde);
  Matrix2D dht_from_u = BatchNormBackward(bn[top], gtop.du);

  Matrix2D dht = detail::SegmentHeadBackward(net, ht[top], head, dlogits);
  AddInPlace(dht, dht_lat[top]);
  AddInPlace(dht, dht_from_u);
  for (std::size_t l = top; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pre_t[l], dht);
    dht = TdnnBackward(ht[l - 1], net.cfg.layers[l - 1], net.LayerW(l - 1),
                       net.LayerB(l - 1), dpre);
    if (l - 1 >= 1) AddInPlace(dht, dht_lat[l - 1]);
  }

  Matrix2D dh = detail::Negated(grad_hhat[top]);
  for (std::size_t l = top; l >= 1; --l) {
    Matrix2D dpre = ReluBackward(pre_c[l], dh);
    dh = TdnnBackward(h[l - 1], net.cfg.layers[l - 1], net.LayerW(l - 1),
                      net.LayerB(l - 1), dpre);
    if (l - 1 >= 1) AddInPlace(dh, detail::Negated(grad_hhat[l - 1]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// x-multi step on one chunk: corrupted input, shared frame stack, speaker
// classification on top, plus a conventional decoder that reconstructs the
// clean input from the top frame-level activations.  Single reconstruction
// cost at the input, no per-layer skips, no combinator.

inline StepResult XmultiChunkStep(Network& net, const Matrix2D& frames, int label,
                                  const Matrix2D& input_noise, bool backward = true,
                                  double grad_scale = 1.0) {
  Require(net.cfg.multitask, ErrorKind::kState,
          "x-multi step needs a multitask attachment");
  const LadderConfig& lcfg = *net.cfg.ladder;
  const std::size_t top = net.cfg.recon_levels;

  std::vector<Matrix2D> ft(top + 1), pre(top + 1);
  ft[0] = AddNoise(frames, input_noise);
  for (std::size_t l = 0; l < top; ++l) {
    pre[l + 1] = TdnnForward(ft[l], net.cfg.layers[l], net.LayerW(l), net.LayerB(l));
    ft[l + 1] = ReluForward(pre[l + 1]);
  }
  detail::SegmentHeadCache head;
  Matrix2D dlogits;
  const double ce = detail::SegmentHeadForward(net, ft[top], label, head,
                                               backward ? &dlogits : nullptr);

  // Conventional decoder: ReLU between levels, linear input reconstruction.
  std::vector<Matrix2D> z(top + 1), pre_z(top + 1);
  z[top] = ft[top];
  for (std::size_t l = top; l-- > 0;) {
    pre_z[l] = AdjointTdnnForward(z[l + 1], net.cfg.layers[l],
                                  net.Param(Str("dec.l", l, ".W")),
                                  net.Param(Str("dec.l", l, ".b")));
    z[l] = l > 0 ? ReluForward(pre_z[l]) : pre_z[l];
  }
  const double recon = lcfg.lambda[0] * LayerReconCost(frames, z[0]);

  StepResult r{ce, recon, ce + recon};
  if (!backward) return r;

  ScaleInPlace(dlogits, grad_scale);
  Matrix2D dz = LayerReconGradHhat(frames, z[0], lcfg.lambda[0]);
  ScaleInPlace(dz, grad_scale);
  for (std::size_t l = 0; l < top; ++l) {
    Matrix2D dpre_z = l > 0 ? ReluBackward(pre_z[l], dz) : std::move(dz);
    dz = AdjointTdnnBackward(z[l + 1], net.cfg.layers[l],
                             net.Param(Str("dec.l", l, ".W")),
                             net.Param(Str("dec.l", l, ".b")), dpre_z);
  }
  Matrix2D dft = detail::SegmentHeadBackward(net, ft[top], head, dlogits);
  AddInPlace(dft, dz);
  for (std::size_t l = top; l >= 1; --l) {
    Matrix2D dpre_l = ReluBackward(pre[l], dft);
    dft = TdnnBackward(ft[l - 1], net.cfg.layers[l - 1], net.LayerW(l - 1),
                       net.LayerB(l - 1), dpre_l);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Batch-level entry points used by the trainer.  For the x systems the batch
// is a list of chunks processed independently; losses and gradients are
// averaged over the batch.

inline StepResult TrainStepD(Network& net, const Matrix2D& x,
                             const std::vector<int>& labels, RngStream& noise_rng) {
  if (net.cfg.ladder) return DladderStep(net, x, labels, noise_rng);
  return DvectorStep(net, x, labels);
}

inline StepResult TrainStepX(Network& net, const std::vector<const Matrix2D*>& chunks,
                             const std::vector<int>& labels, RngStream& noise_rng) {
  Require(!chunks.empty(), ErrorKind::kState, "empty chunk batch");
  Require(chunks.size() == labels.size(), ErrorKind::kDimension,
          "chunk/label count mismatch");
  const double scale = 1.0 / static_cast<double>(chunks.size());
  StepResult sum;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    StepResult r;
    if (net.cfg.multitask) {
      const Matrix2D noise = DrawNoise(chunks[i]->rows(), chunks[i]->cols(),
                                       net.cfg.ladder->sigma, noise_rng);
      r = XmultiChunkStep(net, *chunks[i], labels[i], noise, true, scale);
    } else if (net.cfg.ladder) {
      const auto noise = DrawXladderNoise(net, chunks[i]->rows(), noise_rng);
      r = XladderChunkStep(net, *chunks[i], labels[i], noise, true, scale);
    } else {
      r = XvectorChunkStep(net, *chunks[i], labels[i], true, scale);
    }
    sum.ce += r.ce;
    sum.denoise += r.denoise;
  }
  sum.ce *= scale;
  sum.denoise *= scale;
  sum.total = sum.ce + sum.denoise;
  return sum;
}

}  // namespace lsv

#endif  // LSV_PASSES_HPP_
