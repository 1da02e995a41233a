// tests/test_nets.cpp
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

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "lsv/nets.hpp"
#include "lsv/passes.hpp"
#include "testutil.hpp"

namespace {

using lsv::ErrorKind;
using lsv::Matrix2D;
using lsvtest::ThrownKind;

lsv::XvectorShape TinyShape() {
  lsv::XvectorShape s;
  s.frame_widths = {6, 6, 6, 6, 8};
  s.segment_widths = {7, 7};
  return s;
}

TEST(BuildDvector, DefaultTopology) {
  const auto net = lsv::BuildDvector(100, 40, 512, 1);
  ASSERT_EQ(net.cfg.layers.size(), 5u);
  EXPECT_EQ(net.cfg.InputDim(), 2040u);  // 51-frame window of 40-dim features
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(net.cfg.layers[i].out_dim, 512u);
    EXPECT_EQ(net.cfg.layers[i].kind, lsv::LayerKind::kFullyConnected);
  }
  EXPECT_EQ(net.cfg.layers.back().kind, lsv::LayerKind::kSoftmax);
  EXPECT_EQ(net.cfg.tap_layer, 3u);
}

TEST(BuildDvector, ParameterCountArithmetic) {
  const auto net = lsv::BuildDvector(4, 40, 8, 1);
  const std::size_t expected =
      2040 * 8 + 8 + 3 * (8 * 8 + 8) + 8 * 4 + 4;
  EXPECT_EQ(net.ParamCount(), expected);
  EXPECT_EQ(net.ParamCount("enc."), expected);
}

TEST(BuildDvector, SingleSpeakerIsConfigError) {
  EXPECT_EQ(ThrownKind([] { lsv::BuildDvector(1, 40, 8, 1); }), ErrorKind::kConfig);
}

TEST(BuildXvector, DefaultTopologyAndTap) {
  const auto net = lsv::BuildXvector(50, 24, lsv::XvectorShape::Desk(), 1);
  ASSERT_EQ(net.cfg.layers.size(), 9u);
  EXPECT_EQ(net.cfg.tap_layer, 6u);  // first segment-level FC (layer 7 of 9)
  EXPECT_EQ(net.cfg.layers[5].kind, lsv::LayerKind::kStatsPool);
  EXPECT_EQ(net.cfg.layers[5].out_dim, 2 * net.cfg.layers[4].out_dim);
}

TEST(BuildXvector, FrameShrinkEqualsSumOfContextSpans) {
  const auto net = lsv::BuildXvector(4, 5, TinyShape(), 1);
  // Context spans 4 + 4 + 6 + 0 + 0 with the default offsets.
  std::size_t span = 0;
  for (const auto& l : net.cfg.layers)
    if (l.kind == lsv::LayerKind::kTimeDelay)
      span += static_cast<std::size_t>(l.ContextSpan());
  EXPECT_EQ(span, 14u);
  EXPECT_EQ(net.cfg.MinFrames(), 15u);
  lsv::RngStream rng(3, "t");
  Matrix2D frames = lsvtest::RandomMatrix(40, 5, rng);
  Matrix2D h = frames;
  for (std::size_t i = 0; i < 5; ++i)
    h = lsv::TdnnForward(h, net.cfg.layers[i], net.LayerW(i), net.LayerB(i));
  EXPECT_EQ(h.rows(), 40u - span);
}

TEST(BuildXvector, DeterministicParameterCount) {
  const auto net = lsv::BuildXvector(4, 5, TinyShape(), 1);
  // Frame stack, then pool (no params), 2 segment FCs, softmax.
  const std::size_t expected = (6 * 5 * 5 + 6) + (6 * 3 * 6 + 6) + (6 * 3 * 6 + 6) +
                               (6 * 1 * 6 + 6) + (8 * 1 * 6 + 8) + (7 * 16 + 7) +
                               (7 * 7 + 7) + (4 * 7 + 4);
  EXPECT_EQ(net.ParamCount(), expected);
}

TEST(BuildXvector, MalformedContextsAreConfigErrors) {
  auto shape = TinyShape();
  shape.contexts[1] = {2, 0, -2};  // not ascending
  EXPECT_EQ(ThrownKind([&] { lsv::BuildXvector(4, 5, shape, 1); }),
            ErrorKind::kConfig);
  shape.contexts[1] = {};
  EXPECT_EQ(ThrownKind([&] { lsv::BuildXvector(4, 5, shape, 1); }),
            ErrorKind::kConfig);
}

TEST(Tdnn, SingleOffsetIsPerFrameAffine) {
  lsv::RngStream rng(5, "t");
  lsv::LayerSpec spec{lsv::LayerKind::kTimeDelay, 3, 4, {0}, lsv::Activation::kNone};
  lsv::ParamTensor w("w", {4, 3}), b("b", {4});
  for (auto& v : w.value) v = rng.NextGaussian();
  const Matrix2D x = lsvtest::RandomMatrix(5, 3, rng);
  const Matrix2D y = lsv::TdnnForward(x, spec, w, b);
  EXPECT_EQ(y.rows(), 5u);
  const Matrix2D y2 = lsv::AffineForward(w, b, x);
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y.data()[i], y2.data()[i], 1e-12);
}

TEST(Tdnn, SymmetricContextShrinksByTwo) {
  lsv::RngStream rng(6, "t");
  lsv::LayerSpec spec{lsv::LayerKind::kTimeDelay, 2, 3, {-1, 0, 1},
                      lsv::Activation::kNone};
  lsv::ParamTensor w("w", {3, 6}), b("b", {3});
  const Matrix2D x = lsvtest::RandomMatrix(5, 2, rng);
  EXPECT_EQ(lsv::TdnnForward(x, spec, w, b).rows(), 3u);
}

TEST(Tdnn, MatchesConcatenationOracleOnRandomInput) {
  lsv::RngStream rng(7, "t");
  lsv::LayerSpec spec{lsv::LayerKind::kTimeDelay, 4, 3, {-2, 0, 3},
                      lsv::Activation::kNone};
  lsv::ParamTensor w("w", {3, 12}), b("b", {3});
  for (auto& v : w.value) v = rng.NextGaussian();
  for (auto& v : b.value) v = rng.NextGaussian();
  const Matrix2D x = lsvtest::RandomMatrix(11, 4, rng);
  const Matrix2D got = lsv::TdnnForward(x, spec, w, b);
  Matrix2D wm(3, 12);
  for (std::size_t i = 0; i < w.value.size(); ++i) wm.data()[i] = w.value[i];
  const Matrix2D want = lsvtest::NaiveTdnn(x, spec.context, wm, b.value);
  ASSERT_TRUE(got.SameShape(want));
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
}

TEST(Tdnn, TooFewFramesIsLengthError) {
  lsv::LayerSpec spec{lsv::LayerKind::kTimeDelay, 2, 2, {-2, 0, 2},
                      lsv::Activation::kNone};
  lsv::ParamTensor w("w", {2, 6}), b("b", {2});
  const Matrix2D x(4, 2, 0.0);  // needs span+1 = 5
  EXPECT_EQ(ThrownKind([&] { lsv::TdnnForward(x, spec, w, b); }),
            ErrorKind::kLength);
}

TEST(AdjointTdnn, RoundTripGradientsMatchFiniteDifferences) {
  lsv::RngStream rng(8, "t");
  lsv::LayerSpec spec{lsv::LayerKind::kTimeDelay, 3, 4, {-1, 0, 2},
                      lsv::Activation::kNone};
  lsv::ParamTensor v("v", {3, 3 * 4}), c("c", {3});
  for (auto& x : v.value) x = rng.NextGaussian();
  for (auto& x : c.value) x = rng.NextGaussian();
  const Matrix2D z = lsvtest::RandomMatrix(6, 4, rng);
  const Matrix2D target = lsvtest::RandomMatrix(9, 3, rng);  // 6 + span(3)
  auto loss = [&] {
    const Matrix2D p = lsv::AdjointTdnnForward(z, spec, v, c);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p.data()[i] - target.data()[i];
      s += d * d;
    }
    return 0.5 * s;
  };
  const Matrix2D p = lsv::AdjointTdnnForward(z, spec, v, c);
  Matrix2D dp = p;
  for (std::size_t i = 0; i < dp.size(); ++i) dp.data()[i] -= target.data()[i];
  v.ZeroGrad();
  c.ZeroGrad();
  lsv::AdjointTdnnBackward(z, spec, v, c, dp);
  const double err = lsv::GradCheck(loss, {&v, &c}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(StatsPool, HandCase) {
  const Matrix2D x = Matrix2D::FromValues(2, 2, {1, 3, 3, 5});
  const Matrix2D out = lsv::StatsPoolForward(x);
  ASSERT_EQ(out.cols(), 4u);
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 4.0);
  EXPECT_NEAR(out(0, 2), 1.0, 1e-9);
  EXPECT_NEAR(out(0, 3), 1.0, 1e-9);
}

TEST(StatsPool, ConstantFramesHaveNearZeroStd) {
  const Matrix2D x(6, 3, 2.5);
  const Matrix2D out = lsv::StatsPoolForward(x);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(out(0, j), 2.5);
    EXPECT_LT(out(0, 3 + j), 1e-4);  // sqrt(eps guard)
  }
}

TEST(StatsPool, ExactlyPermutationInvariant) {
  lsv::RngStream rng(9, "t");
  const Matrix2D x = lsvtest::RandomMatrix(13, 4, rng, 2.0);
  const Matrix2D base = lsv::StatsPoolForward(x);
  std::vector<std::size_t> perm(13);
  for (std::size_t i = 0; i < 13; ++i) perm[i] = i;
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = 0; i + 1 < perm.size(); ++i)
      std::swap(perm[i], perm[i + rng.NextBelow(perm.size() - i)]);
    Matrix2D shuffled(13, 4);
    for (std::size_t i = 0; i < 13; ++i)
      std::copy_n(x.Row(perm[i]), 4, shuffled.Row(i));
    const Matrix2D out = lsv::StatsPoolForward(shuffled);
    for (std::size_t i = 0; i < out.size(); ++i)
      EXPECT_EQ(out.data()[i], base.data()[i]);  // bitwise
  }
}

TEST(StatsPool, ZeroFramesIsError) {
  const Matrix2D x(0, 3);
  EXPECT_EQ(ThrownKind([&] { lsv::StatsPoolForward(x); }), ErrorKind::kLength);
}

TEST(AttachLadder, ClassifierParameterCountUnchangedBothFrameworks) {
  auto d_plain = lsv::BuildDvector(5, 3, 8, 2);
  auto d_ladder = lsv::BuildDvector(5, 3, 8, 2);
  lsv::AttachLadder(d_ladder, {0.3, lsv::DefaultLambda(5), "gaussian-fan-in", "identity"}, 2);
  EXPECT_EQ(d_plain.ParamCount("enc."), d_ladder.ParamCount("enc."));

  auto x_plain = lsv::BuildXvector(5, 4, TinyShape(), 2);
  auto x_ladder = lsv::BuildXvector(5, 4, TinyShape(), 2);
  lsv::AttachLadder(x_ladder, {0.3, lsv::DefaultLambda(6), "gaussian-fan-in", "identity"}, 2);
  EXPECT_EQ(x_plain.ParamCount("enc."), x_ladder.ParamCount("enc."));
}

TEST(AttachLadder, XladderDecoderCoversFrameLevelsOnly) {
  auto net = lsv::BuildXvector(5, 4, TinyShape(), 2);
  lsv::AttachLadder(net, {0.3, lsv::DefaultLambda(6), "gaussian-fan-in", "identity"}, 2);
  EXPECT_EQ(net.cfg.recon_levels, 5u);  // five frame-level layers plus input
  for (int l = 0; l < 5; ++l) EXPECT_TRUE(net.HasParam(lsv::Str("dec.l", l, ".W")));
  EXPECT_FALSE(net.HasParam("dec.l5.W"));
  // No combinators above the frame stack either.
  EXPECT_TRUE(net.HasParam("comb.l5.a1"));
  EXPECT_FALSE(net.HasParam("comb.l6.a1"));
}

TEST(AttachLadder, LambdaLengthMustMatchReconstructedLevels) {
  auto net = lsv::BuildXvector(5, 4, TinyShape(), 2);
  EXPECT_EQ(ThrownKind([&] {
              lsv::AttachLadder(net, {0.3, lsv::DefaultLambda(5), "g", "identity"}, 2);
            }),
            ErrorKind::kConfig);
}

TEST(AttachLadder, DoubleAttachmentIsConfigError) {
  auto net = lsv::BuildDvector(5, 3, 8, 2);
  lsv::AttachLadder(net, {0.3, lsv::DefaultLambda(5), "g", "identity"}, 2);
  EXPECT_EQ(ThrownKind([&] {
              lsv::AttachLadder(net, {0.3, lsv::DefaultLambda(5), "g", "identity"}, 2);
            }),
            ErrorKind::kConfig);
}

TEST(AttachMultitask, DvectorFrameworkUnsupported) {
  auto net = lsv::BuildDvector(5, 3, 8, 2);
  EXPECT_EQ(ThrownKind([&] { lsv::AttachMultitask(net, {0.3, {1000.0}, "g", "identity"}, 2); }),
            ErrorKind::kConfig);
}

TEST(AttachMultitask, DecoderParameterCountMatchesLadderDecoderExactly) {
  auto ladder = lsv::BuildXvector(5, 4, TinyShape(), 2);
  lsv::AttachLadder(ladder, {0.3, lsv::DefaultLambda(6), "g", "identity"}, 2);
  auto multi = lsv::BuildXvector(5, 4, TinyShape(), 2);
  lsv::AttachMultitask(multi, {0.3, {1000.0}, "g", "identity"}, 2);
  EXPECT_EQ(multi.ParamCount("dec."), ladder.ParamCount("dec."));
  EXPECT_EQ(multi.ParamCount("comb."), 0u);
}

TEST(AttachMultitask, LossIsCePlusInputReconstructionOnly) {
  auto net = lsv::BuildXvector(4, 5, TinyShape(), 2);
  lsv::AttachMultitask(net, {0.3, {2.0}, "g", "identity"}, 2);
  lsv::RngStream rng(3, "t"), noise(4, "noise");
  const Matrix2D frames = lsvtest::RandomMatrix(20, 5, rng);
  const Matrix2D n0 = lsv::DrawNoise(20, 5, 0.3, noise);
  net.ZeroGrads();
  const auto r = lsv::XmultiChunkStep(net, frames, 1, n0);
  EXPECT_EQ(r.total, r.ce + r.denoise);
  EXPECT_GT(r.denoise, 0.0);
}

TEST(AttachMultitask, GradCheckBelowTolerance) {
  auto net = lsv::BuildXvector(4, 5, TinyShape(), 12);
  lsv::AttachMultitask(net, {0.3, {1.0}, "g", "identity"}, 12);
  lsv::RngStream rng(3, "t"), noise(4, "noise");
  const Matrix2D frames = lsvtest::RandomMatrix(18, 5, rng);
  const Matrix2D n0 = lsv::DrawNoise(18, 5, 0.3, noise);
  net.ZeroGrads();
  lsv::XmultiChunkStep(net, frames, 1, n0);
  auto params = net.Params();
  const double err = lsv::GradCheck(
      [&] { return lsv::XmultiChunkStep(net, frames, 1, n0, false).total; }, params,
      1e-4);
  EXPECT_LT(err, 1e-4);
}

TEST(ExtractEmbedding, DvectorAveragesWholeWindows) {
  auto net = lsv::BuildDvector(3, 2, 6, 2);
  lsv::RngStream rng(3, "t");
  lsv::FeatureSequence utt{"s", "u", lsvtest::RandomMatrix(102, 2, rng)};
  const auto emb = lsv::ExtractEmbedding(net, utt);
  ASSERT_EQ(emb.size(), 6u);
  // Two windows: the embedding is the mean of their tap activations.
  Matrix2D w1(1, 102), w2(1, 102);
  for (int f = 0; f < 51; ++f)
    for (int d = 0; d < 2; ++d) {
      w1(0, f * 2 + d) = utt.frames(f, d);
      w2(0, f * 2 + d) = utt.frames(51 + f, d);
    }
  const Matrix2D t1 = lsv::DvectorTapForward(net, w1);
  const Matrix2D t2 = lsv::DvectorTapForward(net, w2);
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_NEAR(emb[j], 0.5 * (t1(0, j) + t2(0, j)), 1e-12);
}

TEST(ExtractEmbedding, DuplicatedFramesLeaveEmbeddingUnchanged) {
  auto net = lsv::BuildDvector(3, 2, 6, 2);
  lsv::RngStream rng(4, "t");
  const Matrix2D base = lsvtest::RandomMatrix(102, 2, rng);
  lsv::FeatureSequence utt{"s", "u", base};
  Matrix2D doubled(204, 2);
  for (int i = 0; i < 204; ++i)
    std::copy_n(base.Row(i % 102), 2, doubled.Row(i));
  lsv::FeatureSequence utt2{"s", "u2", doubled};
  const auto e1 = lsv::ExtractEmbedding(net, utt);
  const auto e2 = lsv::ExtractEmbedding(net, utt2);
  for (std::size_t j = 0; j < e1.size(); ++j) EXPECT_NEAR(e1[j], e2[j], 1e-12);
}

TEST(ExtractEmbedding, ShortUtteranceIsLengthErrorNamingMinimum) {
  auto net = lsv::BuildDvector(3, 2, 6, 2);
  lsv::RngStream rng(5, "t");
  lsv::FeatureSequence utt{"s", "u", lsvtest::RandomMatrix(50, 2, rng)};
  try {
    lsv::ExtractEmbedding(net, utt);
    FAIL() << "expected length error";
  } catch (const lsv::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLength);
    EXPECT_NE(std::string(e.what()).find("51"), std::string::npos);
  }
}

TEST(ExtractEmbedding, XvectorDeterministicAndTapSized) {
  auto net = lsv::BuildXvector(4, 5, TinyShape(), 3);
  lsv::RngStream rng(6, "t");
  lsv::FeatureSequence utt{"s", "u", lsvtest::RandomMatrix(30, 5, rng)};
  const auto e1 = lsv::ExtractEmbedding(net, utt);
  const auto e2 = lsv::ExtractEmbedding(net, utt);
  ASSERT_EQ(e1.size(), 7u);  // first segment FC width
  for (std::size_t j = 0; j < e1.size(); ++j) EXPECT_EQ(e1[j], e2[j]);
  lsv::FeatureSequence tiny{"s", "u", lsvtest::RandomMatrix(14, 5, rng)};
  EXPECT_EQ(ThrownKind([&] { lsv::ExtractEmbedding(net, tiny); }),
            ErrorKind::kLength);
}

TEST(XladderGradCheck, AllParametersBelowTolerance) {
  auto net = lsv::BuildXvector(4, 5, TinyShape(), 11);
  lsv::AttachLadder(net, {0.3, {2.0, 1.0, 1.0, 0.5, 0.5, 0.5}, "g", "identity"}, 11);
  lsv::RngStream rng(5, "t"), noise_rng(6, "noise");
  const Matrix2D frames = lsvtest::RandomMatrix(18, 5, rng);
  const auto noise = lsv::DrawXladderNoise(net, 18, noise_rng);
  net.ZeroGrads();
  lsv::XladderChunkStep(net, frames, 2, noise);
  auto params = net.Params();
  const double err = lsv::GradCheck(
      [&] { return lsv::XladderChunkStep(net, frames, 2, noise, false).total; },
      params, 1e-4);
  EXPECT_LT(err, 1e-4);
}

TEST(XvectorGradCheck, PlainNetworkBelowTolerance) {
  auto net = lsv::BuildXvector(4, 5, TinyShape(), 13);
  lsv::RngStream rng(7, "t");
  const Matrix2D frames = lsvtest::RandomMatrix(18, 5, rng);
  net.ZeroGrads();
  lsv::XvectorChunkStep(net, frames, 1);
  auto params = net.Params();
  const double err = lsv::GradCheck(
      [&] { return lsv::XvectorChunkStep(net, frames, 1, false).total; }, params,
      1e-4);
  EXPECT_LT(err, 1e-4);
}

}  // namespace
