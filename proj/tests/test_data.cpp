// tests/test_data.cpp
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

#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "lsv/data.hpp"
#include "testutil.hpp"

namespace {

using lsv::ErrorKind;
using lsv::Matrix2D;
using lsvtest::TempDir;
using lsvtest::ThrownKind;

std::string Slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

TEST(GenerateCorpus, CountsAndDeterminism) {
  TempDir tmp;
  lsv::CorpusGenConfig cfg;
  cfg.n_speakers = 4;
  cfg.utts_per_speaker = 2;
  cfg.frames_min = 60;
  cfg.frames_max = 80;
  cfg.feat_dim = 5;
  cfg.seed = 7;
  const auto m1 = lsv::GenerateCorpus(cfg, tmp.Sub("a"));
  EXPECT_EQ(m1.entries.size(), 8u);
  const auto m2 = lsv::GenerateCorpus(cfg, tmp.Sub("b"));
  ASSERT_EQ(m1.entries.size(), m2.entries.size());
  for (std::size_t i = 0; i < m1.entries.size(); ++i)
    EXPECT_EQ(Slurp(m1.entries[i].path), Slurp(m2.entries[i].path));  // bitwise
}

TEST(GenerateCorpus, InvalidRangesAreConfigErrors) {
  TempDir tmp;
  lsv::CorpusGenConfig cfg;
  cfg.n_speakers = 1;
  EXPECT_EQ(ThrownKind([&] { lsv::GenerateCorpus(cfg, tmp.Sub("x")); }),
            ErrorKind::kConfig);
  cfg.n_speakers = 3;
  cfg.frames_min = 50;
  cfg.frames_max = 40;
  EXPECT_EQ(ThrownKind([&] { lsv::GenerateCorpus(cfg, tmp.Sub("x")); }),
            ErrorKind::kConfig);
}

TEST(GenerateCorpus, SeparationWidensSpeakerDistances) {
  // Mean pairwise distance between speaker means, wide vs none, 20 draws
  // each; Welch one-sided t-test.
  TempDir tmp;
  auto mean_dist = [&](double separation, std::uint64_t seed, const std::string& dir) {
    lsv::CorpusGenConfig cfg;
    cfg.n_speakers = 6;
    cfg.utts_per_speaker = 1;
    cfg.frames_min = cfg.frames_max = 40;
    cfg.feat_dim = 8;
    cfg.separation = separation;
    cfg.seed = seed;
    const auto m = lsv::GenerateCorpus(cfg, tmp.Sub(dir));
    std::vector<std::vector<double>> means;
    for (const auto& e : m.entries) {
      const auto seq = lsv::ReadFeatures(e.path, e.speaker_id, e.utterance_id);
      std::vector<double> mu(seq.frames.cols(), 0.0);
      for (std::size_t t = 0; t < seq.frames.rows(); ++t)
        for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += seq.frames(t, j);
      for (auto& v : mu) v /= seq.frames.rows();
      means.push_back(std::move(mu));
    }
    double total = 0;
    int count = 0;
    for (std::size_t i = 0; i < means.size(); ++i)
      for (std::size_t j = i + 1; j < means.size(); ++j) {
        double d2 = 0;
        for (std::size_t k = 0; k < means[i].size(); ++k)
          d2 += (means[i][k] - means[j][k]) * (means[i][k] - means[j][k]);
        total += std::sqrt(d2);
        ++count;
      }
    return total / count;
  };
  std::vector<double> wide, none;
  for (std::uint64_t s = 0; s < 20; ++s) {
    wide.push_back(mean_dist(3.0, 100 + s, lsv::Str("w", s)));
    none.push_back(mean_dist(0.0, 100 + s, lsv::Str("n", s)));
  }
  EXPECT_LT(lsvtest::WelchPValue(wide, none), 0.01);
}

TEST(WindowContext, CountsFollowFloorDivision) {
  lsv::RngStream rng(2, "t");
  auto mk = [&](std::size_t frames) {
    return lsv::FeatureSequence{"s", "u", lsvtest::RandomMatrix(frames, 3, rng)};
  };
  EXPECT_EQ(lsv::WindowContext(mk(102)).size(), 2u);
  EXPECT_EQ(lsv::WindowContext(mk(152)).size(), 2u);  // 50-frame tail dropped
  EXPECT_EQ(lsv::WindowContext(mk(50)).size(), 0u);
  EXPECT_EQ(lsv::WindowContext(mk(51 * 7 + 50)).size(), 7u);
}

TEST(WindowContext, FlattensFrameMajor) {
  lsv::RngStream rng(3, "t");
  lsv::FeatureSequence seq{"s", "u", lsvtest::RandomMatrix(51, 2, rng)};
  const auto windows = lsv::WindowContext(seq);
  ASSERT_EQ(windows.size(), 1u);
  ASSERT_EQ(windows[0].size(), 102u);
  for (int f = 0; f < 51; ++f)
    for (int d = 0; d < 2; ++d)
      EXPECT_EQ(windows[0][f * 2 + d], seq.frames(f, d));
}

TEST(ChunkSegments, LengthsStayInRange) {
  lsv::RngStream rng(11, "chunk");
  lsv::FeatureSequence seq{"s", "u", Matrix2D(1000, 3, 1.0)};
  const auto result = lsv::ChunkSegments(seq, 200, 400, rng);
  EXPECT_EQ(result.skipped, 0u);
  std::size_t total = 0;
  for (const auto& c : result.chunks) {
    EXPECT_GE(c.frames.rows(), 200u);
    EXPECT_LE(c.frames.rows(), 400u);
    total += c.frames.rows();
  }
  EXPECT_LE(total, 1000u);
}

TEST(ChunkSegments, ShortUtteranceSkipped) {
  lsv::RngStream rng(11, "chunk");
  lsv::FeatureSequence seq{"s", "u", Matrix2D(150, 3, 1.0)};
  const auto result = lsv::ChunkSegments(seq, 200, 400, rng);
  EXPECT_TRUE(result.chunks.empty());
  EXPECT_EQ(result.skipped, 1u);
}

TEST(ChunkSegments, DeterministicUnderSeed) {
  lsv::FeatureSequence seq{"s", "u", Matrix2D(950, 2, 0.5)};
  lsv::RngStream a(13, "chunk"), b(13, "chunk");
  const auto r1 = lsv::ChunkSegments(seq, 100, 250, a);
  const auto r2 = lsv::ChunkSegments(seq, 100, 250, b);
  ASSERT_EQ(r1.chunks.size(), r2.chunks.size());
  for (std::size_t i = 0; i < r1.chunks.size(); ++i)
    EXPECT_EQ(r1.chunks[i].frames.rows(), r2.chunks[i].frames.rows());
  EXPECT_EQ(ThrownKind([&] { lsv::ChunkSegments(seq, 300, 200, a); }),
            ErrorKind::kConfig);
}

TEST(FeatureFile, RoundTripWithinFloatRounding) {
  TempDir tmp;
  lsv::RngStream rng(5, "t");
  lsv::FeatureSequence seq{"spk", "utt", lsvtest::RandomMatrix(7, 3, rng, 10.0)};
  const std::string path = tmp.Sub("utt.lsvf");
  lsv::WriteFeatures(path, seq);
  const auto back = lsv::ReadFeatures(path, "spk", "utt");
  ASSERT_TRUE(back.frames.SameShape(seq.frames));
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const float stored = static_cast<float>(seq.frames.data()[i]);
    EXPECT_EQ(back.frames.data()[i], static_cast<double>(stored));
  }
}

TEST(FeatureFile, CorruptedMagicIsFormatErrorNamingOffset) {
  TempDir tmp;
  lsv::FeatureSequence seq{"s", "u", Matrix2D(2, 2, 1.0)};
  const std::string path = tmp.Sub("bad.lsvf");
  lsv::WriteFeatures(path, seq);
  std::string data = Slurp(path);
  data[0] = 'X';
  std::ofstream(path, std::ios::binary) << data;
  try {
    lsv::ReadFeatures(path);
    FAIL() << "expected format error";
  } catch (const lsv::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
}

TEST(FeatureFile, TruncatedPayloadIsFormatError) {
  TempDir tmp;
  lsv::FeatureSequence seq{"s", "u", Matrix2D(4, 3, 1.0)};
  const std::string path = tmp.Sub("trunc.lsvf");
  lsv::WriteFeatures(path, seq);
  std::string data = Slurp(path);
  data.resize(data.size() - 5);  // header dims now exceed the payload
  std::ofstream(path, std::ios::binary | std::ios::trunc) << data;
  EXPECT_EQ(ThrownKind([&] { lsv::ReadFeatures(path); }), ErrorKind::kFormat);
}

TEST(FeatureFile, BadVersionIsFormatError) {
  TempDir tmp;
  lsv::FeatureSequence seq{"s", "u", Matrix2D(1, 1, 1.0)};
  const std::string path = tmp.Sub("ver.lsvf");
  lsv::WriteFeatures(path, seq);
  std::string data = Slurp(path);
  data[4] = 9;
  std::ofstream(path, std::ios::binary | std::ios::trunc) << data;
  EXPECT_EQ(ThrownKind([&] { lsv::ReadFeatures(path); }), ErrorKind::kFormat);
}

TEST(Manifest, RoundTripAndSplitDisjointness) {
  TempDir tmp;
  lsv::CorpusManifest m;
  m.entries.push_back({"a", "a_1", "p1", lsv::Split::kTrain});
  m.entries.push_back({"b", "b_1", "p2", lsv::Split::kTest});
  const std::string path = tmp.Sub("manifest.tsv");
  lsv::WriteManifest(path, m);
  const auto back = lsv::ReadManifest(path);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].split, lsv::Split::kTest);

  lsv::CorpusManifest bad;
  bad.entries.push_back({"a", "a_1", "p1", lsv::Split::kTrain});
  bad.entries.push_back({"a", "a_2", "p2", lsv::Split::kTest});
  EXPECT_EQ(ThrownKind([&] { bad.Validate(); }), ErrorKind::kFormat);
}

TEST(MakeTrials, ExactCountsAndReservedEnrollment) {
  TempDir tmp;
  lsv::CorpusGenConfig cfg;
  cfg.n_speakers = 8;
  cfg.utts_per_speaker = 10;
  cfg.frames_min = cfg.frames_max = 60;
  cfg.feat_dim = 4;
  cfg.split = lsv::Split::kTest;
  cfg.seed = 3;
  const auto manifest = lsv::GenerateCorpus(cfg, tmp.Sub("c"));
  const auto trials = lsv::MakeTrials(manifest, 1, 100, 100, 9);
  std::size_t targets = 0, nontargets = 0;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& t : trials.trials) {
    (t.label == lsv::TrialLabel::kTarget ? targets : nontargets) += 1;
    EXPECT_TRUE(seen.insert({t.enroll_speaker, t.test_utterance}).second);
  }
  EXPECT_EQ(targets, 100u);
  EXPECT_EQ(nontargets, 100u);
  const auto enroll = lsv::EnrollmentMap(manifest, 1);
  for (const auto& [spk, utts] : enroll)
    for (const auto& u : utts)
      for (const auto& t : trials.trials) EXPECT_NE(t.test_utterance, u);
}

TEST(MakeTrials, CapacityErrorsNameFeasibleMaximum) {
  TempDir tmp;
  lsv::CorpusGenConfig cfg;
  cfg.n_speakers = 3;
  cfg.utts_per_speaker = 2;
  cfg.frames_min = cfg.frames_max = 60;
  cfg.feat_dim = 4;
  cfg.split = lsv::Split::kTest;
  const auto manifest = lsv::GenerateCorpus(cfg, tmp.Sub("c"));
  // 1 non-enrolled utterance per speaker: 3 targets max, 6 nontargets max.
  try {
    lsv::MakeTrials(manifest, 1, 10, 2, 9);
    FAIL() << "expected capacity error";
  } catch (const lsv::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapacity);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
  EXPECT_EQ(ThrownKind([&] { lsv::MakeTrials(manifest, 1, 2, 100, 9); }),
            ErrorKind::kCapacity);
}

TEST(MakeTrials, DeterministicUnderSeed) {
  TempDir tmp;
  lsv::CorpusGenConfig cfg;
  cfg.n_speakers = 5;
  cfg.utts_per_speaker = 6;
  cfg.frames_min = cfg.frames_max = 60;
  cfg.feat_dim = 4;
  cfg.split = lsv::Split::kTest;
  const auto manifest = lsv::GenerateCorpus(cfg, tmp.Sub("c"));
  const auto t1 = lsv::MakeTrials(manifest, 2, 15, 20, 4);
  const auto t2 = lsv::MakeTrials(manifest, 2, 15, 20, 4);
  ASSERT_EQ(t1.trials.size(), t2.trials.size());
  for (std::size_t i = 0; i < t1.trials.size(); ++i) {
    EXPECT_EQ(t1.trials[i].enroll_speaker, t2.trials[i].enroll_speaker);
    EXPECT_EQ(t1.trials[i].test_utterance, t2.trials[i].test_utterance);
  }
}

TEST(Trials, FileRoundTrip) {
  TempDir tmp;
  lsv::TrialList t;
  t.trials.push_back({"a", "b_1", lsv::TrialLabel::kTarget});
  t.trials.push_back({"a", "c_1", lsv::TrialLabel::kNontarget});
  const std::string path = tmp.Sub("trials.tsv");
  lsv::WriteTrials(path, t);
  const auto back = lsv::ReadTrials(path);
  ASSERT_EQ(back.trials.size(), 2u);
  EXPECT_EQ(back.trials[0].label, lsv::TrialLabel::kTarget);
  EXPECT_EQ(back.trials[1].label, lsv::TrialLabel::kNontarget);
}

}  // namespace
