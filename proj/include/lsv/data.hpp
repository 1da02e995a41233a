// lsv/data.hpp
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

#ifndef LSV_DATA_HPP_
#define LSV_DATA_HPP_

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/matrix.hpp"
#include "lsv/rng.hpp"

namespace lsv {

// One utterance: T x d feature frames plus identifiers.
struct FeatureSequence {
  std::string speaker_id;
  std::string utterance_id;
  Matrix2D frames;

  void Validate() const {
    Require(!speaker_id.empty() && !utterance_id.empty(), ErrorKind::kFormat,
            "feature sequence needs non-empty speaker and utterance ids");
    Require(frames.rows() >= 1, ErrorKind::kFormat, "utterance ", utterance_id,
            " has no frames");
    Require(frames.AllFinite(), ErrorKind::kNumeric, "utterance ", utterance_id,
            " contains non-finite values");
  }
};

enum class Split { kTrain, kTest };

inline const char* SplitName(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct ManifestEntry {
  std::string speaker_id;
  std::string utterance_id;
  std::string path;
  Split split = Split::kTrain;
};

// Manifest invariants: unique (speaker, utterance) pairs and disjoint
// train/test speaker sets (the verification task is open-set).
struct CorpusManifest {
  std::vector<ManifestEntry> entries;

  void Validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    std::set<std::string> train_spk, test_spk;
    for (const auto& e : entries) {
      auto key = std::make_pair(e.speaker_id, e.utterance_id);
      Require(seen.insert(key).second, ErrorKind::kFormat,
              "duplicate manifest entry ", e.speaker_id, "/", e.utterance_id);
      (e.split == Split::kTrain ? train_spk : test_spk).insert(e.speaker_id);
    }
    for (const auto& s : train_spk)
      Require(test_spk.count(s) == 0, ErrorKind::kFormat, "speaker ", s,
              " appears in both train and test splits");
  }

  std::vector<ManifestEntry> ForSplit(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }

  std::vector<std::string> Speakers(Split s) const {
    std::set<std::string> spk;
    for (const auto& e : entries)
      if (e.split == s) spk.insert(e.speaker_id);
    return {spk.begin(), spk.end()};
  }
};

enum class TrialLabel { kTarget, kNontarget };

struct Trial {
  std::string enroll_speaker;
  std::string test_utterance;
  TrialLabel label = TrialLabel::kTarget;
};

struct TrialList {
  std::vector<Trial> trials;

  void Validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    bool has_target = false, has_nontarget = false;
    for (const auto& t : trials) {
      Require(seen.insert({t.enroll_speaker, t.test_utterance}).second,
              ErrorKind::kFormat, "duplicate trial ", t.enroll_speaker, " vs ",
              t.test_utterance);
      (t.label == TrialLabel::kTarget ? has_target : has_nontarget) = true;
    }
    Require(has_target && has_nontarget, ErrorKind::kState,
            "trial list needs both target and nontarget rows");
  }
};

// ---------------------------------------------------------------------------
// Feature file format: magic "LSVF", u16 version=1, u32 frames, u32 dim,
// then frames*dim little-endian IEEE-754 32-bit values, row-major.

namespace detail {

inline void PutU16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void PutU32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void PutU64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void PutF32(std::string& s, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  PutU32(s, bits);
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  std::size_t offset() const { return pos_; }

  void Need(std::size_t n, const char* what) {
    Require(pos_ + n <= data_.size(), ErrorKind::kFormat, path_, ": truncated ",
            what, " at offset ", pos_, " (need ", n, " bytes, have ",
            data_.size() - pos_, ")");
  }

  std::uint16_t U16(const char* what) {
    Need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 2;
    return v;
  }

  std::uint32_t U32(const char* what) {
    Need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t U64(const char* what) {
    Need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float F32(const char* what) {
    std::uint32_t bits = U32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double F64(const char* what) {
    std::uint64_t bits = U64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void Magic(const char* magic, const char* what) {
    const std::size_t n = std::strlen(magic);
    Need(n, what);
    Require(data_.compare(pos_, n, magic) == 0, ErrorKind::kFormat, path_,
            ": bad magic at offset ", pos_, " (expected \"", magic, "\")");
    pos_ += n;
  }

  std::string Bytes(std::size_t n, const char* what) {
    Need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool AtEnd() const { return pos_ == data_.size(); }

  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string ReadWholeFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kLookup, "cannot open ", path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void WriteWholeFile(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  Require(static_cast<bool>(out), ErrorKind::kLookup, "cannot write ", path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  Require(static_cast<bool>(out), ErrorKind::kLookup, "short write to ", path);
}

}  // namespace detail

inline void WriteFeatures(const std::string& path, const FeatureSequence& seq) {
  seq.Validate();
  std::string buf;
  buf.reserve(14 + seq.frames.size() * 4);
  buf += "LSVF";
  detail::PutU16(buf, 1);
  detail::PutU32(buf, static_cast<std::uint32_t>(seq.frames.rows()));
  detail::PutU32(buf, static_cast<std::uint32_t>(seq.frames.cols()));
  for (std::size_t i = 0; i < seq.frames.rows(); ++i)
    for (std::size_t j = 0; j < seq.frames.cols(); ++j)
      detail::PutF32(buf, static_cast<float>(seq.frames(i, j)));
  detail::WriteWholeFile(path, buf);
}

// speaker/utterance ids are not stored in the file; callers take them from
// the manifest.
inline FeatureSequence ReadFeatures(const std::string& path,
                                    std::string speaker_id = "?",
                                    std::string utterance_id = "?") {
  detail::ByteReader r(detail::ReadWholeFile(path), path);
  r.Magic("LSVF", "magic");
  const std::uint16_t version = r.U16("version");
  Require(version == 1, ErrorKind::kFormat, path, ": unsupported version ", version,
          " at offset 4");
  const std::uint32_t frames = r.U32("frame count");
  const std::uint32_t dim = r.U32("dim");
  Require(dim >= 1, ErrorKind::kFormat, path, ": dim must be >= 1 at offset 10");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(frames) * dim);
  for (std::uint32_t i = 0; i < frames * dim; ++i)
    values.push_back(static_cast<double>(r.F32("payload")));
  Require(r.AtEnd(), ErrorKind::kFormat, path, ": trailing bytes at offset ",
          r.offset());
  FeatureSequence seq;
  seq.speaker_id = std::move(speaker_id);
  seq.utterance_id = std::move(utterance_id);
  seq.frames = Matrix2D::FromValues(frames, dim, std::move(values));
  seq.Validate();
  return seq;
}

// ---------------------------------------------------------------------------
// Manifest: UTF-8 lines "speaker<TAB>utterance<TAB>path<TAB>split".

inline void WriteManifest(const std::string& path, const CorpusManifest& m) {
  std::string buf;
  for (const auto& e : m.entries) {
    buf += e.speaker_id;
    buf += '\t';
    buf += e.utterance_id;
    buf += '\t';
    buf += e.path;
    buf += '\t';
    buf += SplitName(e.split);
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

inline CorpusManifest ReadManifest(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorKind::kLookup, "cannot open manifest ", path);
  CorpusManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    Require(cols.size() == 4, ErrorKind::kFormat, path, ":", lineno,
            ": expected 4 tab-separated fields, got ", cols.size());
    ManifestEntry e;
    e.speaker_id = cols[0];
    e.utterance_id = cols[1];
    e.path = cols[2];
    if (cols[3] == "train") {
      e.split = Split::kTrain;
    } else if (cols[3] == "test") {
      e.split = Split::kTest;
    } else {
      Throw(ErrorKind::kFormat, path, ":", lineno, ": unknown split \"", cols[3], "\"");
    }
    m.entries.push_back(std::move(e));
  }
  m.Validate();
  return m;
}

// ---------------------------------------------------------------------------
// Trials: lines "enroll-speaker<TAB>test-utterance<TAB>target|nontarget".

inline void WriteTrials(const std::string& path, const TrialList& t) {
  std::string buf;
  for (const auto& row : t.trials) {
    buf += row.enroll_speaker;
    buf += '\t';
    buf += row.test_utterance;
    buf += '\t';
    buf += row.label == TrialLabel::kTarget ? "target" : "nontarget";
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

inline TrialList ReadTrials(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorKind::kLookup, "cannot open trials ", path);
  TrialList t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    Require(cols.size() == 3, ErrorKind::kFormat, path, ":", lineno,
            ": expected 3 tab-separated fields, got ", cols.size());
    Trial row;
    row.enroll_speaker = cols[0];
    row.test_utterance = cols[1];
    if (cols[2] == "target") {
      row.label = TrialLabel::kTarget;
    } else if (cols[2] == "nontarget") {
      row.label = TrialLabel::kNontarget;
    } else {
      Throw(ErrorKind::kFormat, path, ":", lineno, ": unknown label \"", cols[2], "\"");
    }
    t.trials.push_back(std::move(row));
  }
  t.Validate();
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation.  Each speaker gets a latent mean drawn from
// N(0, separation^2 I); frames are mean + AR(1) noise (coefficient 0.7)
// + white noise.  Deterministic under (seed, stream layout).

struct CorpusGenConfig {
  std::size_t n_speakers = 32;
  std::size_t utts_per_speaker = 20;
  std::size_t frames_min = 250;
  std::size_t frames_max = 350;
  std::size_t feat_dim = 24;
  double separation = 1.0;
  double ar_coeff = 0.7;
  double ar_noise_std = 1.0;
  double white_noise_std = 0.5;
  Split split = Split::kTrain;
  std::string speaker_prefix = "spk";
  std::uint64_t seed = 42;
};

// Writes one feature file per utterance under dir and returns the manifest.
inline CorpusManifest GenerateCorpus(const CorpusGenConfig& cfg,
                                     const std::string& dir) {
  Require(cfg.n_speakers >= 2, ErrorKind::kConfig,
          "corpus needs at least 2 speakers, got ", cfg.n_speakers);
  Require(cfg.utts_per_speaker >= 1, ErrorKind::kConfig,
          "corpus needs at least 1 utterance per speaker");
  Require(cfg.frames_min >= 1 && cfg.frames_min <= cfg.frames_max,
          ErrorKind::kConfig, "invalid frame range [", cfg.frames_min, ",",
          cfg.frames_max, "]");
  Require(cfg.feat_dim >= 1, ErrorKind::kConfig, "feat_dim must be >= 1");
  Require(cfg.separation >= 0.0, ErrorKind::kConfig, "separation must be >= 0");
  std::filesystem::create_directories(dir);
  CorpusManifest manifest;
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
    const std::string spk =
        Str(cfg.speaker_prefix, "_", SplitName(cfg.split), "_", s);
    RngStream rng(cfg.seed, Str("corpus/", spk));
    std::vector<double> mean(cfg.feat_dim);
    for (auto& v : mean) v = cfg.separation * rng.NextGaussian();
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      const std::string utt = Str(spk, "_utt", u);
      const std::size_t span = cfg.frames_max - cfg.frames_min + 1;
      const std::size_t frames = cfg.frames_min + rng.NextBelow(span);
      Matrix2D x(frames, cfg.feat_dim);
      std::vector<double> ar(cfg.feat_dim, 0.0);
      for (std::size_t t = 0; t < frames; ++t) {
        double* row = x.Row(t);
        for (std::size_t j = 0; j < cfg.feat_dim; ++j) {
          ar[j] = cfg.ar_coeff * ar[j] + cfg.ar_noise_std * rng.NextGaussian();
          row[j] = mean[j] + ar[j] + cfg.white_noise_std * rng.NextGaussian();
        }
      }
      FeatureSequence seq{spk, utt, std::move(x)};
      const std::string path = (std::filesystem::path(dir) / (utt + ".lsvf")).string();
      WriteFeatures(path, seq);
      manifest.entries.push_back({spk, utt, path, cfg.split});
    }
  }
  manifest.Validate();
  return manifest;
}

// ---------------------------------------------------------------------------
// Context windowing for the frame-stacked framework: consecutive
// non-overlapping windows of (left + 1 + right) frames, flattened
// frame-major; the incomplete tail is dropped.

inline std::vector<std::vector<double>> WindowContext(const FeatureSequence& seq,
                                                      std::size_t left = 25,
                                                      std::size_t right = 25) {
  const std::size_t win = left + 1 + right;
  const std::size_t d = seq.frames.cols();
  const std::size_t count = seq.frames.rows() / win;
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    std::vector<double> v(win * d);
    for (std::size_t f = 0; f < win; ++f)
      std::copy_n(seq.frames.Row(w * win + f), d, v.data() + f * d);
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment chunking: greedy left-to-right chunks with lengths drawn uniformly
// in [min_frames, max_frames]; utterances shorter than min_frames are skipped
// and counted.

struct ChunkResult {
  std::vector<FeatureSequence> chunks;
  std::size_t skipped = 0;
};

inline ChunkResult ChunkSegments(const FeatureSequence& seq,
                                 std::size_t min_frames, std::size_t max_frames,
                                 RngStream& rng) {
  Require(min_frames >= 1 && min_frames <= max_frames, ErrorKind::kConfig,
          "chunk range [", min_frames, ",", max_frames, "] invalid");
  ChunkResult result;
  const std::size_t total = seq.frames.rows();
  if (total < min_frames) {
    result.skipped = 1;
    return result;
  }
  std::size_t pos = 0, idx = 0;
  while (total - pos >= min_frames) {
    const std::size_t span = max_frames - min_frames + 1;
    std::size_t len = min_frames + rng.NextBelow(span);
    len = std::min(len, total - pos);
    Matrix2D chunk(len, seq.frames.cols());
    for (std::size_t t = 0; t < len; ++t)
      std::copy_n(seq.frames.Row(pos + t), seq.frames.cols(), chunk.Row(t));
    result.chunks.push_back(
        {seq.speaker_id, Str(seq.utterance_id, "#", idx), std::move(chunk)});
    pos += len;
    ++idx;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Trial construction.  Per test speaker the first `enroll_utts_per_spk`
// utterances in manifest order are reserved for enrollment; reserved
// utterances never appear as test sides.  Pairs are sampled without
// replacement under the seed.

inline TrialList MakeTrials(const CorpusManifest& test_manifest,
                            std::size_t enroll_utts_per_spk, std::size_t n_target,
                            std::size_t n_nontarget, std::uint64_t seed) {
  Require(enroll_utts_per_spk >= 1, ErrorKind::kConfig,
          "enroll_utts_per_spk must be >= 1");
  std::map<std::string, std::vector<std::string>> by_speaker;
  for (const auto& e : test_manifest.entries)
    if (e.split == Split::kTest) by_speaker[e.speaker_id].push_back(e.utterance_id);
  Require(by_speaker.size() >= 2, ErrorKind::kCapacity,
          "trial construction needs at least 2 test speakers, got ",
          by_speaker.size());

  std::map<std::string, std::vector<std::string>> eligible;  // non-enrollment
  for (auto& [spk, utts] : by_speaker) {
    Require(utts.size() > enroll_utts_per_spk, ErrorKind::kCapacity, "speaker ",
            spk, " has ", utts.size(), " utterances; needs more than ",
            enroll_utts_per_spk, " to enroll and test");
    eligible[spk] = std::vector<std::string>(utts.begin() + enroll_utts_per_spk,
                                             utts.end());
  }

  std::vector<Trial> target_pool, nontarget_pool;
  for (const auto& [spk, utts] : eligible)
    for (const auto& u : utts)
      target_pool.push_back({spk, u, TrialLabel::kTarget});
  for (const auto& [spk, _] : eligible)
    for (const auto& [other, utts] : eligible) {
      if (other == spk) continue;
      for (const auto& u : utts)
        nontarget_pool.push_back({spk, u, TrialLabel::kNontarget});
    }

  Require(n_target <= target_pool.size(), ErrorKind::kCapacity, "requested ",
          n_target, " target trials but only ", target_pool.size(),
          " are feasible");
  Require(n_nontarget <= nontarget_pool.size(), ErrorKind::kCapacity, "requested ",
          n_nontarget, " nontarget trials but only ", nontarget_pool.size(),
          " are feasible");

  RngStream rng(seed, "trials");
  auto sample = [&rng](std::vector<Trial>& pool, std::size_t n) {
    // Partial Fisher-Yates: the first n slots end up a uniform sample.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.NextBelow(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
  };
  sample(target_pool, n_target);
  sample(nontarget_pool, n_nontarget);

  TrialList out;
  out.trials = std::move(target_pool);
  out.trials.insert(out.trials.end(), nontarget_pool.begin(), nontarget_pool.end());
  out.Validate();
  return out;
}

// Enrollment reservation rule shared with MakeTrials: the first k utterances
// of each test speaker in manifest order.
inline std::map<std::string, std::vector<std::string>> EnrollmentMap(
    const CorpusManifest& manifest, std::size_t enroll_utts_per_spk) {
  std::map<std::string, std::vector<std::string>> by_speaker;
  for (const auto& e : manifest.entries)
    if (e.split == Split::kTest) by_speaker[e.speaker_id].push_back(e.utterance_id);
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [spk, utts] : by_speaker) {
    Require(utts.size() >= enroll_utts_per_spk, ErrorKind::kCapacity, "speaker ",
            spk, " has fewer utterances than enroll_utts_per_spk");
    out[spk] = std::vector<std::string>(utts.begin(),
                                        utts.begin() + enroll_utts_per_spk);
  }
  return out;
}

}  // namespace lsv

#endif  // LSV_DATA_HPP_
