// lsv/train.hpp
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

#ifndef LSV_TRAIN_HPP_
#define LSV_TRAIN_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/data.hpp"
#include "lsv/eval.hpp"
#include "lsv/nets.hpp"
#include "lsv/numcore.hpp"
#include "lsv/passes.hpp"
#include "lsv/rng.hpp"

namespace lsv {

// ---------------------------------------------------------------------------
// Learning-rate schedule: flat for the first 5 epochs, then halved every
// 2 epochs (at epochs 6, 8, 10, 12, 14, ...).

inline double LrSchedule(std::size_t epoch, double base_lr) {
  Require(epoch >= 1, ErrorKind::kConfig, "epochs are 1-based, got ", epoch);
  if (epoch <= 5) return base_lr;
  const std::size_t halvings = (epoch - 5 + 1) / 2;  // ceil((epoch - 5) / 2)
  return base_lr / static_cast<double>(1ull << halvings);
}

// ---------------------------------------------------------------------------
// Adam with bias correction.

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<std::vector<double>> m, v;  // parallel to the parameter list
  std::uint64_t step = 0;

  void Init(const std::vector<ParamTensor*>& params) {
    m.clear();
    v.clear();
    for (const ParamTensor* p : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
    step = 0;
  }
};

inline void AdamStep(const std::vector<ParamTensor*>& params, OptimState& state,
                     double lr, const AdamHyper& hyper = {}) {
  Require(state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorKind::kDimension, "optimizer state does not match parameter list");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamTensor& p = *params[i];
    Require(state.m[i].size() == p.size(), ErrorKind::kDimension,
            "optimizer state shape mismatch for ", p.name);
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    double* val = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Network blueprint: the serializable description a checkpoint carries so
// evaluation can rebuild the exact topology without the training flags.

struct NetBlueprint {
  Framework framework = Framework::kDvector;
  std::size_t n_speakers = 0;
  std::size_t feat_dim = 0;
  std::size_t d_width = 512;
  XvectorShape shape;
  bool has_ladder = false;
  bool multitask = false;
  LadderConfig lcfg;

  static NetBlueprint Of(const Network& net) {
    NetBlueprint b;
    b.framework = net.cfg.framework;
    b.n_speakers = net.cfg.n_speakers;
    b.feat_dim = net.cfg.feat_dim;
    if (b.framework == Framework::kDvector) {
      b.d_width = net.cfg.layers[0].out_dim;
    } else {
      b.shape.frame_widths.clear();
      b.shape.contexts.clear();
      b.shape.segment_widths.clear();
      for (const auto& l : net.cfg.layers) {
        if (l.kind == LayerKind::kTimeDelay) {
          b.shape.frame_widths.push_back(l.out_dim);
          b.shape.contexts.push_back(l.context);
        } else if (l.kind == LayerKind::kFullyConnected) {
          b.shape.segment_widths.push_back(l.out_dim);
        }
      }
    }
    b.multitask = net.cfg.multitask;
    b.has_ladder = net.cfg.ladder.has_value() && !net.cfg.multitask;
    if (net.cfg.ladder) b.lcfg = *net.cfg.ladder;
    return b;
  }

  Network Build(std::uint64_t seed = 0) const {
    Network net = framework == Framework::kDvector
                      ? BuildDvector(n_speakers, feat_dim, d_width, seed)
                      : BuildXvector(n_speakers, feat_dim, shape, seed);
    if (has_ladder) AttachLadder(net, lcfg, seed);
    if (multitask) AttachMultitask(net, lcfg, seed);
    return net;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint: magic "LSVC", u16 version, u64 config hash, u32 epoch, then
// length-prefixed named blobs of 64-bit values.  Config fields ride along as
// "cfg.*" blobs so a mismatched resume can name the differing field.

using Blobs = std::vector<std::pair<std::string, std::vector<double>>>;

namespace detail {

inline double U64AsDouble(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

inline std::uint64_t DoubleAsU64(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}

inline std::uint64_t HashBlobs(const Blobs& blobs) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, values] : blobs) {
    mix(name.data(), name.size());
    for (double v : values) {
      const std::uint64_t bits = DoubleAsU64(v);
      mix(&bits, 8);
    }
  }
  return h;
}

}  // namespace detail

struct TrainConfig {
  SystemId system = SystemId::kDvector;
  std::size_t epochs = 15;
  double base_lr = 1e-3;
  std::size_t batch_size = 64;
  AdamHyper adam;
  std::uint64_t seed = 42;
  std::size_t eval_every = 3;
  std::size_t chunk_min = 200;
  std::size_t chunk_max = 400;
  std::size_t enroll_utts = 1;

  void Validate() const {
    Require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
    Require(base_lr > 0.0, ErrorKind::kConfig, "base_lr must be > 0");
    Require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
    Require(eval_every >= 1, ErrorKind::kConfig, "eval_every must be >= 1");
    Require(chunk_min >= 1 && chunk_min <= chunk_max, ErrorKind::kConfig,
            "invalid chunk range [", chunk_min, ",", chunk_max, "]");
  }
};

// Config blobs cover the network blueprint and the semantic training fields;
// paths are deliberately excluded so identical runs in different directories
// produce identical checkpoint bytes.
inline Blobs ConfigBlobs(const NetBlueprint& bp, const TrainConfig& cfg) {
  Blobs blobs;
  auto add = [&blobs](const std::string& name, std::vector<double> v) {
    blobs.emplace_back(name, std::move(v));
  };
  add("cfg.framework", {bp.framework == Framework::kDvector ? 0.0 : 1.0});
  add("cfg.n_speakers", {static_cast<double>(bp.n_speakers)});
  add("cfg.feat_dim", {static_cast<double>(bp.feat_dim)});
  if (bp.framework == Framework::kDvector) {
    add("cfg.d_width", {static_cast<double>(bp.d_width)});
  } else {
    std::vector<double> fw, sw;
    for (auto w : bp.shape.frame_widths) fw.push_back(static_cast<double>(w));
    for (auto w : bp.shape.segment_widths) sw.push_back(static_cast<double>(w));
    add("cfg.frame_widths", std::move(fw));
    add("cfg.seg_widths", std::move(sw));
    for (std::size_t i = 0; i < bp.shape.contexts.size(); ++i) {
      std::vector<double> ctx;
      for (int o : bp.shape.contexts[i]) ctx.push_back(static_cast<double>(o));
      add(Str("cfg.ctx", i + 1), std::move(ctx));
    }
  }
  add("cfg.has_ladder", {bp.has_ladder ? 1.0 : 0.0});
  add("cfg.multitask", {bp.multitask ? 1.0 : 0.0});
  if (bp.has_ladder || bp.multitask) {
    add("cfg.sigma", {bp.lcfg.sigma});
    add("cfg.lambda", bp.lcfg.lambda);
  }
  add("cfg.system", {static_cast<double>(static_cast<int>(cfg.system))});
  add("cfg.epochs", {static_cast<double>(cfg.epochs)});
  add("cfg.base_lr", {cfg.base_lr});
  add("cfg.batch_size", {static_cast<double>(cfg.batch_size)});
  add("cfg.beta1", {cfg.adam.beta1});
  add("cfg.beta2", {cfg.adam.beta2});
  add("cfg.adam_eps", {cfg.adam.eps});
  add("cfg.seed", {detail::U64AsDouble(cfg.seed)});
  add("cfg.eval_every", {static_cast<double>(cfg.eval_every)});
  add("cfg.chunk_min", {static_cast<double>(cfg.chunk_min)});
  add("cfg.chunk_max", {static_cast<double>(cfg.chunk_max)});
  add("cfg.enroll_utts", {static_cast<double>(cfg.enroll_utts)});
  return blobs;
}

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint32_t epoch = 0;
  Blobs blobs;

  const std::vector<double>* Find(const std::string& name) const {
    for (const auto& [n, v] : blobs)
      if (n == name) return &v;
    return nullptr;
  }

  const std::vector<double>& Get(const std::string& name) const {
    const auto* v = Find(name);
    Require(v != nullptr, ErrorKind::kFormat, "checkpoint blob ", name, " missing");
    return *v;
  }
};

inline void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf += "LSVC";
  detail::PutU16(buf, 1);
  detail::PutU64(buf, ckpt.config_hash);
  detail::PutU32(buf, ckpt.epoch);
  detail::PutU32(buf, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, values] : ckpt.blobs) {
    detail::PutU32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::PutU64(buf, values.size());
    for (double v : values) detail::PutU64(buf, detail::DoubleAsU64(v));
  }
  detail::WriteWholeFile(path, buf);
}

inline Checkpoint LoadCheckpoint(const std::string& path) {
  detail::ByteReader r(detail::ReadWholeFile(path), path);
  r.Magic("LSVC", "magic");
  const std::uint16_t version = r.U16("version");
  Require(version == 1, ErrorKind::kFormat, path, ": unsupported checkpoint version ",
          version);
  Checkpoint ckpt;
  ckpt.config_hash = r.U64("config hash");
  ckpt.epoch = r.U32("epoch");
  const std::uint32_t n_blobs = r.U32("blob count");
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    const std::uint32_t name_len = r.U32("blob name length");
    std::string name = r.Bytes(name_len, "blob name");
    const std::uint64_t count = r.U64("blob length");
    std::vector<double> values;
    values.reserve(count);
    for (std::uint64_t j = 0; j < count; ++j) values.push_back(r.F64("blob values"));
    ckpt.blobs.emplace_back(std::move(name), std::move(values));
  }
  Require(r.AtEnd(), ErrorKind::kFormat, path, ": trailing bytes at offset ",
          r.offset());
  return ckpt;
}

// Rebuilds the blueprint stored in a checkpoint.
inline NetBlueprint BlueprintFromCheckpoint(const Checkpoint& ckpt) {
  NetBlueprint bp;
  bp.framework = ckpt.Get("cfg.framework")[0] == 0.0 ? Framework::kDvector
                                                     : Framework::kXvector;
  bp.n_speakers = static_cast<std::size_t>(ckpt.Get("cfg.n_speakers")[0]);
  bp.feat_dim = static_cast<std::size_t>(ckpt.Get("cfg.feat_dim")[0]);
  if (bp.framework == Framework::kDvector) {
    bp.d_width = static_cast<std::size_t>(ckpt.Get("cfg.d_width")[0]);
  } else {
    bp.shape.frame_widths.clear();
    bp.shape.segment_widths.clear();
    bp.shape.contexts.clear();
    for (double w : ckpt.Get("cfg.frame_widths"))
      bp.shape.frame_widths.push_back(static_cast<std::size_t>(w));
    for (double w : ckpt.Get("cfg.seg_widths"))
      bp.shape.segment_widths.push_back(static_cast<std::size_t>(w));
    for (std::size_t i = 1; i <= bp.shape.frame_widths.size(); ++i) {
      std::vector<int> ctx;
      for (double o : ckpt.Get(Str("cfg.ctx", i)))
        ctx.push_back(static_cast<int>(o));
      bp.shape.contexts.push_back(std::move(ctx));
    }
  }
  bp.has_ladder = ckpt.Get("cfg.has_ladder")[0] != 0.0;
  bp.multitask = ckpt.Get("cfg.multitask")[0] != 0.0;
  if (bp.has_ladder || bp.multitask) {
    bp.lcfg.sigma = ckpt.Get("cfg.sigma")[0];
    bp.lcfg.lambda = ckpt.Get("cfg.lambda");
  }
  return bp;
}

inline SystemId SystemFromCheckpoint(const Checkpoint& ckpt) {
  return static_cast<SystemId>(static_cast<int>(ckpt.Get("cfg.system")[0]));
}

// Compares the caller's expected configuration against the checkpoint's,
// naming the first differing field.
inline void VerifyCheckpointConfig(const Checkpoint& ckpt, const Blobs& expected) {
  for (const auto& [name, values] : expected) {
    const auto* stored = ckpt.Find(name);
    Require(stored != nullptr, ErrorKind::kConfig,
            "checkpoint incompatible: field ", name, " missing");
    const bool equal =
        stored->size() == values.size() &&
        std::equal(stored->begin(), stored->end(), values.begin(),
                   [](double a, double b) {
                     return detail::DoubleAsU64(a) == detail::DoubleAsU64(b);
                   });
    Require(equal, ErrorKind::kConfig, "checkpoint incompatible: field ", name,
            " differs");
  }
  Require(ckpt.config_hash == detail::HashBlobs(expected), ErrorKind::kConfig,
          "checkpoint incompatible: config hash differs");
}

// ---------------------------------------------------------------------------
// Metrics log: CSV epoch,step,lr,ce,denoise,total,eer with eer blank except
// on the closing step of evaluation epochs.

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double ce = 0.0;
  double denoise = 0.0;
  double total = 0.0;
  std::optional<double> eer;
};

inline void WriteMetricsCsv(const std::string& path,
                            const std::vector<MetricsRow>& rows) {
  std::string buf = "epoch,step,lr,ce,denoise,total,eer\n";
  for (const auto& r : rows) {
    buf += Str(r.epoch, ",", r.step, ",");
    buf += FormatG17(r.lr);
    buf += ',';
    buf += FormatG17(r.ce);
    buf += ',';
    buf += FormatG17(r.denoise);
    buf += ',';
    buf += FormatG17(r.total);
    buf += ',';
    if (r.eer) buf += FormatG17(*r.eer);
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

inline std::vector<MetricsRow> ReadMetricsCsv(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorKind::kLookup, "cannot open metrics ", path);
  std::vector<MetricsRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    Require(cols.size() == 7, ErrorKind::kFormat, path, ": expected 7 columns, got ",
            cols.size());
    MetricsRow r;
    r.epoch = std::stoull(cols[0]);
    r.step = std::stoull(cols[1]);
    r.lr = std::stod(cols[2]);
    r.ce = std::stod(cols[3]);
    r.denoise = std::stod(cols[4]);
    r.total = std::stod(cols[5]);
    if (!cols[6].empty()) r.eer = std::stod(cols[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainOutput {
  std::vector<std::string> checkpoint_paths;
  std::string metrics_path;
  std::vector<MetricsRow> metrics;
  std::size_t skipped_short_utterances = 0;
  std::optional<double> final_eer;
};

namespace detail {

struct TrainUnits {
  // d framework: one row per context window.  x framework: one entry per
  // chunk.
  std::vector<std::vector<double>> windows;
  std::vector<Matrix2D> chunks;
  std::vector<int> labels;
  std::size_t skipped = 0;

  std::size_t Count() const {
    return windows.empty() ? chunks.size() : windows.size();
  }
};

inline TrainUnits BuildTrainUnits(const Network& net,
                                  const std::vector<ManifestEntry>& entries,
                                  const std::map<std::string, int>& label_of,
                                  const TrainConfig& cfg) {
  TrainUnits units;
  if (net.cfg.framework == Framework::kDvector) {
    for (const auto& e : entries) {
      FeatureSequence seq = ReadFeatures(e.path, e.speaker_id, e.utterance_id);
      Require(seq.frames.cols() == net.cfg.feat_dim, ErrorKind::kDimension,
              "utterance ", e.utterance_id, " has dim ", seq.frames.cols(),
              " but the network expects ", net.cfg.feat_dim);
      auto windows = WindowContext(seq, 25, 25);
      if (windows.empty()) {
        ++units.skipped;
        continue;
      }
      const int label = label_of.at(e.speaker_id);
      for (auto& w : windows) {
        units.windows.push_back(std::move(w));
        units.labels.push_back(label);
      }
    }
  } else {
    RngStream chunk_rng(cfg.seed, "chunk");
    for (const auto& e : entries) {
      FeatureSequence seq = ReadFeatures(e.path, e.speaker_id, e.utterance_id);
      Require(seq.frames.cols() == net.cfg.feat_dim, ErrorKind::kDimension,
              "utterance ", e.utterance_id, " has dim ", seq.frames.cols(),
              " but the network expects ", net.cfg.feat_dim);
      auto result = ChunkSegments(seq, cfg.chunk_min, cfg.chunk_max, chunk_rng);
      units.skipped += result.skipped;
      const int label = label_of.at(e.speaker_id);
      for (auto& c : result.chunks) {
        Require(c.frames.rows() >= net.cfg.MinFrames(), ErrorKind::kLength,
                "chunk shorter than the network receptive field; raise chunk_min");
        units.chunks.push_back(std::move(c.frames));
        units.labels.push_back(label);
      }
    }
  }
  return units;
}

}  // namespace detail

// Trains `net` in place on the manifest's train split.  Writes one
// checkpoint per epoch plus metrics.csv under out_dir.  When eval trials are
// given, the test-split EER (cosine backend, clean path) is logged every
// eval_every epochs.  `resume_path` continues bit-identically from a saved
// checkpoint.
inline TrainOutput Train(Network& net, const CorpusManifest& manifest,
                         const TrainConfig& cfg, const std::string& out_dir,
                         const TrialList* eval_trials = nullptr,
                         const std::string& resume_path = "") {
  cfg.Validate();
  Require(cfg.system == net.System(), ErrorKind::kConfig, "system ",
          SystemName(cfg.system), " does not match the network (",
          SystemName(net.System()), ")");
  const auto train_entries = manifest.ForSplit(Split::kTrain);
  Require(!train_entries.empty(), ErrorKind::kConfig,
          "manifest has no train-split entries");

  std::map<std::string, int> label_of;
  for (const auto& spk : manifest.Speakers(Split::kTrain))
    label_of.emplace(spk, static_cast<int>(label_of.size()));
  Require(label_of.size() == net.cfg.n_speakers, ErrorKind::kConfig,
          "network was built for ", net.cfg.n_speakers, " speakers but the train "
          "split has ", label_of.size());

  detail::TrainUnits units = detail::BuildTrainUnits(net, train_entries, label_of, cfg);
  Require(units.Count() >= 1, ErrorKind::kConfig,
          "no trainable units (all utterances too short?)");

  std::filesystem::create_directories(out_dir);
  const NetBlueprint blueprint = NetBlueprint::Of(net);
  const Blobs cfg_blobs = ConfigBlobs(blueprint, cfg);
  const std::uint64_t cfg_hash = detail::HashBlobs(cfg_blobs);

  auto params = net.Params();
  OptimState optim;
  optim.Init(params);
  RngStream shuffle_rng(cfg.seed, "shuffle");
  RngStream noise_rng(cfg.seed, "noise");

  std::size_t start_epoch = 1;
  if (!resume_path.empty()) {
    const Checkpoint ckpt = LoadCheckpoint(resume_path);
    VerifyCheckpointConfig(ckpt, cfg_blobs);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& vals = ckpt.Get(Str("param.", params[i]->name));
      Require(vals.size() == params[i]->size(), ErrorKind::kFormat,
              "checkpoint parameter ", params[i]->name, " has wrong size");
      params[i]->value = vals;
      optim.m[i] = ckpt.Get(Str("adam.m.", params[i]->name));
      optim.v[i] = ckpt.Get(Str("adam.v.", params[i]->name));
    }
    optim.step = detail::DoubleAsU64(ckpt.Get("adam.step")[0]);
    auto restore_rng = [&ckpt](RngStream& rng, const std::string& name) {
      const auto& s = ckpt.Get(name);
      RngStream::State st;
      for (int i = 0; i < 4; ++i) st.words[i] = detail::DoubleAsU64(s[i]);
      st.has_cached = s[4] != 0.0;
      st.cached = s[5];
      rng.Restore(st);
    };
    restore_rng(shuffle_rng, "rng.shuffle");
    restore_rng(noise_rng, "rng.noise");
    start_epoch = ckpt.epoch + 1;
  }

  // Replay of the shuffle stream makes batch order deterministic; the noise
  // stream is independent so sigma = 0 systems see identical batches.
  FeatureStore test_store;
  if (eval_trials) test_store = LoadSplitFeatures(manifest, Split::kTest);

  TrainOutput out;
  out.skipped_short_utterances = units.skipped;
  out.metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
  const std::size_t n_units = units.Count();
  const std::size_t steps_per_epoch = (n_units + cfg.batch_size - 1) / cfg.batch_size;
  std::string last_good_checkpoint = resume_path;

  for (std::size_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = LrSchedule(epoch, cfg.base_lr);
    std::vector<std::size_t> order(n_units);
    for (std::size_t i = 0; i < n_units; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n_units; ++i) {
      const std::size_t j = i + shuffle_rng.NextBelow(n_units - i);
      std::swap(order[i], order[j]);
    }

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, n_units);
      net.ZeroGrads();
      StepResult r;
      if (net.cfg.framework == Framework::kDvector) {
        const std::size_t dim = units.windows[0].size();
        Matrix2D x(end - begin, dim);
        std::vector<int> labels(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          std::copy(units.windows[order[i]].begin(), units.windows[order[i]].end(),
                    x.Row(i - begin));
          labels[i - begin] = units.labels[order[i]];
        }
        r = TrainStepD(net, x, labels, noise_rng);
      } else {
        std::vector<const Matrix2D*> chunks(end - begin);
        std::vector<int> labels(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          chunks[i - begin] = &units.chunks[order[i]];
          labels[i - begin] = units.labels[order[i]];
        }
        r = TrainStepX(net, chunks, labels, noise_rng);
      }
      if (!std::isfinite(r.total)) {
        WriteMetricsCsv(out.metrics_path, out.metrics);
        Throw(ErrorKind::kNumeric, "non-finite loss at epoch ", epoch, " step ",
              s + 1, "; last good checkpoint: ",
              last_good_checkpoint.empty() ? "(none)" : last_good_checkpoint);
      }
      AdamStep(params, optim, lr, cfg.adam);
      out.metrics.push_back({epoch, (epoch - 1) * steps_per_epoch + s + 1, lr, r.ce,
                             r.denoise, r.total, std::nullopt});
    }

    if (eval_trials && epoch % cfg.eval_every == 0) {
      const auto verify = RunVerification(net, test_store, manifest, *eval_trials,
                                          Backend::kCosine, cfg.enroll_utts);
      out.metrics.back().eer = verify.eer;
      out.final_eer = verify.eer;
    }

    Checkpoint ckpt;
    ckpt.config_hash = cfg_hash;
    ckpt.epoch = static_cast<std::uint32_t>(epoch);
    ckpt.blobs = cfg_blobs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.blobs.emplace_back(Str("param.", params[i]->name), params[i]->value);
      ckpt.blobs.emplace_back(Str("adam.m.", params[i]->name), optim.m[i]);
      ckpt.blobs.emplace_back(Str("adam.v.", params[i]->name), optim.v[i]);
    }
    ckpt.blobs.emplace_back("adam.step",
                            std::vector<double>{detail::U64AsDouble(optim.step)});
    auto rng_blob = [](const RngStream& rng) {
      const auto st = rng.Save();
      std::vector<double> v;
      for (int i = 0; i < 4; ++i) v.push_back(detail::U64AsDouble(st.words[i]));
      v.push_back(st.has_cached ? 1.0 : 0.0);
      v.push_back(st.cached);
      return v;
    };
    ckpt.blobs.emplace_back("rng.shuffle", rng_blob(shuffle_rng));
    ckpt.blobs.emplace_back("rng.noise", rng_blob(noise_rng));
    const std::string ckpt_path =
        (std::filesystem::path(out_dir) / Str("ckpt_epoch_", epoch, ".lsvc")).string();
    SaveCheckpoint(ckpt_path, ckpt);
    out.checkpoint_paths.push_back(ckpt_path);
    last_good_checkpoint = ckpt_path;
    WriteMetricsCsv(out.metrics_path, out.metrics);
  }
  return out;
}

// Restores network parameters (not optimizer state) from a checkpoint into a
// freshly built blueprint network; the common path for evaluation.
inline Network RestoreNetwork(const Checkpoint& ckpt) {
  const NetBlueprint bp = BlueprintFromCheckpoint(ckpt);
  Network net = bp.Build(0);
  for (ParamTensor* p : net.Params()) {
    const auto& vals = ckpt.Get(Str("param.", p->name));
    Require(vals.size() == p->size(), ErrorKind::kFormat, "checkpoint parameter ",
            p->name, " has wrong size");
    p->value = vals;
  }
  return net;
}

}  // namespace lsv

#endif  // LSV_TRAIN_HPP_
