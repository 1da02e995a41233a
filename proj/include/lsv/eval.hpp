// lsv/eval.hpp
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

#ifndef LSV_EVAL_HPP_
#define LSV_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/data.hpp"
#include "lsv/matrix.hpp"
#include "lsv/nets.hpp"

namespace lsv {

// ---------------------------------------------------------------------------
// Embedding post-processing.

inline std::vector<double> LengthNormalize(const std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  Require(norm > 0.0, ErrorKind::kNumeric, "cannot length-normalize a zero vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

inline double CosineScore(const std::vector<double>& a, const std::vector<double>& b) {
  Require(a.size() == b.size(), ErrorKind::kDimension, "cosine: dims ", a.size(),
          " vs ", b.size());
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  Require(na > 0.0 && nb > 0.0, ErrorKind::kNumeric,
          "cosine similarity of a zero vector is undefined");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Small symmetric-matrix toolkit (Cholesky based), large enough for PLDA at
// embedding widths.

namespace detail {

// In-place lower Cholesky; returns false if the matrix is not positive
// definite.
inline bool Cholesky(Matrix2D& a) {
  const std::size_t n = a.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) return false;
    const double l = std::sqrt(d);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
      a(j, i) = 0.0;
    }
  }
  return true;
}

inline std::vector<double> CholSolve(const Matrix2D& l, std::vector<double> b) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * b[k];
    b[i] = s / l(i, i);
  }
  return b;
}

inline Matrix2D CholInverse(const Matrix2D& l) {
  const std::size_t n = l.rows();
  Matrix2D inv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> e(n, 0.0);
    e[c] = 1.0;
    auto col = CholSolve(l, std::move(e));
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

inline double CholLogDet(const Matrix2D& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

inline double QuadFormChol(const Matrix2D& l, const std::vector<double>& x) {
  // x^T A^{-1} x with A = L L^T: solve L y = x, return |y|^2.
  const std::size_t n = l.rows();
  std::vector<double> y(x);
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
    q += y[i] * y[i];
  }
  return q;
}

// Cholesky with a diagonal ridge fallback: 1e-6 * trace/d, escalating
// tenfold until the factorization succeeds.
inline Matrix2D CholeskyWithRidge(Matrix2D a, const char* what, bool* ridged) {
  Matrix2D l = a;
  if (Cholesky(l)) return l;
  double trace = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) trace += a(i, i);
  double ridge = 1e-6 * trace / static_cast<double>(a.rows());
  if (!(ridge > 0.0)) ridge = 1e-8;
  for (int attempt = 0; attempt < 24; ++attempt) {
    l = a;
    for (std::size_t i = 0; i < a.rows(); ++i) l(i, i) += ridge;
    if (Cholesky(l)) {
      if (ridged) *ridged = true;
      return l;
    }
    ridge *= 10.0;
  }
  Throw(ErrorKind::kNumeric, what, ": matrix stayed singular under ridge");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PLDA: two-covariance model.  A speaker mean y ~ N(m, B); an utterance
// embedding x ~ N(y, W).  Fitting is EM over per-speaker sufficient
// statistics; scoring is the closed-form log-likelihood ratio.

struct PldaModel {
  std::vector<double> mean;
  Matrix2D between;  // B, symmetric PSD
  Matrix2D within;   // W, symmetric PD

  std::size_t Dim() const { return mean.size(); }

  void Validate() const {
    const std::size_t d = Dim();
    Require(d >= 1, ErrorKind::kState, "empty PLDA model");
    Require(between.rows() == d && between.cols() == d && within.rows() == d &&
                within.cols() == d,
            ErrorKind::kDimension, "PLDA covariance shapes disagree with mean");
  }
};

struct PldaTrainResult {
  PldaModel model;
  std::vector<double> loglik;  // data log-likelihood per EM iteration
  bool ridge_applied = false;
};

// EM for (m, B, W).  Labels give the speaker of each embedding.  The data
// log-likelihood is recorded each iteration; EM guarantees it never
// decreases, which the tests assert.
inline PldaTrainResult PldaTrain(const std::vector<std::vector<double>>& embeddings,
                                 const std::vector<std::string>& labels,
                                 std::size_t iters = 20) {
  Require(embeddings.size() == labels.size(), ErrorKind::kDimension,
          "plda_train: ", embeddings.size(), " embeddings vs ", labels.size(),
          " labels");
  Require(!embeddings.empty(), ErrorKind::kState, "plda_train: no data");
  const std::size_t d = embeddings[0].size();
  for (const auto& e : embeddings)
    Require(e.size() == d, ErrorKind::kDimension, "plda_train: ragged embeddings");

  // Per-speaker sufficient statistics.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    groups[labels[i]].push_back(i);
  Require(groups.size() >= 2, ErrorKind::kState,
          "plda_train needs >= 2 speakers, got ", groups.size());
  std::size_t max_n = 0;
  for (const auto& [spk, idx] : groups) max_n = std::max(max_n, idx.size());
  Require(max_n >= 2, ErrorKind::kState,
          "plda_train needs >= 2 utterances for some speaker");

  struct SpeakerStats {
    std::size_t n;
    std::vector<double> mean;
    Matrix2D scatter;  // sum over utterances of (x - mean)(x - mean)^T
  };
  std::vector<SpeakerStats> stats;
  for (const auto& [spk, idx] : groups) {
    SpeakerStats s;
    s.n = idx.size();
    s.mean.assign(d, 0.0);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += embeddings[i][j];
    for (auto& v : s.mean) v /= static_cast<double>(s.n);
    s.scatter = Matrix2D(d, d);
    for (std::size_t i : idx)
      for (std::size_t r = 0; r < d; ++r) {
        const double dr = embeddings[i][r] - s.mean[r];
        for (std::size_t c = 0; c < d; ++c)
          s.scatter(r, c) += dr * (embeddings[i][c] - s.mean[c]);
      }
    stats.push_back(std::move(s));
  }
  const std::size_t n_spk = stats.size();
  const std::size_t n_utt = embeddings.size();

  PldaTrainResult result;
  PldaModel& model = result.model;
  model.mean.assign(d, 0.0);
  for (const auto& e : embeddings)
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += e[j];
  for (auto& v : model.mean) v /= static_cast<double>(n_utt);

  // Moment-based initialization: between = scatter of speaker means,
  // within = pooled within-speaker scatter.
  model.between = Matrix2D(d, d);
  model.within = Matrix2D(d, d);
  for (const auto& s : stats)
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        model.between(r, c) += (s.mean[r] - model.mean[r]) * (s.mean[c] - model.mean[c]);
        model.within(r, c) += s.scatter(r, c);
      }
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      model.between(r, c) /= static_cast<double>(n_spk);
      model.within(r, c) /= static_cast<double>(n_utt);
    }

  const double log2pi = std::log(2.0 * 3.14159265358979323846);
  for (std::size_t iter = 0; iter < iters; ++iter) {
    bool ridged = false;
    Matrix2D lb = detail::CholeskyWithRidge(model.between, "PLDA between", &ridged);
    Matrix2D lw = detail::CholeskyWithRidge(model.within, "PLDA within", &ridged);
    result.ridge_applied = result.ridge_applied || ridged;
    Matrix2D b_inv = detail::CholInverse(lb);
    Matrix2D w_inv = detail::CholInverse(lw);
    const double logdet_w = detail::CholLogDet(lw);

    // Data log-likelihood under the current parameters.
    double ll = 0.0;
    std::map<std::size_t, Matrix2D> lc_by_n;  // Cholesky of B + W/n
    for (const auto& s : stats) {
      if (lc_by_n.find(s.n) == lc_by_n.end()) {
        Matrix2D c(d, d);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t cix = 0; cix < d; ++cix)
            c(r, cix) = model.between(r, cix) +
                        model.within(r, cix) / static_cast<double>(s.n);
        lc_by_n.emplace(s.n, detail::CholeskyWithRidge(c, "PLDA B+W/n", nullptr));
      }
      const Matrix2D& lc = lc_by_n.at(s.n);
      const double n = static_cast<double>(s.n);
      std::vector<double> centered(d);
      for (std::size_t j = 0; j < d; ++j) centered[j] = s.mean[j] - model.mean[j];
      double tr_winv_scatter = 0.0;
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c2 = 0; c2 < d; ++c2)
          tr_winv_scatter += w_inv(r, c2) * s.scatter(c2, r);
      ll += -0.5 * (n - 1.0) * static_cast<double>(d) * log2pi -
            0.5 * (n - 1.0) * logdet_w - 0.5 * static_cast<double>(d) * std::log(n) -
            0.5 * tr_winv_scatter - 0.5 * static_cast<double>(d) * log2pi -
            0.5 * detail::CholLogDet(lc) - 0.5 * detail::QuadFormChol(lc, centered);
    }
    result.loglik.push_back(ll);

    // E-step: posterior of each speaker mean, then M-step accumulators.
    std::vector<double> new_mean(d, 0.0);
    Matrix2D new_b(d, d), new_w(d, d);
    std::vector<std::vector<double>> mu(n_spk);
    std::vector<Matrix2D> sigma(n_spk, Matrix2D(d, d));
    for (std::size_t s = 0; s < n_spk; ++s) {
      const double n = static_cast<double>(stats[s].n);
      Matrix2D prec(d, d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c)
          prec(r, c) = b_inv(r, c) + n * w_inv(r, c);
      Matrix2D lp = detail::CholeskyWithRidge(prec, "PLDA posterior", nullptr);
      sigma[s] = detail::CholInverse(lp);
      std::vector<double> rhs(d, 0.0);
      for (std::size_t r = 0; r < d; ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < d; ++c)
          v += b_inv(r, c) * model.mean[c] + n * w_inv(r, c) * stats[s].mean[c];
        rhs[r] = v;
      }
      mu[s] = detail::CholSolve(lp, std::move(rhs));
      for (std::size_t j = 0; j < d; ++j) new_mean[j] += mu[s][j];
    }
    for (auto& v : new_mean) v /= static_cast<double>(n_spk);
    for (std::size_t s = 0; s < n_spk; ++s) {
      const double n = static_cast<double>(stats[s].n);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          new_b(r, c) += sigma[s](r, c) +
                         (mu[s][r] - new_mean[r]) * (mu[s][c] - new_mean[c]);
          new_w(r, c) += n * sigma[s](r, c) + stats[s].scatter(r, c) +
                         n * (stats[s].mean[r] - mu[s][r]) *
                             (stats[s].mean[c] - mu[s][c]);
        }
    }
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        new_b(r, c) /= static_cast<double>(n_spk);
        new_w(r, c) /= static_cast<double>(n_utt);
      }
    model.mean = std::move(new_mean);
    model.between = std::move(new_b);
    model.within = std::move(new_w);
  }
  model.Validate();
  return result;
}

// Log-likelihood ratio for a pair under the two-covariance model.  With
// phi_i = e_i - m and the rotation s = (phi1 + phi2)/sqrt(2),
// t = (phi1 - phi2)/sqrt(2):
//   same-speaker:      s ~ N(0, 2B + W),  t ~ N(0, W),      independent
//   different-speaker: s ~ N(0, B + W),   t ~ N(0, B + W),  independent
// so the ratio needs only three d x d factorizations.
inline double PldaScore(const PldaModel& model, const std::vector<double>& e1,
                        const std::vector<double>& e2) {
  model.Validate();
  const std::size_t d = model.Dim();
  Require(e1.size() == d && e2.size() == d, ErrorKind::kDimension,
          "plda_score: embedding dims ", e1.size(), "/", e2.size(),
          " vs model dim ", d);
  const double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> s(d), t(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double p1 = e1[j] - model.mean[j];
    const double p2 = e2[j] - model.mean[j];
    s[j] = (p1 + p2) * inv_sqrt2;
    t[j] = (p1 - p2) * inv_sqrt2;
  }
  Matrix2D two_b_w(d, d), b_w(d, d), w(d, d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      two_b_w(r, c) = 2.0 * model.between(r, c) + model.within(r, c);
      b_w(r, c) = model.between(r, c) + model.within(r, c);
      w(r, c) = model.within(r, c);
    }
  Matrix2D l_2bw = two_b_w, l_bw = b_w, l_w = w;
  Require(detail::Cholesky(l_w), ErrorKind::kNumeric,
          "plda_score: within covariance is not positive definite");
  Require(detail::Cholesky(l_bw), ErrorKind::kNumeric,
          "plda_score: B + W is not positive definite");
  Require(detail::Cholesky(l_2bw), ErrorKind::kNumeric,
          "plda_score: 2B + W is not positive definite");
  const double q_same = detail::QuadFormChol(l_2bw, s) + detail::QuadFormChol(l_w, t);
  const double q_diff = detail::QuadFormChol(l_bw, s) + detail::QuadFormChol(l_bw, t);
  const double logdet_same = detail::CholLogDet(l_2bw) + detail::CholLogDet(l_w);
  const double logdet_diff = 2.0 * detail::CholLogDet(l_bw);
  return -0.5 * (q_same - q_diff) - 0.5 * (logdet_same - logdet_diff);
}

// ---------------------------------------------------------------------------
// Scores and EER.

struct ScoreRow {
  std::string enroll_id;
  std::string test_id;
  double score = 0.0;
  TrialLabel label = TrialLabel::kTarget;
};

struct ScoreSet {
  std::vector<ScoreRow> rows;

  void Split(std::vector<double>* targets, std::vector<double>* nontargets) const {
    for (const auto& r : rows) {
      Require(std::isfinite(r.score), ErrorKind::kNumeric, "non-finite score for ",
              r.enroll_id, " vs ", r.test_id);
      (r.label == TrialLabel::kTarget ? targets : nontargets)->push_back(r.score);
    }
  }
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

namespace detail {

// Candidate thresholds: one below all scores, midpoints between distinct
// sorted scores, one above all.  FRR/FAR are step functions constant between
// candidates, so the curves cross at (or between) adjacent candidates.
inline std::vector<double> CandidateThresholds(std::vector<double> merged) {
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  std::vector<double> out;
  out.push_back(merged.front() - 1.0);
  for (std::size_t i = 0; i + 1 < merged.size(); ++i)
    out.push_back(0.5 * (merged[i] + merged[i + 1]));
  out.push_back(merged.back() + 1.0);
  return out;
}

}  // namespace detail

// EER by threshold sweep over score midpoints with FRR = P(target < t),
// FAR = P(nontarget >= t), linearly interpolated at the crossing.  If the
// curves meet exactly at a candidate, that common rate is the EER.
inline EerResult ComputeEer(std::vector<double> targets,
                            std::vector<double> nontargets) {
  Require(!targets.empty() && !nontargets.empty(), ErrorKind::kState,
          "EER needs at least one target and one nontarget score");
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());
  std::vector<double> merged;
  merged.reserve(targets.size() + nontargets.size());
  merged.insert(merged.end(), targets.begin(), targets.end());
  merged.insert(merged.end(), nontargets.begin(), nontargets.end());
  const auto thresholds = detail::CandidateThresholds(std::move(merged));

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  auto frr = [&](double t) {
    return static_cast<double>(std::lower_bound(targets.begin(), targets.end(), t) -
                               targets.begin()) / nt;
  };
  auto far = [&](double t) {
    return static_cast<double>(nontargets.end() -
                               std::lower_bound(nontargets.begin(),
                                                nontargets.end(), t)) / nn;
  };

  double prev_diff = frr(thresholds[0]) - far(thresholds[0]);  // -1 by construction
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    const double f_r = frr(thresholds[i]);
    const double f_a = far(thresholds[i]);
    const double diff = f_r - f_a;
    if (diff >= 0.0) {
      const double prev_fr = frr(thresholds[i - 1]);
      const double prev_fa = far(thresholds[i - 1]);
      // Interpolate between the adjacent operating points; prev_diff < 0 and
      // diff >= 0, so the denominator is positive.
      const double alpha = (prev_fa - prev_fr) / ((prev_fa - prev_fr) + (f_r - f_a));
      const double eer = (1.0 - alpha) * prev_fr + alpha * f_r;
      const double thr = (1.0 - alpha) * thresholds[i - 1] + alpha * thresholds[i];
      return {eer, thr};
    }
    prev_diff = diff;
  }
  (void)prev_diff;
  Throw(ErrorKind::kState, "EER sweep found no crossing");
}

inline EerResult ComputeEer(const ScoreSet& scores) {
  std::vector<double> targets, nontargets;
  scores.Split(&targets, &nontargets);
  return ComputeEer(std::move(targets), std::move(nontargets));
}

// Monotone staircase of (FAR, FRR) operating points including (1,0) and
// (0,1); consecutive duplicates collapsed.
inline std::vector<std::pair<double, double>> DetPoints(const ScoreSet& scores) {
  std::vector<double> targets, nontargets;
  scores.Split(&targets, &nontargets);
  Require(!targets.empty() && !nontargets.empty(), ErrorKind::kState,
          "DET needs at least one target and one nontarget score");
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());
  std::vector<double> merged;
  merged.insert(merged.end(), targets.begin(), targets.end());
  merged.insert(merged.end(), nontargets.begin(), nontargets.end());
  const auto thresholds = detail::CandidateThresholds(std::move(merged));
  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  std::vector<std::pair<double, double>> points;
  for (double t : thresholds) {
    const double f_r =
        static_cast<double>(std::lower_bound(targets.begin(), targets.end(), t) -
                            targets.begin()) / nt;
    const double f_a =
        static_cast<double>(nontargets.end() - std::lower_bound(nontargets.begin(),
                                                                nontargets.end(), t)) / nn;
    if (points.empty() || points.back() != std::make_pair(f_a, f_r))
      points.emplace_back(f_a, f_r);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Full verification pipeline: extract, average enrollment embeddings,
// length-normalize, score with the chosen backend, compute EER.

enum class Backend { kCosine, kPlda };

inline Backend DefaultBackend(Framework fw) {
  return fw == Framework::kDvector ? Backend::kCosine : Backend::kPlda;
}

inline Backend ParseBackend(const std::string& s) {
  if (s == "cosine") return Backend::kCosine;
  if (s == "plda") return Backend::kPlda;
  Throw(ErrorKind::kConfig, "unknown backend \"", s, "\" (cosine or plda)");
}

using FeatureStore = std::map<std::string, FeatureSequence>;  // by utterance id

inline FeatureStore LoadSplitFeatures(const CorpusManifest& manifest, Split split) {
  FeatureStore store;
  for (const auto& e : manifest.entries)
    if (e.split == split)
      store.emplace(e.utterance_id, ReadFeatures(e.path, e.speaker_id, e.utterance_id));
  return store;
}

struct VerifyResult {
  ScoreSet scores;
  double eer = 0.0;
  double threshold = 0.0;
};

inline VerifyResult RunVerification(const Network& net, const FeatureStore& test_store,
                                    const CorpusManifest& manifest,
                                    const TrialList& trials, Backend backend,
                                    std::size_t enroll_utts = 1,
                                    const PldaModel* plda = nullptr) {
  trials.Validate();
  Require(backend != Backend::kPlda || plda != nullptr, ErrorKind::kConfig,
          "PLDA backend requested but no PLDA model supplied; train one on the "
          "train split first");
  const auto enroll_map = EnrollmentMap(manifest, enroll_utts);

  std::set<std::string> test_utts;
  for (const auto& t : trials.trials) test_utts.insert(t.test_utterance);
  for (const auto& [spk, utts] : enroll_map)
    for (const auto& u : utts)
      Require(test_utts.count(u) == 0, ErrorKind::kState, "enrollment utterance ",
              u, " also appears as a test utterance");

  // Normalized embedding per needed utterance.
  std::map<std::string, std::vector<double>> emb;
  auto embed = [&](const std::string& utt) {
    if (emb.count(utt)) return;
    auto it = test_store.find(utt);
    Require(it != test_store.end(), ErrorKind::kLookup, "utterance ", utt,
            " referenced by trials but missing from the test split");
    emb.emplace(utt, LengthNormalize(ExtractEmbedding(net, it->second)));
  };
  for (const auto& [spk, utts] : enroll_map)
    for (const auto& u : utts) embed(u);
  for (const auto& u : test_utts) embed(u);

  // Multi-utterance enrollment: average the normalized embeddings, then
  // renormalize.
  std::map<std::string, std::vector<double>> enroll_vec;
  for (const auto& [spk, utts] : enroll_map) {
    std::vector<double> mean(emb.at(utts.front()).size(), 0.0);
    for (const auto& u : utts)
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += emb.at(u)[j];
    for (auto& v : mean) v /= static_cast<double>(utts.size());
    enroll_vec.emplace(spk, LengthNormalize(mean));
  }

  VerifyResult out;
  for (const auto& t : trials.trials) {
    auto eit = enroll_vec.find(t.enroll_speaker);
    Require(eit != enroll_vec.end(), ErrorKind::kLookup, "enroll speaker ",
            t.enroll_speaker, " has no enrollment utterances");
    const auto& test_emb = emb.at(t.test_utterance);
    const double score = backend == Backend::kCosine
                             ? CosineScore(eit->second, test_emb)
                             : PldaScore(*plda, eit->second, test_emb);
    out.scores.rows.push_back({t.enroll_speaker, t.test_utterance, score, t.label});
  }
  const auto eer = ComputeEer(out.scores);
  out.eer = eer.eer;
  out.threshold = eer.threshold;
  return out;
}

// ---------------------------------------------------------------------------
// Report emission.

inline std::string FormatG17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string FormatFixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void WriteScores(const std::string& path, const ScoreSet& scores) {
  std::string buf;
  for (const auto& r : scores.rows) {
    buf += r.enroll_id;
    buf += '\t';
    buf += r.test_id;
    buf += '\t';
    buf += FormatG17(r.score);
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

struct ReportRow {
  std::string system;
  double eer_percent = 0.0;
};

inline void WriteReportCsv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::string buf = "system,eer_percent\n";
  for (const auto& r : rows) {
    buf += r.system;
    buf += ',';
    buf += FormatFixed(r.eer_percent, 4);
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

struct CurveRow {
  std::size_t epoch = 0;
  double eer_percent = 0.0;
  std::string system;
};

inline void WriteCurveCsv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::string buf = "epoch,eer_percent,system\n";
  for (const auto& r : rows) {
    buf += Str(r.epoch);
    buf += ',';
    buf += FormatFixed(r.eer_percent, 4);
    buf += ',';
    buf += r.system;
    buf += '\n';
  }
  detail::WriteWholeFile(path, buf);
}

}  // namespace lsv

#endif  // LSV_EVAL_HPP_
