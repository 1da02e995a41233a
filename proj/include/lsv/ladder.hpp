// lsv/ladder.hpp
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

#ifndef LSV_LADDER_HPP_
#define LSV_LADDER_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/matrix.hpp"
#include "lsv/numcore.hpp"
#include "lsv/rng.hpp"

namespace lsv {

// Per-layer learnable denoising parameters: ten per-unit vectors.
// a1..a5 parameterize the prior mu(u), a6..a10 the gate nu(u):
//   mu(u) = a1*sigmoid(a2*u + a3) + a4*u + a5
//   nu(u) = a6*sigmoid(a7*u + a8) + a9*u + a10
// all products elementwise per unit, broadcast over batch rows.
struct CombinatorParams {
  ParamTensor* a[10] = {nullptr};

  std::size_t dim() const { return a[0] ? a[0]->size() : 0; }

  void CheckConsistent() const {
    for (int i = 0; i < 10; ++i) {
      Require(a[i] != nullptr, ErrorKind::kState, "combinator tensor a", i + 1,
              " missing");
      Require(a[i]->size() == dim(), ErrorKind::kDimension,
              "combinator vectors must share length");
    }
  }
};

struct LadderConfig {
  double sigma = 0.3;
  std::vector<double> lambda;  // lambda[0] weighs the input reconstruction
  std::string decoder_weight_init = "gaussian-fan-in";
  std::string combinator_init = "identity";
};

// lambda = (1000, 10, 0.1, 0.1, ...) with `levels` entries.
inline std::vector<double> DefaultLambda(std::size_t levels, double l0 = 1000.0,
                                         double l1 = 10.0, double rest = 0.1) {
  std::vector<double> v(levels, rest);
  if (levels > 0) v[0] = l0;
  if (levels > 1) v[1] = l1;
  return v;
}

// One reconstructed layer: clean value, corrupted value, normalized decoder
// preactivation, and the reconstruction once the decode pass ran.
struct LadderLayerState {
  Matrix2D h;
  Matrix2D h_tilde;
  Matrix2D u;
  Matrix2D h_hat;  // empty (rows == 0 and cols == 1) until decoded
};

// ---------------------------------------------------------------------------
// Corruption: h + i.i.d. Gaussian noise of standard deviation sigma.
// sigma == 0 returns the input bit-identically and consumes no draws.

inline Matrix2D Corrupt(const Matrix2D& h, double sigma, RngStream& rng) {
  Require(sigma >= 0.0, ErrorKind::kConfig, "corruption sigma must be >= 0, got ",
          sigma);
  Matrix2D out = h;
  if (sigma == 0.0) return out;
  double* p = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) p[i] += sigma * rng.NextGaussian();
  return out;
}

inline Matrix2D DrawNoise(std::size_t rows, std::size_t cols, double sigma,
                          RngStream& rng) {
  Matrix2D n(rows, cols);
  if (sigma == 0.0) return n;
  double* p = n.data();
  for (std::size_t i = 0; i < n.size(); ++i) p[i] = sigma * rng.NextGaussian();
  return n;
}

inline Matrix2D AddNoise(const Matrix2D& h, const Matrix2D& noise) {
  RequireSameShape(h, noise, "AddNoise");
  Matrix2D out = h;
  AddInPlace(out, noise);
  return out;
}

// ---------------------------------------------------------------------------
// Combinator kernels.

inline double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

inline void CheckCombinatorDims(const Matrix2D& u, const std::vector<double>* a[5]) {
  for (int i = 0; i < 5; ++i)
    Require(a[i]->size() == u.cols(), ErrorKind::kDimension,
            "combinator vector length ", a[i]->size(), " != units ", u.cols());
}

// shared(u; c1..c5) = c1*sigmoid(c2*u + c3) + c4*u + c5
inline Matrix2D MuNuForward(const Matrix2D& u, const std::vector<double>& c1,
                            const std::vector<double>& c2, const std::vector<double>& c3,
                            const std::vector<double>& c4, const std::vector<double>& c5,
                            Matrix2D* sig_cache = nullptr) {
  const std::vector<double>* a[5] = {&c1, &c2, &c3, &c4, &c5};
  CheckCombinatorDims(u, a);
  Matrix2D out(u.rows(), u.cols());
  if (sig_cache) *sig_cache = Matrix2D(u.rows(), u.cols());
  for (std::size_t r = 0; r < u.rows(); ++r) {
    const double* ur = u.Row(r);
    double* or_ = out.Row(r);
    double* sr = sig_cache ? sig_cache->Row(r) : nullptr;
    for (std::size_t j = 0; j < u.cols(); ++j) {
      const double s = Sigmoid(c2[j] * ur[j] + c3[j]);
      if (sr) sr[j] = s;
      or_[j] = c1[j] * s + c4[j] * ur[j] + c5[j];
    }
  }
  return out;
}

}  // namespace detail

inline Matrix2D CombinatorMu(const Matrix2D& u, const CombinatorParams& p) {
  return detail::MuNuForward(u, p.a[0]->value, p.a[1]->value, p.a[2]->value,
                             p.a[3]->value, p.a[4]->value);
}

inline Matrix2D CombinatorNu(const Matrix2D& u, const CombinatorParams& p) {
  return detail::MuNuForward(u, p.a[5]->value, p.a[6]->value, p.a[7]->value,
                             p.a[8]->value, p.a[9]->value);
}

// h_hat = (h_tilde - mu(u)) * nu(u) + mu(u), elementwise.
struct DenoiseCache {
  Matrix2D mu, nu, s_mu, s_nu;  // sigmoid activations cached for backward
  Matrix2D h_tilde, u, h_hat;
};

inline DenoiseCache DenoiseForward(const Matrix2D& h_tilde, const Matrix2D& u,
                                   const CombinatorParams& p) {
  RequireSameShape(h_tilde, u, "denoise");
  p.CheckConsistent();
  DenoiseCache c;
  c.mu = detail::MuNuForward(u, p.a[0]->value, p.a[1]->value, p.a[2]->value,
                             p.a[3]->value, p.a[4]->value, &c.s_mu);
  c.nu = detail::MuNuForward(u, p.a[5]->value, p.a[6]->value, p.a[7]->value,
                             p.a[8]->value, p.a[9]->value, &c.s_nu);
  c.h_tilde = h_tilde;
  c.u = u;
  c.h_hat = Matrix2D(u.rows(), u.cols());
  for (std::size_t r = 0; r < u.rows(); ++r) {
    const double* ht = h_tilde.Row(r);
    const double* mu = c.mu.Row(r);
    const double* nu = c.nu.Row(r);
    double* hh = c.h_hat.Row(r);
    for (std::size_t j = 0; j < u.cols(); ++j)
      hh[j] = (ht[j] - mu[j]) * nu[j] + mu[j];
  }
  return c;
}

inline Matrix2D Denoise(const Matrix2D& h_tilde, const Matrix2D& u,
                        const CombinatorParams& p) {
  return DenoiseForward(h_tilde, u, p).h_hat;
}

struct DenoiseGrads {
  Matrix2D dh_tilde;
  Matrix2D du;
};

// Backward through h_hat = (h_tilde - mu)*nu + mu.  Parameter gradients sum
// over batch rows into the a1..a10 grad arrays.
inline DenoiseGrads DenoiseBackward(const DenoiseCache& c, const Matrix2D& dhhat,
                                    CombinatorParams& p) {
  RequireSameShape(c.h_hat, dhhat, "DenoiseBackward");
  const std::size_t n = dhhat.rows(), d = dhhat.cols();
  DenoiseGrads g;
  g.dh_tilde = Matrix2D(n, d);
  g.du = Matrix2D(n, d);
  double* da1 = p.a[0]->grad.data();
  double* da2 = p.a[1]->grad.data();
  double* da3 = p.a[2]->grad.data();
  double* da4 = p.a[3]->grad.data();
  double* da5 = p.a[4]->grad.data();
  double* da6 = p.a[5]->grad.data();
  double* da7 = p.a[6]->grad.data();
  double* da8 = p.a[7]->grad.data();
  double* da9 = p.a[8]->grad.data();
  double* da10 = p.a[9]->grad.data();
  const double* a1 = p.a[0]->value.data();
  const double* a2 = p.a[1]->value.data();
  const double* a4 = p.a[3]->value.data();
  const double* a6 = p.a[5]->value.data();
  const double* a7 = p.a[6]->value.data();
  const double* a9 = p.a[8]->value.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* dh = dhhat.Row(r);
    const double* ht = c.h_tilde.Row(r);
    const double* mu = c.mu.Row(r);
    const double* nu = c.nu.Row(r);
    const double* s1 = c.s_mu.Row(r);
    const double* s2 = c.s_nu.Row(r);
    const double* ur = c.u.Row(r);
    double* dht = g.dh_tilde.Row(r);
    double* dur = g.du.Row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double gd = dh[j];
      const double dmu = gd * (1.0 - nu[j]);
      const double dnu = gd * (ht[j] - mu[j]);
      dht[j] = gd * nu[j];
      // mu branch
      const double t1 = dmu * a1[j] * s1[j] * (1.0 - s1[j]);
      da1[j] += dmu * s1[j];
      da2[j] += t1 * ur[j];
      da3[j] += t1;
      da4[j] += dmu * ur[j];
      da5[j] += dmu;
      // nu branch
      const double t2 = dnu * a6[j] * s2[j] * (1.0 - s2[j]);
      da6[j] += dnu * s2[j];
      da7[j] += t2 * ur[j];
      da8[j] += t2;
      da9[j] += dnu * ur[j];
      da10[j] += dnu;
      dur[j] = t1 * a2[j] + dmu * a4[j] + t2 * a7[j] + dnu * a9[j];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Weighted reconstruction cost.  Per layer: mean over batch rows (frames for
// sequence layers) of the squared error summed over units, scaled by lambda.

inline double LayerReconCost(const Matrix2D& h, const Matrix2D& h_hat) {
  RequireSameShape(h, h_hat, "recon cost");
  Require(h.rows() >= 1, ErrorKind::kState, "recon cost needs at least one row");
  double total = 0.0;
  const double* a = h.data();
  const double* b = h_hat.data();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double dlt = a[i] - b[i];
    total += dlt * dlt;
  }
  return total / static_cast<double>(h.rows());
}

// d cost / d h_hat = -(2 * lambda / rows) * (h - h_hat); the clean-side
// gradient is the negation.
inline Matrix2D LayerReconGradHhat(const Matrix2D& h, const Matrix2D& h_hat,
                                   double lambda) {
  Matrix2D g(h.rows(), h.cols());
  const double scale = 2.0 * lambda / static_cast<double>(h.rows());
  const double* a = h.data();
  const double* b = h_hat.data();
  double* p = g.data();
  for (std::size_t i = 0; i < h.size(); ++i) p[i] = -scale * (a[i] - b[i]);
  return g;
}

inline double DenoisingCost(const std::vector<LadderLayerState>& states,
                            const std::vector<double>& lambda) {
  Require(states.size() == lambda.size(), ErrorKind::kDimension,
          "denoising cost: ", states.size(), " layers vs ", lambda.size(),
          " lambda weights");
  double total = 0.0;
  for (std::size_t l = 0; l < states.size(); ++l) {
    Require(lambda[l] >= 0.0, ErrorKind::kConfig, "lambda[", l, "] must be >= 0");
    Require(states[l].h_hat.size() > 0, ErrorKind::kState,
            "denoising cost: layer ", l, " has no reconstruction");
    total += lambda[l] * LayerReconCost(states[l].h, states[l].h_hat);
  }
  return total;
}

}  // namespace lsv

#endif  // LSV_LADDER_HPP_
