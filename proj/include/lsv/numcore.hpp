// lsv/numcore.hpp
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

#ifndef LSV_NUMCORE_HPP_
#define LSV_NUMCORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lsv/common.hpp"
#include "lsv/matrix.hpp"

namespace lsv {

// Named parameter with paired gradient storage of identical shape.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<std::size_t> s)
      : name(std::move(n)), shape(std::move(s)) {
    std::size_t total = 1;
    for (std::size_t d : shape) total *= d;
    value.assign(total, 0.0);
    grad.assign(total, 0.0);
  }

  std::size_t size() const { return value.size(); }
  void ZeroGrad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// ---------------------------------------------------------------------------
// Affine: Y = X * W^T + b, W is out x in, X is n x in.

inline Matrix2D AffineForward(const ParamTensor& w, const ParamTensor& b,
                              const Matrix2D& x) {
  Require(w.shape.size() == 2, ErrorKind::kDimension, "affine weight ", w.name,
          " must be 2-D");
  const std::size_t out = w.shape[0], in = w.shape[1];
  Require(x.cols() == in, ErrorKind::kDimension, "affine ", w.name, ": input cols ",
          x.cols(), " != ", in);
  Require(b.size() == out, ErrorKind::kDimension, "affine ", w.name, ": bias size ",
          b.size(), " != ", out);
  Matrix2D y(x.rows(), out);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.Row(i);
    double* yr = y.Row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.value.data() + o * in;
      double s = b.value[o];
      for (std::size_t k = 0; k < in; ++k) s += xr[k] * wr[k];
      yr[o] = s;
    }
  }
  return y;
}

// Accumulates dW, db into the tensors' grad arrays and returns dX.
inline Matrix2D AffineBackward(ParamTensor& w, ParamTensor& b, const Matrix2D& x,
                               const Matrix2D& dy) {
  const std::size_t out = w.shape[0], in = w.shape[1];
  Require(dy.cols() == out && dy.rows() == x.rows(), ErrorKind::kDimension,
          "affine backward ", w.name, ": dY shape ", dy.rows(), "x", dy.cols());
  Matrix2D dx(x.rows(), in);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* dyr = dy.Row(i);
    const double* xr = x.Row(i);
    double* dxr = dx.Row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      const double* wr = w.value.data() + o * in;
      double* dwr = w.grad.data() + o * in;
      for (std::size_t k = 0; k < in; ++k) {
        dxr[k] += g * wr[k];
        dwr[k] += g * xr[k];
      }
      b.grad[o] += g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU.

inline Matrix2D ReluForward(const Matrix2D& x) {
  Matrix2D y = x;
  double* p = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
  return y;
}

// Gradient is masked where the preactivation was <= 0.
inline Matrix2D ReluBackward(const Matrix2D& pre, const Matrix2D& dy) {
  RequireSameShape(pre, dy, "ReluBackward");
  Matrix2D dx = dy;
  double* p = dx.data();
  const double* q = pre.data();
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (q[i] <= 0.0) p[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over columns, population variance, no learnable scale
// or shift.  The backward pass runs the full batch-statistics chain rule.

struct BatchNormCache {
  Matrix2D y;                   // normalized output
  std::vector<double> mean;     // per column
  std::vector<double> var;      // per column, population
  std::vector<double> inv_std;  // 1 / sqrt(var + eps)
};

inline BatchNormCache BatchNormForward(const Matrix2D& x, double eps = 1e-8) {
  Require(x.rows() >= 1, ErrorKind::kDimension, "batchnorm needs a non-empty batch");
  const std::size_t n = x.rows(), d = x.cols();
  BatchNormCache c;
  c.mean.assign(d, 0.0);
  c.var.assign(d, 0.0);
  c.inv_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.Row(i);
    for (std::size_t j = 0; j < d; ++j) c.mean[j] += xr[j];
  }
  for (std::size_t j = 0; j < d; ++j) c.mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.Row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dlt = xr[j] - c.mean[j];
      c.var[j] += dlt * dlt;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    c.var[j] /= static_cast<double>(n);
    c.inv_std[j] = 1.0 / std::sqrt(c.var[j] + eps);
  }
  c.y = Matrix2D(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.Row(i);
    double* yr = c.y.Row(i);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - c.mean[j]) * c.inv_std[j];
  }
  return c;
}

// With y = (x - m) / sqrt(v + eps) and population statistics over n rows:
//   dx = inv_std * (dy - mean_rows(dy) - y * mean_rows(dy .* y))
// per column; both means run over the batch dimension.
inline Matrix2D BatchNormBackward(const BatchNormCache& c, const Matrix2D& dy) {
  RequireSameShape(c.y, dy, "BatchNormBackward");
  const std::size_t n = dy.rows(), d = dy.cols();
  std::vector<double> mean_dy(d, 0.0), mean_dyy(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy.Row(i);
    const double* yr = c.y.Row(i);
    for (std::size_t j = 0; j < d; ++j) {
      mean_dy[j] += dyr[j];
      mean_dyy[j] += dyr[j] * yr[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    mean_dy[j] /= static_cast<double>(n);
    mean_dyy[j] /= static_cast<double>(n);
  }
  Matrix2D dx(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy.Row(i);
    const double* yr = c.y.Row(i);
    double* dxr = dx.Row(i);
    for (std::size_t j = 0; j < d; ++j)
      dxr[j] = c.inv_std[j] * (dyr[j] - mean_dy[j] - yr[j] * mean_dyy[j]);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, mean over rows.

struct SoftmaxXentResult {
  double loss = 0.0;
  Matrix2D dlogits;  // (softmax - onehot) / n
  Matrix2D probs;
};

inline SoftmaxXentResult SoftmaxXent(const Matrix2D& logits,
                                     const std::vector<int>& labels) {
  const std::size_t n = logits.rows(), k = logits.cols();
  Require(labels.size() == n, ErrorKind::kDimension, "softmax_xent: ", labels.size(),
          " labels for ", n, " rows");
  Require(n >= 1, ErrorKind::kDimension, "softmax_xent needs at least one row");
  SoftmaxXentResult r;
  r.probs = Matrix2D(n, k);
  r.dlogits = Matrix2D(n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    Require(label >= 0 && static_cast<std::size_t>(label) < k, ErrorKind::kLabel,
            "label ", label, " out of range [0,", k, ")");
    const double* lr = logits.Row(i);
    double mx = lr[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(lr[j] - mx);
    const double logz = std::log(z) + mx;
    double* pr = r.probs.Row(i);
    double* dr = r.dlogits.Row(i);
    for (std::size_t j = 0; j < k; ++j) {
      pr[j] = std::exp(lr[j] - logz);
      dr[j] = pr[j] / static_cast<double>(n);
    }
    dr[label] -= 1.0 / static_cast<double>(n);
    total += logz - lr[label];
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.
//
// The caller runs its analytic backward pass first, leaving gradients in each
// tensor's grad array, then hands over a loss closure that recomputes the
// forward value from the current parameter values (with any noise frozen).
// Central differences perturb one element at a time.  Returns
// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

inline double GradCheck(const std::function<double()>& loss_fn,
                        const std::vector<ParamTensor*>& params,
                        double h = 1e-5) {
  const double l0 = loss_fn();
  const double l1 = loss_fn();
  Require(l0 == l1, ErrorKind::kDeterminism,
          "grad_check: loss function is not deterministic (", l0, " vs ", l1, ")");
  double worst = 0.0;
  for (ParamTensor* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss_fn();
      p->value[i] = keep - h;
      const double lm = loss_fn();
      p->value[i] = keep;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace lsv

#endif  // LSV_NUMCORE_HPP_
