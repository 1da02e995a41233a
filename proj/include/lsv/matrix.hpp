// lsv/matrix.hpp
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

#ifndef LSV_MATRIX_HPP_
#define LSV_MATRIX_HPP_

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "lsv/common.hpp"

namespace lsv {

// Dense row-major matrix of 64-bit reals.  rows may be 0 (empty batch),
// cols is at least 1.  Values built from external input are checked finite
// via FromValues; internal kernels construct directly.
class Matrix2D {
 public:
  Matrix2D() = default;
  Matrix2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {
    Require(cols >= 1, ErrorKind::kDimension, "Matrix2D needs cols >= 1, got ", cols);
  }

  static Matrix2D FromValues(std::size_t rows, std::size_t cols,
                             std::vector<double> values) {
    Require(cols >= 1, ErrorKind::kDimension, "Matrix2D needs cols >= 1, got ", cols);
    Require(values.size() == rows * cols, ErrorKind::kDimension,
            "Matrix2D value count ", values.size(), " != ", rows, "x", cols);
    for (double x : values)
      Require(std::isfinite(x), ErrorKind::kNumeric,
              "Matrix2D rejects non-finite value ", x);
    Matrix2D m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.v_ = std::move(values);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

  double* Row(std::size_t r) { return v_.data() + r * cols_; }
  const double* Row(std::size_t r) const { return v_.data() + r * cols_; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool SameShape(const Matrix2D& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool AllFinite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
  std::vector<double> v_;
};

inline void RequireSameShape(const Matrix2D& a, const Matrix2D& b,
                             const char* what) {
  Require(a.SameShape(b), ErrorKind::kDimension, what, ": shape ", a.rows(), "x",
          a.cols(), " vs ", b.rows(), "x", b.cols());
}

// C = A * B^T.  A is n x k, B is m x k.  Row-by-row dot products keep both
// operands contiguous.
inline Matrix2D MatMulNT(const Matrix2D& a, const Matrix2D& b) {
  Require(a.cols() == b.cols(), ErrorKind::kDimension, "MatMulNT inner dim ",
          a.cols(), " vs ", b.cols());
  Matrix2D c(a.rows(), b.rows() == 0 ? 1 : b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.Row(i);
    double* cr = c.Row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.Row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      cr[j] = s;
    }
  }
  return c;
}

// C = A * B.  A is n x k, B is k x m.  ikj order, C rows accumulate.
inline Matrix2D MatMulNN(const Matrix2D& a, const Matrix2D& b) {
  Require(a.cols() == b.rows(), ErrorKind::kDimension, "MatMulNN inner dim ",
          a.cols(), " vs ", b.rows());
  Matrix2D c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* cr = c.Row(i);
    const double* ar = a.Row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.Row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) cr[j] += aik * br[j];
    }
  }
  return c;
}

// C = A^T * B.  A is k x n, B is k x m; result n x m.  Used for weight
// gradients (dW = dY^T * X).
inline Matrix2D MatMulTN(const Matrix2D& a, const Matrix2D& b) {
  Require(a.rows() == b.rows(), ErrorKind::kDimension, "MatMulTN outer dim ",
          a.rows(), " vs ", b.rows());
  Matrix2D c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.Row(k);
    const double* br = b.Row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* cr = c.Row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) cr[j] += aki * br[j];
    }
  }
  return c;
}

inline void AddInPlace(Matrix2D& a, const Matrix2D& b) {
  RequireSameShape(a, b, "AddInPlace");
  double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

inline void ScaleInPlace(Matrix2D& a, double s) {
  double* p = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) p[i] *= s;
}

}  // namespace lsv

#endif  // LSV_MATRIX_HPP_
