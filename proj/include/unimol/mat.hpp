//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_MAT_HPP
#define UNIMOL_MAT_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "unimol/common.hpp"

namespace unimol {

/// Dense row-major matrix of doubles. Conformations are n x 3 matrices in
/// angstroms; network activations are n x d. Kept deliberately small: the
/// training tape implements every operation it needs on top of this.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols)
      : rows_(rows), cols_(cols), d_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0) {
    if (rows < 0 || cols < 0) throw Error("Mat: negative dimension");
  }

  static Mat zeros(int rows, int cols) { return Mat(rows, cols); }

  static Mat full(int rows, int cols, double v) {
    Mat m(rows, cols);
    for (auto& x : m.d_) x = v;
    return m;
  }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat row3(double x, double y, double z) {
    Mat m(1, 3);
    m(0, 0) = x;
    m(0, 1) = y;
    m(0, 2) = z;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return d_.size(); }
  bool empty() const { return d_.empty(); }

  double& operator()(int r, int c) { return d_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return d_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  double* row_ptr(int r) { return d_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return d_.data() + static_cast<std::size_t>(r) * cols_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double x : d_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : d_) m = std::max(m, std::abs(x));
    return m;
  }

  void fill(double v) {
    for (auto& x : d_) x = v;
  }

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.d_ == b.d_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> d_;
};

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  Mat out(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* oi = out.row_ptr(i);
    for (int p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* bp = b.row_ptr(p);
      for (int j = 0; j < m; ++j) oi[j] += aip * bp[j];
    }
  }
  return out;
}

/// a * b^T
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimensions differ");
  Mat out(a.rows(), b.rows());
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* ai = a.row_ptr(i);
    for (int j = 0; j < m; ++j) {
      const double* bj = b.row_ptr(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      out(i, j) = s;
    }
  }
  return out;
}

/// a^T * b
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) throw Error("matmul_tn: inner dimensions differ");
  Mat out(a.cols(), b.cols());
  const int n = a.cols(), k = a.rows(), m = b.cols();
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row_ptr(p);
    const double* bp = b.row_ptr(p);
    for (int i = 0; i < n; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* oi = out.row_ptr(i);
      for (int j = 0; j < m; ++j) oi[j] += api * bp[j];
    }
  }
  return out;
}

inline void add_inplace(Mat& dst, const Mat& src) {
  if (!dst.same_shape(src)) throw Error("add_inplace: shape mismatch");
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

inline void axpy_inplace(Mat& dst, double alpha, const Mat& src) {
  if (!dst.same_shape(src)) throw Error("axpy_inplace: shape mismatch");
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw Error("max_abs_diff: shape mismatch");
  double m = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
  return m;
}

}  // namespace unimol

#endif  // UNIMOL_MAT_HPP
