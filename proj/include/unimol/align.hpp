//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_ALIGN_HPP
#define UNIMOL_ALIGN_HPP

#include <array>
#include <cmath>
#include <limits>

#include "unimol/mat.hpp"
#include "unimol/symmetry.hpp"

namespace unimol {

/// Proper rigid motion in row convention: x -> x * Q + t.
struct RigidTransform {
  Mat rotation;                       // 3x3, orthogonal, det +1
  std::array<double, 3> translation;  // angstroms

  Mat apply(const Mat& points) const {
    Mat out = matmul(points, rotation);
    for (int i = 0; i < out.rows(); ++i)
      for (int c = 0; c < 3; ++c) out(i, c) += translation[static_cast<std::size_t>(c)];
    return out;
  }
};

struct AlignResult {
  RigidTransform transform;
  double rmsd = 0.0;
};

namespace detail {

/// Cyclic Jacobi diagonalization of a symmetric 4x4 matrix. Eigenvectors are
/// the columns of `vecs`. Off-diagonal tolerance 1e-12 (relative), 50 sweeps.
inline void jacobi_eig4(const std::array<std::array<double, 4>, 4>& m_in, std::array<double, 4>& vals,
                        std::array<std::array<double, 4>, 4>& vecs) {
  auto a = m_in;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) vecs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = (i == j) ? 1.0 : 0.0;

  double scale = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) scale = std::max(scale, std::abs(a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
  const double tol = 1e-12 * std::max(scale, 1.0);

  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) off = std::max(off, std::abs(a[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)]));
    if (off <= tol) break;

    for (int p = 0; p < 4; ++p) {
      for (int q = p + 1; q < 4; ++q) {
        const double apq = a[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
        if (std::abs(apq) <= tol * 1e-2) continue;
        const double app = a[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)];
        const double aqq = a[static_cast<std::size_t>(q)][static_cast<std::size_t>(q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < 4; ++k) {
          const double akp = a[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
          const double akq = a[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)];
          a[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] = c * akp - s * akq;
          a[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)] = s * akp + c * akq;
        }
        for (int k = 0; k < 4; ++k) {
          const double apk = a[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
          const double aqk = a[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)];
          a[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)] = s * apk + c * aqk;
        }
        for (int k = 0; k < 4; ++k) {
          const double vkp = vecs[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
          const double vkq = vecs[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)];
          vecs[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] = c * vkp - s * vkq;
          vecs[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < 4; ++i) vals[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
}

/// Column-convention rotation matrix of a unit quaternion (w, x, y, z).
inline Mat quat_to_rotation(double w, double x, double y, double z) {
  Mat r(3, 3);
  r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

inline void check_conformation_pair(const Mat& ref, const Mat& pred) {
  if (ref.rows() != pred.rows()) throw Error("alignment: row counts differ");
  if (ref.rows() < 1) throw Error("alignment: empty conformations");
  if (ref.cols() != 3 || pred.cols() != 3) throw Error("alignment: conformations must have 3 columns");
  if (!ref.all_finite() || !pred.all_finite()) throw Error("alignment: non-finite input");
}

/// Kearsley cross-covariance matrix of the centered pair; its smallest
/// eigenvalue equals the minimal squared alignment residual.
inline std::array<std::array<double, 4>, 4> kearsley_matrix(const Mat& ref, const Mat& pred) {
  const int n = ref.rows();
  std::array<double, 3> cr{0, 0, 0}, cp{0, 0, 0};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      cr[static_cast<std::size_t>(c)] += ref(i, c);
      cp[static_cast<std::size_t>(c)] += pred(i, c);
    }
  for (int c = 0; c < 3; ++c) {
    cr[static_cast<std::size_t>(c)] /= n;
    cp[static_cast<std::size_t>(c)] /= n;
  }
  std::array<std::array<double, 4>, 4> m{};
  for (int i = 0; i < n; ++i) {
    double d[3], s[3];
    for (int c = 0; c < 3; ++c) {
      const double x = pred(i, c) - cp[static_cast<std::size_t>(c)];
      const double y = ref(i, c) - cr[static_cast<std::size_t>(c)];
      d[c] = x - y;
      s[c] = x + y;
    }
    m[0][0] += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    m[0][1] += s[1] * d[2] - s[2] * d[1];
    m[0][2] += s[2] * d[0] - s[0] * d[2];
    m[0][3] += s[0] * d[1] - s[1] * d[0];
    m[1][1] += s[1] * s[1] + s[2] * s[2] + d[0] * d[0];
    m[1][2] += d[0] * d[1] - s[0] * s[1];
    m[1][3] += d[0] * d[2] - s[0] * s[2];
    m[2][2] += s[0] * s[0] + s[2] * s[2] + d[1] * d[1];
    m[2][3] += d[1] * d[2] - s[1] * s[2];
    m[3][3] += s[0] * s[0] + s[1] * s[1] + d[2] * d[2];
  }
  m[1][0] = m[0][1];
  m[2][0] = m[0][2];
  m[3][0] = m[0][3];
  m[2][1] = m[1][2];
  m[3][1] = m[1][3];
  m[3][2] = m[2][3];
  return m;
}

}  // namespace detail

/// Least-squares rigid superposition of pred onto ref via the quaternion
/// (Kearsley) method: the smallest eigenvalue of the 4x4 cross-covariance
/// matrix is the minimal squared residual and its eigenvector the optimal
/// rotation. Returns the transform and the minimized RMSD.
inline AlignResult optimal_alignment(const Mat& ref, const Mat& pred) {
  detail::check_conformation_pair(ref, pred);
  const int n = ref.rows();

  std::array<double, 3> cr{0, 0, 0}, cp{0, 0, 0};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      cr[static_cast<std::size_t>(c)] += ref(i, c);
      cp[static_cast<std::size_t>(c)] += pred(i, c);
    }
  for (int c = 0; c < 3; ++c) {
    cr[static_cast<std::size_t>(c)] /= n;
    cp[static_cast<std::size_t>(c)] /= n;
  }

  const auto m = detail::kearsley_matrix(ref, pred);
  std::array<double, 4> vals;
  std::array<std::array<double, 4>, 4> vecs;
  detail::jacobi_eig4(m, vals, vecs);

  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (vals[static_cast<std::size_t>(k)] < vals[static_cast<std::size_t>(best)]) best = k;

  const double w = vecs[0][static_cast<std::size_t>(best)];
  const double qx = vecs[1][static_cast<std::size_t>(best)];
  const double qy = vecs[2][static_cast<std::size_t>(best)];
  const double qz = vecs[3][static_cast<std::size_t>(best)];

  // Column-convention rotation taking centered pred onto centered ref;
  // in row convention Q is its transpose.
  const Mat rc = detail::quat_to_rotation(w, qx, qy, qz);
  AlignResult out;
  out.transform.rotation = transpose(rc);
  for (int c = 0; c < 3; ++c) {
    double qc = 0.0;
    for (int k = 0; k < 3; ++k) qc += cp[static_cast<std::size_t>(k)] * out.transform.rotation(k, c);
    out.transform.translation[static_cast<std::size_t>(c)] = cr[static_cast<std::size_t>(c)] - qc;
  }
  // Evaluate the residual of the recovered transform rather than taking
  // sqrt(lambda_min/n): near-zero eigenvalues carry solver noise that the
  // sqrt amplifies, while the applied-transform residual is exact.
  const Mat mapped = out.transform.apply(pred);
  double ss = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      const double diff = ref(i, c) - mapped(i, c);
      ss += diff * diff;
    }
  out.rmsd = std::sqrt(ss / n);
  return out;
}

/// Roto-translation-minimized RMSD between two conformations, in angstroms.
inline double rmsd(const Mat& ref, const Mat& pred) { return optimal_alignment(ref, pred).rmsd; }

struct MinRmsdResult {
  double rmsd = 0.0;
  Permutation best_perm;
};

/// Minimum over alpha in P of rmsd(ref, alpha(pred)); ties keep the first
/// permutation in enumeration order.
inline MinRmsdResult min_rmsd_over_aut(const Mat& ref, const Mat& pred, const AutomorphismSet& aut) {
  if (aut.perms.empty()) throw Error("min_rmsd_over_aut: empty automorphism set");
  MinRmsdResult out;
  out.rmsd = std::numeric_limits<double>::infinity();
  for (const Permutation& alpha : aut.perms) {
    const double r = rmsd(ref, apply_permutation(alpha, pred));
    if (r < out.rmsd) {
      out.rmsd = r;
      out.best_perm = alpha;
    }
  }
  return out;
}

}  // namespace unimol

#endif  // UNIMOL_ALIGN_HPP
