#pragma once

#include <Eigen/Dense>
#include <lapacke.h>

#include <algorithm>
#include <stdexcept>
#include <string>

#include "findep/common.hpp"

namespace findep {

// V is always full (cols x cols): null projectors need the trailing right
// singular vectors, not just the range basis.
struct SvdFactors {
  Matrix U;        // rows x rows
  Vector S;        // min(rows, cols), non-increasing
  Matrix V;        // cols x cols
  int rank = 0;    // #{sigma > cut}
  double cut = 0;  // absolute threshold actually applied
};

namespace detail {

// LAPACK divide-and-conquer with a QR-iteration fallback. Eigen's own BDCSVD
// (3.4.0) mis-deflates matrices with clustered spectra, reporting phantom
// singular values far above roundoff, so all factorizations go through
// LAPACK here.
inline void lapack_svd(Matrix A, Vector& S, Matrix* U, Matrix* VT) {
  const lapack_int m = static_cast<lapack_int>(A.rows());
  const lapack_int n = static_cast<lapack_int>(A.cols());
  S.resize(std::min(m, n));
  if (U) U->resize(m, m);
  if (VT) VT->resize(n, n);
  const char jobz = U ? 'A' : 'N';
  Matrix A2 = A;
  lapack_int info = LAPACKE_dgesdd(
      LAPACK_COL_MAJOR, jobz, m, n, A.data(), m, S.data(),
      U ? U->data() : nullptr, m, VT ? VT->data() : nullptr, n);
  if (info == 0 && S.allFinite() && (!U || (U->allFinite() && VT->allFinite())))
    return;
  Vector superb(std::max<lapack_int>(1, std::min(m, n) - 1));
  info = LAPACKE_dgesvd(
      LAPACK_COL_MAJOR, U ? 'A' : 'N', VT ? 'A' : 'N', m, n, A2.data(), m,
      S.data(), U ? U->data() : nullptr, m, VT ? VT->data() : nullptr, n,
      superb.data());
  if (info != 0)
    throw std::runtime_error("svd: LAPACK failed to converge (info=" +
                             std::to_string(info) + ")");
}

}  // namespace detail

inline SvdFactors svd(const Matrix& M, double tol = 1e-10, bool tol_is_absolute = false) {
  require(M.allFinite(), "svd: input has non-finite entries");
  SvdFactors f;
  if (M.rows() == 0 || M.cols() == 0) {
    f.U = Matrix::Identity(M.rows(), M.rows());
    f.V = Matrix::Identity(M.cols(), M.cols());
    f.S = Vector::Zero(0);
    f.cut = tol_is_absolute ? tol : 0.0;
    return f;
  }
  Matrix VT;
  detail::lapack_svd(M, f.S, &f.U, &VT);
  f.V = VT.transpose();
  double smax = f.S.size() > 0 ? f.S(0) : 0.0;
  f.cut = tol_is_absolute ? tol : tol * smax;
  f.rank = 0;
  for (Eigen::Index i = 0; i < f.S.size(); ++i)
    if (f.S(i) > f.cut) ++f.rank;
  return f;
}

inline Matrix pinv(const Matrix& M, double tol = 1e-10) {
  SvdFactors f = svd(M, tol);
  if (f.rank == 0) return Matrix::Zero(M.cols(), M.rows());
  const int r = f.rank;
  return f.V.leftCols(r) * f.S.head(r).cwiseInverse().asDiagonal() *
         f.U.leftCols(r).transpose();
}

// P = I - M^+ M, the orthogonal projector onto the right null space.
inline Matrix null_projector(const Matrix& M, double tol = 1e-10) {
  SvdFactors f = svd(M, tol);
  const Eigen::Index n = M.cols();
  if (f.rank == 0) return Matrix::Identity(n, n);
  return Matrix::Identity(n, n) -
         f.V.leftCols(f.rank) * f.V.leftCols(f.rank).transpose();
}

inline Matrix kron(const Matrix& A, const Matrix& B,
                   Eigen::Index max_elems = 100'000'000) {
  require(A.allFinite() && B.allFinite(), "kron: non-finite input");
  const Eigen::Index rows = A.rows() * B.rows();
  const Eigen::Index cols = A.cols() * B.cols();
  if (rows <= 0 || cols <= 0 || rows > max_elems || cols > max_elems ||
      rows > max_elems / std::max<Eigen::Index>(cols, 1))
    throw std::length_error("kron: result of " + std::to_string(A.rows() * B.rows()) +
                            "x" + std::to_string(A.cols() * B.cols()) +
                            " exceeds the element cap; use the factored path");
  Matrix K(rows, cols);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

// Largest singular value. Exact SVD up to a size threshold, power iteration
// on M^T M beyond it.
inline double spectral_norm(const Matrix& M) {
  if (M.rows() == 0 || M.cols() == 0) return 0.0;
  require(M.allFinite(), "spectral_norm: non-finite input");
  if (std::min(M.rows(), M.cols()) <= 1500) {
    Vector S;
    detail::lapack_svd(M, S, nullptr, nullptr);
    return S.size() > 0 ? S(0) : 0.0;
  }
  Vector v = Vector::Zero(M.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = u01(0x5ec7a11u, 0, static_cast<std::uint64_t>(i), 0, 0) - 0.5;
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < 5000; ++it) {
    Vector Mv = M * v;
    double s = Mv.norm();
    if (s == 0.0) return 0.0;
    Vector w = M.transpose() * Mv;
    double wn = w.norm();
    if (wn == 0.0) return s;
    v = w / wn;
    if (std::abs(s - sigma) <= 1e-13 * std::max(1.0, s)) return s;
    sigma = s;
  }
  return sigma;
}

}  // namespace findep
