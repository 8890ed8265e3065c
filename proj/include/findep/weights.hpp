#pragma once

#include <string>
#include <vector>

#include "findep/common.hpp"
#include "findep/linalg.hpp"
#include "findep/markov.hpp"

namespace findep {

struct ExtractedW {
  Matrix W;
  Eigen::MatrixXi flags;  // 1 where w-check is nonzero but the denominator vanishes
  long flagged = 0;
};

// Recovers per-transition weights w from w-check entries, dividing by the
// stage denominator. Weights are unrestricted reals; degenerate cells are
// flagged, never thrown.
inline ExtractedW extract_w(const Matrix& W_check, const Matrix& denom,
                            double eps = 1e-12) {
  require(W_check.rows() == denom.rows() && W_check.cols() == denom.cols(),
          "extract_w: shape mismatch");
  ExtractedW out;
  out.W = Matrix::Zero(W_check.rows(), W_check.cols());
  out.flags = Eigen::MatrixXi::Zero(W_check.rows(), W_check.cols());
  for (Eigen::Index i = 0; i < W_check.rows(); ++i)
    for (Eigen::Index j = 0; j < W_check.cols(); ++j) {
      if (std::abs(denom(i, j)) > eps) {
        out.W(i, j) = W_check(i, j) / denom(i, j);
      } else if (std::abs(W_check(i, j)) > eps) {
        out.flags(i, j) = 1;
        ++out.flagged;
      }
    }
  return out;
}

// Weight stages for one origin period. Dense solvers fill W_check/kappa;
// the Kronecker path stores the endogenous-block factors instead and
// materializes on demand. kappa[s] is the stage-s residual matrix F-tilde^(s)
// (kappa[0] = F-tilde), so the stage-s weight denominator is kappa[s-1].
struct WeightPlan {
  int rho = 0;
  bool factored = false;

  std::vector<Matrix> W_check;             // stage s at index s-1
  std::vector<Matrix> kappa;               // s = 0..rho
  Matrix F_tilde_rho;                      // == kappa[rho]
  std::vector<Eigen::MatrixXi> flags;      // extract_w mask per stage
  std::vector<bool> realizable;            // per stage: no flagged entries

  std::vector<Matrix> W_omega;             // factored: W_s = W_omega[s-1] (x) Fz^s
  std::vector<Matrix> kappa_omega;         // factored: kappa[s] = kappa_omega[s] (x) Fz^{s+1}
  std::vector<Matrix> Fz_pow;              // Fz_pow[k] = F_z^k, k = 0..rho+1

  std::vector<double> residual;            // spectral norm of kappa[s], index s-1
  std::vector<double> residual_fro;        // Frobenius norm, same indexing

  double residual_at(int s) const { return residual.at(static_cast<size_t>(s - 1)); }

  Matrix W_dense(int s) const {
    require(s >= 1 && s <= rho, "WeightPlan: stage out of range");
    if (!factored) return W_check.at(static_cast<size_t>(s - 1));
    return kron(W_omega.at(static_cast<size_t>(s - 1)), Fz_pow.at(static_cast<size_t>(s)));
  }
  Matrix kappa_dense(int s) const {
    require(s >= 0 && s <= rho, "WeightPlan: stage out of range");
    if (!factored) return kappa.at(static_cast<size_t>(s));
    return kron(kappa_omega.at(static_cast<size_t>(s)), Fz_pow.at(static_cast<size_t>(s + 1)));
  }
};

struct OnePeriodSolution {
  Matrix W_check;
  Matrix residual_matrix;
};

// W = -Ft F0' (F-tilde')^+, the row-wise least-norm least-squares choice.
inline OnePeriodSolution solve_one_period(const Matrix& Ft, const Matrix& F0_next,
                                          const Matrix& Ftilde_next) {
  require(Ft.cols() == F0_next.rows() && F0_next.rows() == Ftilde_next.rows() &&
              F0_next.cols() == Ftilde_next.cols(),
          "solve_one_period: dimension mismatch");
  require(Ft.allFinite() && F0_next.allFinite() && Ftilde_next.allFinite(),
          "solve_one_period: non-finite input");
  OnePeriodSolution out;
  Matrix FtF0 = Ft * F0_next;
  out.W_check = -FtF0 * pinv(Ftilde_next);
  out.residual_matrix = out.W_check * Ftilde_next + FtF0;
  return out;
}

namespace detail {

inline void finalize_dense_stage(WeightPlan& plan, const Matrix& W,
                                 const Matrix& denom, const Matrix& next_kappa) {
  plan.W_check.push_back(W);
  ExtractedW ex = extract_w(W, denom);
  plan.flags.push_back(std::move(ex.flags));
  plan.realizable.push_back(ex.flagged == 0);
  plan.kappa.push_back(next_kappa);
  plan.residual.push_back(spectral_norm(next_kappa));
  plan.residual_fro.push_back(next_kappa.norm());
}

}  // namespace detail

// Myopic stage-by-stage solving: each stage minimizes its own residual given
// the previous stages.
inline WeightPlan solve_sequential(const Matrix& Ftilde, const Matrix& F0, int rho) {
  require(rho >= 1, "solve_sequential: rho must be at least 1");
  require(Ftilde.rows() == Ftilde.cols() && F0.rows() == F0.cols() &&
              Ftilde.rows() == F0.rows(),
          "solve_sequential: inputs must be square and of equal size");
  require(Ftilde.allFinite() && F0.allFinite(), "solve_sequential: non-finite input");

  SvdFactors f = svd(Ftilde);
  const Eigen::Index n = Ftilde.cols();
  Matrix Fp = f.rank == 0
                  ? Matrix::Zero(n, n)
                  : Matrix(f.V.leftCols(f.rank) *
                           f.S.head(f.rank).cwiseInverse().asDiagonal() *
                           f.U.leftCols(f.rank).transpose());
  Matrix P = f.rank == 0
                 ? Matrix::Identity(n, n)
                 : Matrix(Matrix::Identity(n, n) -
                          f.V.leftCols(f.rank) * f.V.leftCols(f.rank).transpose());

  WeightPlan plan;
  plan.rho = rho;
  plan.kappa.push_back(Ftilde);
  for (int s = 1; s <= rho; ++s) {
    const Matrix& prev = plan.kappa.back();
    Matrix prevF0 = prev * F0;
    Matrix W = -prevF0 * Fp;
    detail::finalize_dense_stage(plan, W, prev, prevF0 * P);
  }
  plan.F_tilde_rho = plan.kappa.back();
  return plan;
}

struct TwoPeriodSolution {
  Matrix W_check1;
  Matrix W_check2;
  Matrix residual2;
  double residual2_norm = 0;
};

// First-period weights chosen to make the two-period residual minimal:
// W1 = -F F0^2 P (F F0 P)^+ with P the null projector of F-tilde.
inline TwoPeriodSolution solve_two_period_optimal(const Matrix& Ftilde,
                                                  const Matrix& F0) {
  require(Ftilde.rows() == Ftilde.cols() && F0.rows() == F0.cols() &&
              Ftilde.rows() == F0.rows(),
          "solve_two_period_optimal: inputs must be square and of equal size");
  require(Ftilde.allFinite() && F0.allFinite(),
          "solve_two_period_optimal: non-finite input");

  SvdFactors f = svd(Ftilde);
  const Eigen::Index n = Ftilde.cols();
  Matrix Fp = f.rank == 0
                  ? Matrix::Zero(n, n)
                  : Matrix(f.V.leftCols(f.rank) *
                           f.S.head(f.rank).cwiseInverse().asDiagonal() *
                           f.U.leftCols(f.rank).transpose());
  Matrix P = f.rank == 0
                 ? Matrix::Identity(n, n)
                 : Matrix(Matrix::Identity(n, n) -
                          f.V.leftCols(f.rank) * f.V.leftCols(f.rank).transpose());

  Matrix FF0 = Ftilde * F0;
  Matrix E = FF0 * P;
  Matrix Ep = pinv(E);
  Matrix A = FF0 * F0 * P;

  TwoPeriodSolution out;
  out.W_check1 = -A * Ep;
  out.residual2 = A - A * (Ep * E);
  out.residual2_norm = spectral_norm(out.residual2);
  Matrix K1 = out.W_check1 * Ftilde + FF0;
  out.W_check2 = -K1 * F0 * Fp;
  return out;
}

// Time-varying analogue: weights at t make the distribution gap vanish after
// passing through periods t+1 and t+2.
inline TwoPeriodSolution solve_nonstationary_two_period(
    const Matrix& Ft, const Matrix& F0_t1, const Matrix& Ftilde_t1,
    const Matrix& F0_t2, const Matrix& Ftilde_t2) {
  const Eigen::Index n = Ft.rows();
  require(Ft.cols() == n && F0_t1.rows() == n && F0_t1.cols() == n &&
              Ftilde_t1.rows() == n && Ftilde_t1.cols() == n &&
              F0_t2.rows() == n && F0_t2.cols() == n && Ftilde_t2.rows() == n &&
              Ftilde_t2.cols() == n,
          "solve_nonstationary_two_period: all inputs must be X by X");

  Matrix E0 = F0_t2 * null_projector(Ftilde_t2);
  Matrix B = Ft * F0_t1 * E0;
  Matrix C = Ftilde_t1 * E0;
  Matrix Cp = pinv(C);

  TwoPeriodSolution out;
  out.W_check1 = -B * Cp;
  out.residual2 = B - B * (Cp * C);
  out.residual2_norm = spectral_norm(out.residual2);
  Matrix K1 = out.W_check1 * Ftilde_t1 + Ft * F0_t1;
  out.W_check2 = -K1 * F0_t2 * pinv(Ftilde_t2);
  return out;
}

enum class FdVerdict { OnePeriodFD, TwoPeriodFD, NotDetected };

inline std::string to_string(FdVerdict v) {
  switch (v) {
    case FdVerdict::OnePeriodFD: return "OnePeriodFD";
    case FdVerdict::TwoPeriodFD: return "TwoPeriodFD";
    default: return "NotDetected";
  }
}

struct FdDiagnosis {
  int rank_Ftilde = 0;
  int nullity = 0;
  double norm_S01 = 0;
  double norm_S01_S11_proj = 0;
  FdVerdict verdict = FdVerdict::NotDetected;
  double tol = 0;
};

// Partition S0 = V^T F0 V at the rank of F-tilde. A vanishing top-right block
// gives 1-period finite dependence; the secondary condition gives an exact
// 2-period correction.
inline FdDiagnosis diagnose_finite_dependence(const Matrix& Ftilde, const Matrix& F0,
                                              double tol = 1e-10) {
  require(Ftilde.rows() == Ftilde.cols() && F0.rows() == F0.cols() &&
              Ftilde.rows() == F0.rows(),
          "diagnose_finite_dependence: inputs must be square and of equal size");
  SvdFactors f = svd(Ftilde);
  const Eigen::Index n = Ftilde.cols();
  const Eigen::Index r = f.rank;

  FdDiagnosis d;
  d.rank_Ftilde = static_cast<int>(r);
  d.nullity = static_cast<int>(n - r);
  d.tol = tol;

  if (r == 0 || r == n) {
    d.verdict = FdVerdict::OnePeriodFD;
    return d;
  }
  Matrix S0 = f.V.transpose() * F0 * f.V;
  Matrix S01 = S0.block(0, r, r, n - r);
  Matrix S11 = S0.block(r, r, n - r, n - r);
  d.norm_S01 = spectral_norm(S01);
  if (d.norm_S01 <= tol) {
    d.verdict = FdVerdict::OnePeriodFD;
    return d;
  }
  Matrix S01p = pinv(S01);
  Matrix proj = S01 * S11 *
                (Matrix::Identity(n - r, n - r) - S01p * S01);
  d.norm_S01_S11_proj = spectral_norm(proj);
  d.verdict = d.norm_S01_S11_proj <= tol ? FdVerdict::TwoPeriodFD
                                         : FdVerdict::NotDetected;
  return d;
}

// Sequential solve carried out on the endogenous block only; full-state
// weights exist implicitly as W_omega (x) F_z^s. Requires a full-rank
// exogenous factor (Tauchen chains satisfy this).
inline WeightPlan kron_solve(const KronFactors& kf, int rho) {
  require(rho >= 1, "kron_solve: rho must be at least 1");
  require(kf.stationary, "kron_solve: factored solve is stationary-only");
  const Matrix& Fo0 = kf.omega(0);
  Matrix Fo_tilde = kf.omega(1) - kf.omega(0);
  const Matrix& Fz = kf.F_z;

  Eigen::ColPivHouseholderQR<Matrix> qr(Fz);
  require(qr.rank() == Fz.cols(),
          "kron_solve: exogenous factor is numerically rank-deficient; "
          "use the dense path");

  SvdFactors f = svd(Fo_tilde);
  const Eigen::Index m = Fo_tilde.cols();
  Matrix Fp = f.rank == 0
                  ? Matrix::Zero(m, m)
                  : Matrix(f.V.leftCols(f.rank) *
                           f.S.head(f.rank).cwiseInverse().asDiagonal() *
                           f.U.leftCols(f.rank).transpose());
  Matrix P = f.rank == 0
                 ? Matrix::Identity(m, m)
                 : Matrix(Matrix::Identity(m, m) -
                          f.V.leftCols(f.rank) * f.V.leftCols(f.rank).transpose());

  WeightPlan plan;
  plan.rho = rho;
  plan.factored = true;

  std::vector<Matrix> Fo0_pow(static_cast<size_t>(rho) + 1);
  Fo0_pow[0] = Matrix::Identity(m, m);
  for (int k = 1; k <= rho; ++k) Fo0_pow[static_cast<size_t>(k)] = Fo0_pow[static_cast<size_t>(k - 1)] * Fo0;
  plan.Fz_pow.resize(static_cast<size_t>(rho) + 2);
  plan.Fz_pow[0] = Matrix::Identity(Fz.rows(), Fz.cols());
  for (int k = 1; k <= rho + 1; ++k)
    plan.Fz_pow[static_cast<size_t>(k)] = plan.Fz_pow[static_cast<size_t>(k - 1)] * Fz;

  // expansion form of the sequential recursion on the endogenous block
  for (int s = 1; s <= rho; ++s) {
    Matrix acc = Fo_tilde * Fo0_pow[static_cast<size_t>(s)];
    for (int r2 = 1; r2 < s; ++r2)
      acc += plan.W_omega[static_cast<size_t>(r2 - 1)] * Fo_tilde *
             Fo0_pow[static_cast<size_t>(s - r2)];
    plan.W_omega.push_back(-acc * Fp);
  }

  Matrix Fo0P = Fo0 * P;
  plan.kappa_omega.push_back(Fo_tilde);
  for (int s = 1; s <= rho; ++s)
    plan.kappa_omega.push_back(plan.kappa_omega.back() * Fo0P);
  for (int s = 1; s <= rho; ++s) {
    const Matrix& ko = plan.kappa_omega[static_cast<size_t>(s)];
    const Matrix& zp = plan.Fz_pow[static_cast<size_t>(s + 1)];
    plan.residual.push_back(spectral_norm(ko) * spectral_norm(zp));
    plan.residual_fro.push_back(ko.norm() * zp.norm());
  }
  return plan;
}

// State-only weights w(x') shared across origins, solved in vectorized form:
// G = (F~^T (x) F~) L, g = -(F0^T (x) I) vec(F~), normal equations via the
// Hadamard identity G^T G = (F~ F~^T) o (F~^T F~).
inline std::pair<Vector, double> vec_lsq_solve(const Matrix& Ftilde, const Matrix& F0,
                                               Eigen::Index max_X = 8192) {
  require(Ftilde.rows() == Ftilde.cols() && F0.rows() == F0.cols() &&
              Ftilde.rows() == F0.rows(),
          "vec_lsq_solve: inputs must be square and of equal size");
  const Eigen::Index X = Ftilde.cols();
  if (X > max_X)
    throw std::length_error(
        "vec_lsq_solve: the X^2 intermediate exceeds the memory cap at X = " +
        std::to_string(X) + "; use kron_solve or the dense per-origin solvers");

  Matrix GtG = (Ftilde * Ftilde.transpose()).cwiseProduct(Ftilde.transpose() * Ftilde);
  Matrix T2 = Ftilde.transpose() * (Ftilde * F0);
  Vector rhs(X);
  for (Eigen::Index i = 0; i < X; ++i) rhs(i) = -T2.row(i).dot(Ftilde.row(i));

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(GtG);
  Vector w = cod.solve(rhs);
  double resid = (Ftilde * (w.asDiagonal() * Ftilde + F0)).norm();
  return {w, resid};
}

// Explicit design matrix for the vectorized form; test-scale only.
inline std::pair<Matrix, Vector> vec_lsq_design(const Matrix& Ftilde, const Matrix& F0,
                                                Eigen::Index max_X = 64) {
  const Eigen::Index X = Ftilde.cols();
  if (X > max_X)
    throw std::length_error("vec_lsq_design: explicit G needs X^3 doubles; "
                            "use vec_lsq_solve, kron_solve, or the dense solvers");
  Matrix G(X * X, X);
  for (Eigen::Index i = 0; i < X; ++i) {
    // column i = (row i of F~)^T kron (column i of F~), column-major vec
    for (Eigen::Index c = 0; c < X; ++c)
      for (Eigen::Index r2 = 0; r2 < X; ++r2)
        G(c * X + r2, i) = Ftilde(i, c) * Ftilde(r2, i);
  }
  Matrix FF0 = Ftilde * F0;
  Vector g(X * X);
  for (Eigen::Index c = 0; c < X; ++c)
    for (Eigen::Index r2 = 0; r2 < X; ++r2) g(c * X + r2) = -FF0(r2, c);
  return {G, g};
}

}  // namespace findep
