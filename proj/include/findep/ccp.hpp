#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "findep/common.hpp"
#include "findep/io.hpp"
#include "findep/markov.hpp"
#include "findep/weights.hpp"

namespace findep {

inline constexpr double kCcpClamp = 1e-12;

// Choice probabilities of action 1, one row per period (a single row serves
// every period of a stationary model). Construction clamps to the open unit
// interval and counts how many entries needed it.
struct CcpTable {
  Matrix p1;
  long clamped = 0;

  CcpTable() = default;
  explicit CcpTable(Matrix probs) : p1(std::move(probs)) {
    for (Eigen::Index t = 0; t < p1.rows(); ++t)
      for (Eigen::Index x = 0; x < p1.cols(); ++x) {
        double& p = p1(t, x);
        require(std::isfinite(p), "CcpTable: non-finite probability");
        if (p < kCcpClamp) {
          p = kCcpClamp;
          ++clamped;
        } else if (p > 1.0 - kCcpClamp) {
          p = 1.0 - kCcpClamp;
          ++clamped;
        }
      }
  }

  bool stationary() const { return p1.rows() == 1; }
  Eigen::Index periods() const { return p1.rows(); }
  Eigen::Index states() const { return p1.cols(); }

  // row for decision period t (1-based); stationary tables serve any t
  Vector at(int t) const {
    if (stationary()) return p1.row(0).transpose();
    require(t >= 1 && t <= p1.rows(), "CcpTable: period out of range");
    return p1.row(t - 1).transpose();
  }
};

struct ValueDiffTable {
  Matrix v;
  bool boundary = false;  // some probability sat at the clamp bound
};

inline double lambda_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

inline CcpTable lambda(const ValueDiffTable& vt) {
  require(vt.v.allFinite(), "lambda: non-finite value difference");
  Matrix p(vt.v.rows(), vt.v.cols());
  for (Eigen::Index t = 0; t < p.rows(); ++t)
    for (Eigen::Index x = 0; x < p.cols(); ++x) p(t, x) = lambda_scalar(vt.v(t, x));
  return CcpTable(std::move(p));
}

inline ValueDiffTable lambda_inv(const CcpTable& ccp) {
  ValueDiffTable out;
  out.v.resize(ccp.p1.rows(), ccp.p1.cols());
  for (Eigen::Index t = 0; t < ccp.p1.rows(); ++t)
    for (Eigen::Index x = 0; x < ccp.p1.cols(); ++x) {
      double p = ccp.p1(t, x);
      if (p <= kCcpClamp || p >= 1.0 - kCcpClamp) out.boundary = true;
      out.v(t, x) = std::log(p) - std::log1p(-p);
    }
  return out;
}

// psi_d(p) = gamma_E - ln p(d, x): the expected shock of the chosen action,
// expressed through the choice probability.
inline Matrix psi(const CcpTable& ccp, int d) {
  require(d == 0 || d == 1, "psi: binary actions only");
  Matrix out(ccp.p1.rows(), ccp.p1.cols());
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      double p = d == 1 ? ccp.p1(t, x) : 1.0 - ccp.p1(t, x);
      out(t, x) = kEulerGamma - std::log(p);
    }
  return out;
}

struct WeightedAggregates {
  Vector u_bar;
  Vector psi_bar;
};

// Per-arrival-state averages under binary weights w and 1-w.
inline WeightedAggregates weighted_aggregates(const Vector& w, const Vector& u1,
                                              const Vector& u0, const Vector& p1) {
  const Eigen::Index n = w.size();
  require(u1.size() == n && u0.size() == n && p1.size() == n,
          "weighted_aggregates: length mismatch");
  WeightedAggregates out;
  out.u_bar = w.cwiseProduct(u1) + (Vector::Ones(n) - w).cwiseProduct(u0);
  out.psi_bar.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double psi1 = kEulerGamma - std::log(p1(i));
    double psi0 = kEulerGamma - std::log(1.0 - p1(i));
    out.psi_bar(i) = w(i) * psi1 + (1.0 - w(i)) * psi0;
  }
  return out;
}

// Replays the weight plan against the transitions: kappa[0] = F-tilde and
// kappa[s] = W_s F-tilde + kappa[s-1] F0, returning stages 0..rho-1 (the
// propagators that multiply the baseline continuation at each stage).
inline std::vector<Matrix> kappa_propagate(const WeightPlan& plan,
                                           const TransitionSet& ts) {
  require(ts.stationary, "kappa_propagate: stationary transitions required");
  const Matrix& F0 = ts.at(0);
  Matrix Ftilde = ts.at(1) - F0;
  require(plan.kappa_dense(0).rows() == Ftilde.rows() &&
              plan.kappa_dense(0).cols() == Ftilde.cols(),
          "kappa_propagate: plan/transition dimension mismatch");

  std::vector<Matrix> out;
  out.push_back(Ftilde);
  for (int s = 1; s < plan.rho; ++s)
    out.push_back(plan.W_dense(s) * Ftilde + out.back() * F0);
  return out;
}

inline void write_ccp_csv(const std::string& path, const CcpTable& ccp) {
  std::string body = "t,x,p1\n";
  for (Eigen::Index t = 0; t < ccp.p1.rows(); ++t)
    for (Eigen::Index x = 0; x < ccp.p1.cols(); ++x)
      body += std::to_string(t + 1) + "," + std::to_string(x) + "," +
              io::fmt_double(ccp.p1(t, x)) + "\n";
  io::write_text(path, body);
}

inline CcpTable read_ccp_csv(const std::string& path) {
  Matrix raw = io::read_csv_matrix(path, /*skip_header=*/true);
  require(raw.cols() == 3, "read_ccp_csv: expected columns t,x,p1");
  int T = 0;
  Eigen::Index X = 0;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    T = std::max(T, static_cast<int>(raw(r, 0)));
    X = std::max(X, static_cast<Eigen::Index>(raw(r, 1)) + 1);
  }
  require(T >= 1 && X >= 1 && raw.rows() == T * X,
          "read_ccp_csv: ragged or incomplete table");
  Matrix p = Matrix::Constant(T, X, -1.0);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    int t = static_cast<int>(raw(r, 0));
    auto x = static_cast<Eigen::Index>(raw(r, 1));
    require(t >= 1 && x >= 0 && x < X && p(t - 1, x) < 0.0,
            "read_ccp_csv: duplicate or out-of-range (t, x)");
    p(t - 1, x) = raw(r, 2);
  }
  return CcpTable(std::move(p));
}

}  // namespace findep
