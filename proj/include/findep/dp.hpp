#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "findep/ccp.hpp"
#include "findep/common.hpp"
#include "findep/io.hpp"
#include "findep/markov.hpp"

namespace findep {

// Integrated values, choice-value differences, and implied CCPs; one row per
// period (a single row for the infinite-horizon solution).
struct Solution {
  bool stationary = true;
  Matrix V;
  ValueDiffTable v_tilde;
  CcpTable p;
  int iterations = 0;
  double residual = 0;
};

namespace detail {

struct ChoiceValues {
  Vector a0;
  Vector a1;
};

inline ChoiceValues choice_values(const Vector& V, const EntryModel& m, double beta,
                                  int t) {
  ChoiceValues cv;
  Vector u0 = m.util.u(0, m.util.theta);
  Vector u1 = m.util.u(1, m.util.theta);
  cv.a0 = u0 + beta * (m.dense().at(0, t) * V);
  cv.a1 = u1 + beta * (m.dense().at(1, t) * V);
  return cv;
}

}  // namespace detail

// One Bellman step: V'(x) = gamma_E + ln(exp a0 + exp a1), max-shifted.
inline Vector bellman_update(const Vector& V, const EntryModel& m, double beta,
                             int t = 1) {
  require(V.allFinite(), "bellman_update: non-finite values");
  require(V.size() == m.cfg.X(), "bellman_update: value length mismatch");
  detail::ChoiceValues cv = detail::choice_values(V, m, beta, t);
  Vector out(V.size());
  for (Eigen::Index x = 0; x < V.size(); ++x) {
    double hi = std::max(cv.a0(x), cv.a1(x));
    out(x) = kEulerGamma + hi +
             std::log(std::exp(cv.a0(x) - hi) + std::exp(cv.a1(x) - hi));
  }
  return out;
}

inline Solution solve_stationary(const EntryModel& m, double beta,
                                 double tol = 1e-10, int max_iter = 100000) {
  require(beta > 0.0 && beta < 1.0, "solve_stationary: beta must be in (0,1)");
  require(m.dense().stationary, "solve_stationary: stationary transitions required");
  Vector V = Vector::Zero(m.cfg.X());
  double gap = 0;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vector Vn = bellman_update(V, m, beta);
    gap = (Vn - V).cwiseAbs().maxCoeff();
    V = std::move(Vn);
    if (gap <= tol) break;
  }
  if (gap > tol)
    throw std::runtime_error("solve_stationary: no convergence after " +
                             std::to_string(max_iter) +
                             " iterations (residual " + io::fmt_double(gap) + ")");

  Solution sol;
  sol.stationary = true;
  sol.iterations = it + 1;
  sol.residual = gap;
  sol.V = V.transpose();
  detail::ChoiceValues cv = detail::choice_values(V, m, beta, 1);
  sol.v_tilde.v = (cv.a1 - cv.a0).transpose();
  sol.p = lambda(sol.v_tilde);
  return sol;
}

// Backward induction over t = T_total..1 with a supplied terminal value
// (default zero) attached after period T_total.
inline Solution solve_finite_horizon(const EntryModel& m, double beta, int T_total,
                                     Vector terminal = Vector()) {
  require(T_total >= 1, "solve_finite_horizon: horizon must be positive");
  const Eigen::Index X = m.cfg.X();
  if (terminal.size() == 0) terminal = Vector::Zero(X);
  require(terminal.size() == X, "solve_finite_horizon: terminal length mismatch");
  if (!m.dense().stationary)
    require(T_total <= m.dense().periods(),
            "solve_finite_horizon: horizon exceeds available transitions");

  Solution sol;
  sol.stationary = false;
  sol.V.resize(T_total, X);
  sol.v_tilde.v.resize(T_total, X);
  Matrix probs(T_total, X);
  Vector Vnext = terminal;
  for (int t = T_total; t >= 1; --t) {
    detail::ChoiceValues cv = detail::choice_values(Vnext, m, beta, t);
    Vector vt = cv.a1 - cv.a0;
    Vector Vt(X);
    for (Eigen::Index x = 0; x < X; ++x) {
      double hi = std::max(cv.a0(x), cv.a1(x));
      Vt(x) = kEulerGamma + hi +
              std::log(std::exp(cv.a0(x) - hi) + std::exp(cv.a1(x) - hi));
    }
    sol.V.row(t - 1) = Vt.transpose();
    sol.v_tilde.v.row(t - 1) = vt.transpose();
    for (Eigen::Index x = 0; x < X; ++x) probs(t - 1, x) = lambda_scalar(vt(x));
    Vnext = Vt;
  }
  sol.p = CcpTable(std::move(probs));
  return sol;
}

// Linear CCP-based solution: V = (I - beta F^P)^{-1} (u^P + e^P).
inline Solution hm_solution(const CcpTable& p, const EntryModel& m, double beta) {
  require(p.stationary(), "hm_solution: stationary CCP table required");
  require(m.dense().stationary, "hm_solution: stationary transitions required");
  const Eigen::Index X = m.cfg.X();
  require(p.states() == X, "hm_solution: CCP length mismatch");

  Vector p1 = p.at(1);
  Vector u0 = m.util.u(0, m.util.theta);
  Vector u1 = m.util.u(1, m.util.theta);
  Matrix FP = p1.asDiagonal() * m.dense().at(1) +
              (Vector::Ones(X) - p1).asDiagonal() * m.dense().at(0);
  Vector rhs(X);
  for (Eigen::Index x = 0; x < X; ++x) {
    double eP = p1(x) * (kEulerGamma - std::log(p1(x))) +
                (1.0 - p1(x)) * (kEulerGamma - std::log(1.0 - p1(x)));
    rhs(x) = p1(x) * u1(x) + (1.0 - p1(x)) * u0(x) + eP;
  }
  Matrix A = Matrix::Identity(X, X) - beta * FP;
  Vector V = A.partialPivLu().solve(rhs);
  require((A * V - rhs).cwiseAbs().maxCoeff() <=
              1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff()),
          "hm_solution: linear system did not solve (singular?)");

  Solution sol;
  sol.stationary = true;
  sol.V = V.transpose();
  detail::ChoiceValues cv = detail::choice_values(V, m, beta, 1);
  sol.v_tilde.v = (cv.a1 - cv.a0).transpose();
  sol.p = lambda(sol.v_tilde);
  return sol;
}

struct Panel {
  int N = 0;
  int T = 0;
  std::uint64_t seed = 0;
  Eigen::Index X = 0;
  Vector theta;                 // generating parameters
  std::vector<std::int32_t> x;  // unit-major: row i*T + (t-1)
  std::vector<std::int8_t> d;

  size_t row(int i, int t) const {
    return static_cast<size_t>(i) * static_cast<size_t>(T) +
           static_cast<size_t>(t - 1);
  }
};

// Stationary distribution of the policy-induced chain, by power iteration.
inline Vector stationary_distribution(const Matrix& FP, double tol = 1e-10,
                                      int max_iter = 100000) {
  const Eigen::Index X = FP.rows();
  Vector pi = Vector::Constant(X, 1.0 / static_cast<double>(X));
  for (int it = 0; it < max_iter; ++it) {
    Vector next = FP.transpose() * pi;
    next /= next.sum();
    double gap = (next - pi).cwiseAbs().maxCoeff();
    pi = std::move(next);
    if (gap <= tol) return pi;
  }
  return pi;
}

namespace detail {

inline Eigen::Index draw_from_cdf(const Vector& weights, double u) {
  double acc = 0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    acc += weights(k);
    if (u < acc) return k;
  }
  return weights.size() - 1;
}

}  // namespace detail

// Counter-based streams: every draw is keyed by (seed, replication, unit,
// period, slot), so panels are reproducible regardless of generation order.
// Slots: 0 = initial state, 1 = action, 2 = state transition.
inline Panel simulate_panel(const Solution& sol, const EntryModel& m, int N, int T,
                            std::uint64_t seed, std::uint64_t replication = 0) {
  require(N >= 1 && T >= 1, "simulate_panel: N and T must be positive");
  const Eigen::Index X = m.cfg.X();
  require(sol.p.states() == X, "simulate_panel: solution does not match model");
  if (!sol.p.stationary())
    require(sol.p.periods() >= T, "simulate_panel: solution horizon too short");

  Panel panel;
  panel.N = N;
  panel.T = T;
  panel.seed = seed;
  panel.X = X;
  panel.theta = m.util.theta;
  panel.x.resize(static_cast<size_t>(N) * static_cast<size_t>(T));
  panel.d.resize(panel.x.size());

  Vector init;
  if (sol.p.stationary()) {
    Vector p1 = sol.p.at(1);
    Matrix FP = p1.asDiagonal() * m.dense().at(1) +
                (Vector::Ones(X) - p1).asDiagonal() * m.dense().at(0);
    init = stationary_distribution(FP);
  } else {
    init = Vector::Constant(X, 1.0 / static_cast<double>(X));
  }

  for (int i = 0; i < N; ++i) {
    auto ui = static_cast<std::uint64_t>(i);
    Eigen::Index xt = detail::draw_from_cdf(init, u01(seed, replication, ui, 0, 0));
    for (int t = 1; t <= T; ++t) {
      auto ut = static_cast<std::uint64_t>(t);
      Vector pt = sol.p.at(t);
      int dt = u01(seed, replication, ui, ut, 1) < pt(xt) ? 1 : 0;
      panel.x[panel.row(i, t)] = static_cast<std::int32_t>(xt);
      panel.d[panel.row(i, t)] = static_cast<std::int8_t>(dt);
      if (t < T) {
        const Matrix& F = m.dense().at(dt, t);
        xt = detail::draw_from_cdf(F.row(xt).transpose(),
                                   u01(seed, replication, ui, ut, 2));
      }
    }
  }
  return panel;
}

inline void write_panel_csv(const std::string& path, const Panel& panel) {
  std::string body = "i,t,x,d\n";
  body.reserve(panel.x.size() * 12 + 8);
  for (int i = 0; i < panel.N; ++i)
    for (int t = 1; t <= panel.T; ++t) {
      size_t r = panel.row(i, t);
      body += std::to_string(i) + "," + std::to_string(t) + "," +
              std::to_string(panel.x[r]) + "," + std::to_string(panel.d[r]) + "\n";
    }
  io::write_text(path, body);
}

inline Panel read_panel_csv(const std::string& path) {
  Matrix raw = io::read_csv_matrix(path, /*skip_header=*/true);
  require(raw.cols() == 4, "read_panel_csv: expected columns i,t,x,d");
  Panel panel;
  int maxI = -1, maxT = 0;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    maxI = std::max(maxI, static_cast<int>(raw(r, 0)));
    maxT = std::max(maxT, static_cast<int>(raw(r, 1)));
  }
  panel.N = maxI + 1;
  panel.T = maxT;
  require(panel.N >= 1 && panel.T >= 1 &&
              raw.rows() == static_cast<Eigen::Index>(panel.N) * panel.T,
          "read_panel_csv: incomplete panel");
  panel.x.assign(raw.rows(), 0);
  panel.d.assign(raw.rows(), 0);
  Eigen::Index X = 0;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    int i = static_cast<int>(raw(r, 0));
    int t = static_cast<int>(raw(r, 1));
    auto xv = static_cast<std::int32_t>(raw(r, 2));
    int dv = static_cast<int>(raw(r, 3));
    require(dv == 0 || dv == 1, "read_panel_csv: actions must be 0/1");
    require(xv >= 0, "read_panel_csv: negative state index");
    size_t idx = panel.row(i, t);
    panel.x[idx] = xv;
    panel.d[idx] = static_cast<std::int8_t>(dv);
    X = std::max(X, static_cast<Eigen::Index>(xv) + 1);
  }
  panel.X = X;
  return panel;
}

}  // namespace findep
