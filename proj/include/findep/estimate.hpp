#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "findep/ccp.hpp"
#include "findep/common.hpp"
#include "findep/dp.hpp"
#include "findep/io.hpp"
#include "findep/markov.hpp"
#include "findep/weights.hpp"

namespace findep {

enum class Estimator { FD, FD2, HM };
enum class CcpMode { Oracle, Frequency };

inline std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::FD: return "FD";
    case Estimator::FD2: return "FD2";
    default: return "HM";
  }
}

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "FD") return Estimator::FD;
  if (s == "FD2") return Estimator::FD2;
  if (s == "HM") return Estimator::HM;
  throw std::invalid_argument("unknown estimator '" + s + "' (use FD, FD2, or HM)");
}

inline std::string to_string(CcpMode m) {
  return m == CcpMode::Oracle ? "oracle" : "frequency";
}

inline CcpMode ccp_mode_from_string(const std::string& s) {
  if (s == "oracle") return CcpMode::Oracle;
  if (s == "frequency") return CcpMode::Frequency;
  throw std::invalid_argument("unknown ccp mode '" + s + "' (use oracle or frequency)");
}

namespace detail {

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double lap() {
    auto t1 = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(t1 - t0).count();
    t0 = t1;
    return s;
  }
};

// e-tilde(x') = psi_1 - psi_0 = ln p0 - ln p1; e_0(x') = gamma_E - ln p0
inline Vector e_tilde_at(const CcpTable& p, int t) {
  Vector p1 = p.at(t);
  return ((1.0 - p1.array()).log() - p1.array().log()).matrix();
}

inline Vector e_zero_at(const CcpTable& p, int t) {
  Vector p1 = p.at(t);
  return (kEulerGamma - (1.0 - p1.array()).log()).matrix();
}

inline double softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// first stage
// ---------------------------------------------------------------------------

// Add-half frequency CCPs: p-hat = (n1 + 0.5)/(n + 1), so empty cells sit at
// 0.5. pooled collapses all periods into one row (stationary models). Oracle
// mode returns the supplied table unchanged.
inline CcpTable estimate_ccp(const Panel& panel, CcpMode mode, bool pooled,
                             const CcpTable* oracle = nullptr) {
  if (mode == CcpMode::Oracle) {
    require(oracle != nullptr, "estimate_ccp: oracle mode needs a solved CCP table");
    return *oracle;
  }
  const int rows = pooled ? 1 : panel.T;
  Matrix n = Matrix::Zero(rows, panel.X);
  Matrix n1 = Matrix::Zero(rows, panel.X);
  for (int i = 0; i < panel.N; ++i) {
    for (int t = 1; t <= panel.T; ++t) {
      auto k = panel.row(i, t);
      int r = pooled ? 0 : t - 1;
      n(r, panel.x[k]) += 1.0;
      n1(r, panel.x[k]) += static_cast<double>(panel.d[k]);
    }
  }
  Matrix p = ((n1.array() + 0.5) / (n.array() + 1.0)).matrix();
  return CcpTable(p);
}

// ---------------------------------------------------------------------------
// linear value-difference assembly
// ---------------------------------------------------------------------------

// v-tilde(x; theta) = H(x)' theta + h(x) (+ b(x) when a truncation value is
// attached). Affine in theta by construction.
struct LinearValueDiff {
  Matrix H;  // X x K
  Vector h;  // X
  Vector b;  // X; empty unless assembled with a value function

  Vector value(const Vector& theta) const {
    Vector v = H * theta + h;
    if (b.size() > 0) v += b;
    return v;
  }
};

// Core assembly for one decision period t:
//   H = Phi1 + sum_s beta^s [ W_s (Phi1 - Phi0) + kappa_{s-1} Phi0 ]
//   h =        sum_s beta^s [ W_s e-tilde(p_{t+s}) + kappa_{s-1} e_0(p_{t+s}) ]
//   b = beta^{rho+1} kappa_rho V   (optional truncation term)
// W holds stages 1..rho (W[s-1]), kappa holds kappa_0..kappa_rho with
// kappa_0 = F-tilde at t.
inline LinearValueDiff assemble_linear_at(const std::vector<Matrix>& W,
                                          const std::vector<Matrix>& kappa,
                                          const UtilityModel& util,
                                          const CcpTable& p, double beta, int t,
                                          const Vector* V = nullptr) {
  const int rho = static_cast<int>(W.size());
  require(static_cast<int>(kappa.size()) == rho + 1,
          "assemble_linear_at: need kappa_0..kappa_rho");
  require(beta >= 0.0 && beta < 1.0, "assemble_linear_at: beta must be in [0,1)");
  const auto X = util.Phi1.rows();
  require(util.Phi0.rows() == X && util.Phi0.cols() == util.Phi1.cols(),
          "assemble_linear_at: feature shape mismatch");

  Matrix Phit = util.Phi1 - util.Phi0;
  LinearValueDiff out;
  out.H = Phit;  // leading u-tilde term; equals phi(x,1) when phi(x,0) = 0
  out.h = Vector::Zero(X);
  double bs = 1.0;
  for (int s = 1; s <= rho; ++s) {
    bs *= beta;
    if (bs == 0.0) break;
    const Matrix& Ws = W[static_cast<size_t>(s - 1)];
    const Matrix& kap = kappa[static_cast<size_t>(s - 1)];
    require(Ws.rows() == X && kap.rows() == X,
            "assemble_linear_at: stage row mismatch");
    require(Ws.cols() == Phit.rows() && kap.cols() == util.Phi0.rows(),
            "assemble_linear_at: stage column mismatch");
    out.H += bs * (Ws * Phit + kap * util.Phi0);
    out.h += bs * (Ws * detail::e_tilde_at(p, t + s) +
                   kap * detail::e_zero_at(p, t + s));
  }
  if (V != nullptr && bs > 0.0) {
    const Matrix& tail = kappa[static_cast<size_t>(rho)];
    require(V->size() == tail.cols(), "assemble_linear_at: value length mismatch");
    out.b = (bs * beta) * (tail * (*V));
  }
  return out;
}

// Stationary wrapper over a solved WeightPlan.
inline LinearValueDiff assemble_linear(const WeightPlan& plan,
                                       const TransitionSet& ts,
                                       const UtilityModel& util,
                                       const CcpTable& p, double beta, int rho,
                                       const Vector* V = nullptr) {
  require(rho >= 0 && rho <= plan.rho,
          "assemble_linear: rho exceeds the solved plan");
  require(ts.stationary, "assemble_linear: stationary transitions required");
  require(ts.X == util.Phi1.rows(), "assemble_linear: state count mismatch");
  std::vector<Matrix> W, kappa;
  W.reserve(static_cast<size_t>(rho));
  kappa.reserve(static_cast<size_t>(rho) + 1);
  for (int s = 1; s <= rho; ++s) W.push_back(plan.W_dense(s));
  for (int s = 0; s <= rho; ++s) kappa.push_back(plan.kappa_dense(s));
  return assemble_linear_at(W, kappa, util, p, beta, 1, V);
}

// ---------------------------------------------------------------------------
// log-likelihood
// ---------------------------------------------------------------------------

// Sufficient statistics of a panel for the offset logit: per (period, state)
// visit counts and action-1 counts. One pooled row when the index is
// time-invariant.
struct ObsCounts {
  Matrix n;   // rows x X
  Matrix n1;  // rows x X
  double total = 0.0;

  int rows() const { return static_cast<int>(n.rows()); }
};

inline ObsCounts count_actions(const Panel& panel, bool pooled, int t_begin,
                               int t_end) {
  require(t_begin >= 1 && t_end <= panel.T && t_begin <= t_end,
          "count_actions: period range out of bounds");
  const int rows = pooled ? 1 : t_end - t_begin + 1;
  ObsCounts out;
  out.n = Matrix::Zero(rows, panel.X);
  out.n1 = Matrix::Zero(rows, panel.X);
  for (int i = 0; i < panel.N; ++i) {
    for (int t = t_begin; t <= t_end; ++t) {
      auto k = panel.row(i, t);
      int r = pooled ? 0 : t - t_begin;
      out.n(r, panel.x[k]) += 1.0;
      out.n1(r, panel.x[k]) += static_cast<double>(panel.d[k]);
      out.total += 1.0;
    }
  }
  return out;
}

struct LoglikResult {
  double value = 0.0;
  Vector grad;
  Matrix hess;  // filled only when requested
};

// l(theta) = sum_obs [ d v-tilde - ln(1 + exp(v-tilde)) ]; grad = sum (d - L) H;
// hess = -sum L(1-L) H H'. lins holds one block per counts row (or a single
// block reused by every row).
inline LoglikResult loglik_counts(const Vector& theta,
                                  const std::vector<LinearValueDiff>& lins,
                                  const ObsCounts& counts,
                                  bool with_hessian = false) {
  require(theta.allFinite(), "loglik: non-finite theta");
  require(!lins.empty(), "loglik: no linear blocks");
  require(lins.size() == 1 ||
              static_cast<int>(lins.size()) == counts.rows(),
          "loglik: block count does not match count rows");
  const auto K = theta.size();
  LoglikResult out;
  out.grad = Vector::Zero(K);
  if (with_hessian) out.hess = Matrix::Zero(K, K);
  for (int r = 0; r < counts.rows(); ++r) {
    const LinearValueDiff& lin = lins[lins.size() == 1 ? 0 : static_cast<size_t>(r)];
    require(lin.H.cols() == K, "loglik: theta length mismatch");
    Vector v = lin.value(theta);
    Vector lam(v.size()), sp(v.size());
    for (Eigen::Index x = 0; x < v.size(); ++x) {
      lam(x) = lambda_scalar(v(x));
      sp(x) = detail::softplus(v(x));
    }
    Vector nr = counts.n.row(r).transpose();
    Vector n1r = counts.n1.row(r).transpose();
    out.value += n1r.dot(v) - nr.dot(sp);
    Vector resid = n1r - nr.cwiseProduct(lam);
    out.grad += lin.H.transpose() * resid;
    if (with_hessian) {
      Vector w = nr.cwiseProduct(lam.cwiseProduct((1.0 - lam.array()).matrix()));
      out.hess -= lin.H.transpose() * w.asDiagonal() * lin.H;
    }
  }
  return out;
}

// Panel-facing wrapper: builds counts over [t_begin, t_end] (pooled when a
// single block is supplied) and evaluates value and gradient.
inline std::pair<double, Vector> fd_loglik(const Vector& theta,
                                           const std::vector<LinearValueDiff>& lins,
                                           const Panel& panel, int t_begin,
                                           int t_end) {
  ObsCounts counts = count_actions(panel, lins.size() == 1, t_begin, t_end);
  LoglikResult r = loglik_counts(theta, lins, counts);
  return {r.value, r.grad};
}

// ---------------------------------------------------------------------------
// Newton optimizer
// ---------------------------------------------------------------------------

struct NewtonResult {
  Vector theta;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton on the concave offset logit: full step, halved until the
// objective improves. Stops at ||grad||_inf <= tol, or once line searches
// stop gaining anything at double resolution; that stall only counts as
// convergence when the gradient has collapsed relative to its initial size
// (a nearly flat likelihood direction, not a separated sample).
inline NewtonResult newton_logit(const std::vector<LinearValueDiff>& lins,
                                 const ObsCounts& counts, Vector theta0,
                                 double tol = 1e-8, int max_iter = 200) {
  NewtonResult out;
  out.theta = std::move(theta0);
  LoglikResult cur = loglik_counts(out.theta, lins, counts, true);
  const double grad0 = cur.grad.lpNorm<Eigen::Infinity>();
  const double stall_cap =
      std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + grad0);
  int stalls = 0;
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    out.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
    if (out.grad_norm <= tol) {
      out.converged = true;
      break;
    }
    Matrix A = -cur.hess;
    A.diagonal().array() += 1e-12;
    Vector step = A.ldlt().solve(cur.grad);
    if (!step.allFinite()) break;
    double scale = 1.0;
    bool improved = false;
    double gain = 0.0;
    for (int half = 0; half < 50; ++half) {
      Vector cand = out.theta + scale * step;
      LoglikResult trial = loglik_counts(cand, lins, counts, true);
      if (std::isfinite(trial.value) && trial.value >= cur.value) {
        gain = trial.value - cur.value;
        out.theta = std::move(cand);
        cur = std::move(trial);
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;  // no ascent direction left at fp resolution
    double gain_floor = 64.0 * std::numeric_limits<double>::epsilon() *
                        (1.0 + std::abs(cur.value));
    stalls = gain <= gain_floor ? stalls + 1 : 0;
    if (stalls >= 2) break;  // objective exhausted at fp resolution
  }
  if (!out.converged) {
    out.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
    out.converged = out.grad_norm <= (stalls >= 2 ? stall_cap : tol);
  }
  out.value = cur.value;
  return out;
}

// ---------------------------------------------------------------------------
// estimators
// ---------------------------------------------------------------------------

struct EstimateOptions {
  Estimator estimator = Estimator::FD;
  CcpMode ccp = CcpMode::Oracle;
  int rho = 2;
  bool bias_correct = false;  // append the beta^{rho+1} truncation term
  double tol = 1e-8;
  int max_iter = 200;
};

// Weight matrices reused across replications (they depend on transitions
// only, never on CCPs or data).
struct WeightCache {
  // stationary: stage weights 1..rho and kappa_0..kappa_rho
  std::vector<Matrix> W;
  std::vector<Matrix> kappa;
  // nonstationary: one list per estimation period t = 1..T-rho
  std::vector<std::vector<Matrix>> W_t;
  std::vector<std::vector<Matrix>> kappa_t;
  double residual1 = 0.0;
  double residual2 = 0.0;
  double time_weights = 0.0;
};

namespace detail {

// FD: stage-by-stage least squares; FD2: residual passed to t+2. Residual
// norms reported are those of the least-squares problems actually solved.
inline void stationary_weights(WeightCache& wc, const TransitionSet& ts,
                               const EstimateOptions& opt) {
  Matrix F0 = ts.at(0);
  Matrix Ftilde = ts.at(1) - F0;
  if (opt.estimator == Estimator::FD) {
    WeightPlan plan = solve_sequential(Ftilde, F0, opt.rho);
    for (int s = 1; s <= opt.rho; ++s) wc.W.push_back(plan.W_dense(s));
    for (int s = 0; s <= opt.rho; ++s) wc.kappa.push_back(plan.kappa_dense(s));
    wc.residual1 = plan.residual_at(1);
    wc.residual2 = opt.rho >= 2 ? plan.residual_at(2) : 0.0;
  } else {
    require(opt.rho == 2, "two-period estimator: rho must be 2");
    TwoPeriodSolution two = solve_two_period_optimal(Ftilde, F0);
    wc.W = {two.W_check1, two.W_check2};
    Matrix k1 = two.W_check1 * Ftilde + Ftilde * F0;
    Matrix k2 = k1 * F0 + two.W_check2 * Ftilde;
    wc.kappa = {Ftilde, std::move(k1), std::move(k2)};
    wc.residual1 = two.residual2_norm;
    wc.residual2 = spectral_norm(wc.kappa[2]);
  }
}

inline void nonstationary_weights(WeightCache& wc, const TransitionSet& ts,
                                  const EstimateOptions& opt, int T_data) {
  const int t_end = T_data - opt.rho;
  require(t_end >= 1, "estimate: horizon too short for the requested rho");
  require(ts.periods() >= T_data, "estimate: transitions shorter than the panel");
  double r1 = 0.0, r2 = 0.0;
  for (int t = 1; t <= t_end; ++t) {
    std::vector<Matrix> W, kappa;
    kappa.push_back(diff_transition(ts, t));
    if (opt.estimator == Estimator::FD) {
      for (int s = 1; s <= opt.rho; ++s) {
        OnePeriodSolution osp =
            solve_one_period(kappa.back(), ts.at(0, t + s), diff_transition(ts, t + s));
        W.push_back(std::move(osp.W_check));
        kappa.push_back(std::move(osp.residual_matrix));
      }
      r1 += spectral_norm(kappa[1]);
      r2 += opt.rho >= 2 ? spectral_norm(kappa[2]) : 0.0;
    } else {
      require(opt.rho == 2, "two-period estimator: rho must be 2");
      TwoPeriodSolution two = solve_nonstationary_two_period(
          kappa[0], ts.at(0, t + 1), diff_transition(ts, t + 1), ts.at(0, t + 2),
          diff_transition(ts, t + 2));
      kappa.push_back(two.W_check1 * diff_transition(ts, t + 1) +
                      kappa[0] * ts.at(0, t + 1));
      kappa.push_back(kappa[1] * ts.at(0, t + 2) +
                      two.W_check2 * diff_transition(ts, t + 2));
      W = {std::move(two.W_check1), std::move(two.W_check2)};
      r1 += two.residual2_norm;
      r2 += spectral_norm(kappa[2]);
    }
    wc.W_t.push_back(std::move(W));
    wc.kappa_t.push_back(std::move(kappa));
  }
  wc.residual1 = r1 / t_end;
  wc.residual2 = r2 / t_end;
}

}  // namespace detail

inline WeightCache solve_estimator_weights(const EntryModel& m,
                                           const EstimateOptions& opt,
                                           int T_data) {
  require(opt.rho >= 1, "estimate: rho must be at least 1");
  WeightCache wc;
  if (opt.estimator == Estimator::HM) return wc;  // nothing to precompute
  detail::Stopwatch sw;
  const TransitionSet& ts = m.dense();
  if (ts.stationary) {
    detail::stationary_weights(wc, ts, opt);
  } else {
    detail::nonstationary_weights(wc, ts, opt, T_data);
  }
  wc.time_weights = sw.lap();
  return wc;
}

// Linear blocks ready for likelihood evaluation, plus the period range whose
// actions enter it.
struct AssembledEstimator {
  std::vector<LinearValueDiff> lins;
  int t_begin = 1;
  int t_end = 0;
  bool pooled = true;
  double residual1 = 0.0;
  double residual2 = 0.0;
  double time_weights = 0.0;
  double time_assemble = 0.0;
};

namespace detail {

// H = Phi-tilde + beta F-tilde (I - beta F^P)^{-1} Phi^P and the matching h
// with e^P: the full-inversion benchmark, affine in theta as well.
inline AssembledEstimator assemble_hm(const EntryModel& m, const CcpTable& p,
                                      double beta) {
  const TransitionSet& ts = m.dense();
  require(ts.stationary, "HM estimator: stationary transitions required");
  require(p.stationary(), "HM estimator: pooled CCPs required");
  const auto X = ts.at(0).rows();
  Vector p1 = p.at(1);
  Vector p0 = (1.0 - p1.array()).matrix();

  AssembledEstimator out;
  Stopwatch sw;
  Matrix FP = p1.asDiagonal() * ts.at(1);
  FP += p0.asDiagonal() * ts.at(0);
  Matrix A = Matrix::Identity(X, X) - beta * FP;
  Matrix PhiP = p1.asDiagonal() * m.util.Phi1;
  PhiP += p0.asDiagonal() * m.util.Phi0;
  Vector eP = (p1.array() * (kEulerGamma - p1.array().log()) +
               p0.array() * (kEulerGamma - p0.array().log()))
                  .matrix();
  Matrix rhs(X, PhiP.cols() + 1);
  rhs.leftCols(PhiP.cols()) = PhiP;
  rhs.col(PhiP.cols()) = eP;
  Matrix Y = A.partialPivLu().solve(rhs);
  require(Y.allFinite(), "HM estimator: inversion failed");
  out.time_weights = sw.lap();  // reported as the inversion time

  Matrix Ftilde = ts.at(1) - ts.at(0);
  Matrix M = beta * (Ftilde * Y);
  LinearValueDiff lin;
  lin.H = (m.util.Phi1 - m.util.Phi0) + M.leftCols(PhiP.cols());
  lin.h = M.col(PhiP.cols());
  out.lins.push_back(std::move(lin));
  out.time_assemble = sw.lap();
  return out;
}

}  // namespace detail

// Build the per-period linear blocks for an estimator from a CCP table.
// T_data fixes the estimation range: all periods (pooled) when stationary,
// t = 1..T_data-rho otherwise. A cache may supply the weights; bias_V adds
// the truncation term from a solved value function.
inline AssembledEstimator assemble_estimator(const EntryModel& m,
                                             const CcpTable& ccp,
                                             const EstimateOptions& opt,
                                             int T_data,
                                             const WeightCache* cache = nullptr,
                                             const Solution* bias_V = nullptr) {
  const double beta = m.cfg.beta;
  const TransitionSet& ts = m.dense();
  if (opt.estimator == Estimator::HM) {
    AssembledEstimator out = detail::assemble_hm(m, ccp, beta);
    out.t_begin = 1;
    out.t_end = T_data;
    out.pooled = true;
    return out;
  }

  WeightCache local;
  if (cache == nullptr) {
    local = solve_estimator_weights(m, opt, T_data);
    cache = &local;
  }

  AssembledEstimator out;
  out.residual1 = cache->residual1;
  out.residual2 = cache->residual2;
  out.time_weights = cache->time_weights;
  detail::Stopwatch sw;
  if (ts.stationary) {
    require(ccp.stationary(), "estimate: stationary model needs pooled CCPs");
    const Vector* V = nullptr;
    Vector vrow;
    if (opt.bias_correct) {
      require(bias_V != nullptr && bias_V->stationary,
              "estimate: bias correction needs a stationary solution");
      vrow = bias_V->V.row(0).transpose();
      V = &vrow;
    }
    out.lins.push_back(
        assemble_linear_at(cache->W, cache->kappa, m.util, ccp, beta, 1, V));
    out.t_begin = 1;
    out.t_end = T_data;
    out.pooled = true;
  } else {
    const int t_end = T_data - opt.rho;
    require(t_end >= 1, "estimate: horizon too short for the requested rho");
    require(static_cast<int>(cache->W_t.size()) == t_end,
            "estimate: cached weights cover a different horizon");
    require(ccp.periods() >= T_data, "estimate: CCP table shorter than the panel");
    for (int t = 1; t <= t_end; ++t) {
      const Vector* V = nullptr;
      Vector vrow;
      if (opt.bias_correct) {
        require(bias_V != nullptr && !bias_V->stationary,
                "estimate: bias correction needs a finite-horizon solution");
        int t_tail = t + opt.rho + 1;  // value entering the truncation term
        if (t_tail <= bias_V->V.rows()) {
          vrow = bias_V->V.row(t_tail - 1).transpose();
        } else {
          vrow = Vector::Zero(ts.X);  // zero terminal value
        }
        V = &vrow;
      }
      out.lins.push_back(assemble_linear_at(cache->W_t[static_cast<size_t>(t - 1)],
                                            cache->kappa_t[static_cast<size_t>(t - 1)],
                                            m.util, ccp, beta, t, V));
    }
    out.t_begin = 1;
    out.t_end = t_end;
    out.pooled = false;
  }
  out.time_assemble = sw.lap();
  return out;
}

struct EstimationReport {
  Vector theta;
  std::vector<std::string> names;
  double loglik = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  double time_weights = 0.0;
  double time_assemble = 0.0;
  double time_optimize = 0.0;
  double residual1 = 0.0;
  double residual2 = 0.0;
};

// Two-step estimation on a simulated or loaded panel. The oracle solution is
// required for oracle CCPs and for the truncation bias term.
inline EstimationReport fd_estimate(const Panel& panel, const EntryModel& m,
                                    const EstimateOptions& opt,
                                    const Solution* oracle = nullptr) {
  const bool stationary = m.dense().stationary;
  CcpTable ccp = (opt.ccp == CcpMode::Oracle)
                     ? estimate_ccp(panel, CcpMode::Oracle, stationary,
                                    oracle != nullptr ? &oracle->p : nullptr)
                     : estimate_ccp(panel, CcpMode::Frequency, stationary);
  AssembledEstimator ae =
      assemble_estimator(m, ccp, opt, panel.T, nullptr,
                         opt.bias_correct ? oracle : nullptr);

  detail::Stopwatch sw;
  ObsCounts counts = count_actions(panel, ae.pooled, ae.t_begin, ae.t_end);
  NewtonResult nr =
      newton_logit(ae.lins, counts, Vector::Zero(m.util.Phi1.cols()), opt.tol,
                   opt.max_iter);

  EstimationReport rep;
  rep.theta = std::move(nr.theta);
  rep.names = m.util.names;
  rep.loglik = nr.value;
  rep.grad_norm = nr.grad_norm;
  rep.iterations = nr.iterations;
  rep.converged = nr.converged;
  rep.time_weights = ae.time_weights;
  rep.time_assemble = ae.time_assemble;
  rep.time_optimize = sw.lap();
  rep.residual1 = ae.residual1;
  rep.residual2 = ae.residual2;
  return rep;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

struct McConfig {
  EntryModelConfig model;
  std::vector<Estimator> estimators = {Estimator::FD};
  int N = 30;
  int T = 40;
  int replications = 100;
  std::uint64_t seed = 1;
  int rho = 2;
  CcpMode ccp = CcpMode::Oracle;
  bool bias_correct = false;
  int threads = 0;  // 0: FINDEP_THREADS env, else 1
};

struct McCell {
  Estimator estimator = Estimator::FD;
  Matrix draws;              // replications x K, NaN rows on failure
  std::vector<int8_t> ok;    // converged and finite
  double time_weights = 0.0;  // shared weight solve / HM inversion
  double time_rep_mean = 0.0; // mean per-replication wall time
  double residual1 = 0.0;
  double residual2 = 0.0;
  int failures = 0;

  Vector mean() const {
    Vector s = Vector::Zero(draws.cols());
    int k = 0;
    for (Eigen::Index r = 0; r < draws.rows(); ++r) {
      if (!ok[static_cast<size_t>(r)]) continue;
      s += draws.row(r).transpose();
      ++k;
    }
    return k > 0 ? Vector((s / k).eval()) : Vector(Vector::Constant(draws.cols(), std::nan("")));
  }

  Vector rmse(const Vector& truth) const {
    Vector s = Vector::Zero(draws.cols());
    int k = 0;
    for (Eigen::Index r = 0; r < draws.rows(); ++r) {
      if (!ok[static_cast<size_t>(r)]) continue;
      Vector d = draws.row(r).transpose() - truth;
      s += d.cwiseProduct(d);
      ++k;
    }
    return k > 0 ? Vector((s / k).cwiseSqrt().eval())
                 : Vector(Vector::Constant(draws.cols(), std::nan("")));
  }
};

struct McReport {
  Vector theta_true;
  std::vector<std::string> names;
  std::vector<McCell> cells;
  int replications = 0;
  std::uint64_t seed = 0;
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FINDEP_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

// Replications are deterministic in (seed, replication) and run on a small
// thread pool. Weights are solved once per estimator; with oracle CCPs the
// linear assembly is shared across replications too.
inline McReport monte_carlo(const McConfig& cfg) {
  require(cfg.replications >= 1, "monte_carlo: need at least one replication");
  EntryModel m = build_entry_model(cfg.model);
  const bool stationary = !cfg.model.nonstationary();
  if (!stationary)
    require(cfg.T <= m.dense().periods(),
            "monte_carlo: panel horizon exceeds the model horizon");
  Solution sol = stationary ? solve_stationary(m, cfg.model.beta)
                            : solve_finite_horizon(m, cfg.model.beta, cfg.T);

  McReport rep;
  rep.theta_true = cfg.model.theta;
  rep.names = m.util.names;
  rep.replications = cfg.replications;
  rep.seed = cfg.seed;

  const auto K = m.util.Phi1.cols();
  for (Estimator est : cfg.estimators) {
    EstimateOptions opt;
    opt.estimator = est;
    opt.ccp = cfg.ccp;
    opt.rho = cfg.rho;
    opt.bias_correct = cfg.bias_correct;

    McCell cell;
    cell.estimator = est;
    cell.draws = Matrix::Constant(cfg.replications, K, std::nan(""));
    cell.ok.assign(static_cast<size_t>(cfg.replications), 0);

    WeightCache wc = solve_estimator_weights(m, opt, cfg.T);
    std::optional<AssembledEstimator> shared;
    if (cfg.ccp == CcpMode::Oracle) {
      shared = assemble_estimator(m, sol.p, opt, cfg.T, &wc,
                                  cfg.bias_correct ? &sol : nullptr);
      cell.time_weights = est == Estimator::HM ? shared->time_weights
                                               : wc.time_weights;
      cell.residual1 = shared->residual1;
      cell.residual2 = shared->residual2;
    } else {
      cell.time_weights = wc.time_weights;
      cell.residual1 = wc.residual1;
      cell.residual2 = wc.residual2;
    }

    std::vector<double> rep_time(static_cast<size_t>(cfg.replications), 0.0);
    auto run_rep = [&](int r) {
      detail::Stopwatch sw;
      try {
        Panel panel = simulate_panel(sol, m, cfg.N, cfg.T, cfg.seed, r);
        const AssembledEstimator* ae = nullptr;
        AssembledEstimator own;
        if (shared.has_value()) {
          ae = &*shared;
        } else {
          CcpTable hat = estimate_ccp(panel, CcpMode::Frequency, stationary);
          own = assemble_estimator(m, hat, opt, cfg.T, &wc,
                                   cfg.bias_correct ? &sol : nullptr);
          ae = &own;
        }
        ObsCounts counts = count_actions(panel, ae->pooled, ae->t_begin, ae->t_end);
        NewtonResult nr = newton_logit(ae->lins, counts, Vector::Zero(K), opt.tol,
                                       opt.max_iter);
        if (nr.converged && nr.theta.allFinite()) {
          cell.draws.row(r) = nr.theta.transpose();
          cell.ok[static_cast<size_t>(r)] = 1;
        }
      } catch (const std::exception&) {
        // recorded as a failure below
      }
      rep_time[static_cast<size_t>(r)] = sw.lap();
    };

    const int threads = std::min(resolve_threads(cfg.threads), cfg.replications);
    if (threads <= 1) {
      for (int r = 0; r < cfg.replications; ++r) run_rep(r);
    } else {
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      pool.reserve(static_cast<size_t>(threads));
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&]() {
          for (int r = next.fetch_add(1); r < cfg.replications;
               r = next.fetch_add(1))
            run_rep(r);
        });
      }
      for (auto& th : pool) th.join();
    }

    for (int r = 0; r < cfg.replications; ++r) {
      if (!cell.ok[static_cast<size_t>(r)]) ++cell.failures;
      cell.time_rep_mean += rep_time[static_cast<size_t>(r)];
    }
    cell.time_rep_mean /= cfg.replications;
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

inline void write_mc_csv(const McReport& rep, const std::filesystem::path& path) {
  std::string out =
      "estimator,param,true,mean,rmse,time_total,time_weights_or_inv,"
      "residual1,residual2,reps,failures\n";
  for (const McCell& cell : rep.cells) {
    Vector mean = cell.mean();
    Vector rmse = cell.rmse(rep.theta_true);
    double total = cell.time_weights + cell.time_rep_mean;
    for (Eigen::Index k = 0; k < rep.theta_true.size(); ++k) {
      out += to_string(cell.estimator) + "," + rep.names[static_cast<size_t>(k)] +
             "," + io::fmt_double(rep.theta_true(k)) + "," + io::fmt_double(mean(k)) +
             "," + io::fmt_double(rmse(k)) + "," + io::fmt_double(total) + "," +
             io::fmt_double(cell.time_weights) + "," + io::fmt_double(cell.residual1) +
             "," + io::fmt_double(cell.residual2) + "," +
             std::to_string(rep.replications) + "," +
             std::to_string(cell.failures) + "\n";
    }
  }
  io::write_text(path, out);
}

inline io::json mc_to_json(const McReport& rep) {
  io::json j;
  j["replications"] = rep.replications;
  j["seed"] = rep.seed;
  j["params"] = rep.names;
  j["theta_true"] = std::vector<double>(rep.theta_true.data(),
                                        rep.theta_true.data() + rep.theta_true.size());
  j["rmse_definition"] =
      "per parameter, sqrt(mean over successful replications of squared "
      "deviation from the true value)";
  j["estimators"] = io::json::array();
  for (const McCell& cell : rep.cells) {
    Vector mean = cell.mean();
    Vector rmse = cell.rmse(rep.theta_true);
    io::json e;
    e["name"] = to_string(cell.estimator);
    e["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    e["rmse"] = std::vector<double>(rmse.data(), rmse.data() + rmse.size());
    e["time_weights_or_inv"] = cell.time_weights;
    e["time_per_replication"] = cell.time_rep_mean;
    e["residual1"] = cell.residual1;
    e["residual2"] = cell.residual2;
    e["failures"] = cell.failures;
    j["estimators"].push_back(std::move(e));
  }
  return j;
}

}  // namespace findep
