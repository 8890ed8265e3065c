#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "findep/common.hpp"
#include "findep/io.hpp"
#include "findep/linalg.hpp"

namespace findep {

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

// Acklam's rational approximation plus one Halley step (~1e-15 accurate).
inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 0.97575) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

struct TauchenChain {
  Vector grid;
  Matrix F;
};

// Grid at the (k+0.5)/K quantiles of the stationary distribution.
inline Vector tauchen_grid(int K, double gamma0, double gamma1, double sigma) {
  require(K >= 1, "tauchen: K must be at least 1");
  require(std::abs(gamma1) < 1.0, "tauchen: |gamma1| must be below 1");
  require(sigma > 0.0, "tauchen: sigma must be positive");
  double mu = gamma0 / (1 - gamma1);
  double sd = sigma / std::sqrt(1 - gamma1 * gamma1);
  Vector grid(K);
  for (int k = 0; k < K; ++k)
    grid(k) = K == 1 ? mu : mu + sd * normal_quantile((k + 0.5) / K);
  return grid;
}

// Cell boundaries are midpoints of adjacent grid points, open at both tails;
// the last cell is the complement so each row sums to one.
inline Matrix tauchen_transition(const Vector& grid_from, const Vector& grid_to,
                                 double intercept, double gamma1, double sigma) {
  const Eigen::Index n = grid_from.size(), K = grid_to.size();
  Matrix F(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = intercept + gamma1 * grid_from(i);
    double prev = 0.0, acc = 0.0;
    for (Eigen::Index j = 0; j + 1 < K; ++j) {
      double bound = 0.5 * (grid_to(j) + grid_to(j + 1));
      double cdf = normal_cdf((bound - mu) / sigma);
      F(i, j) = cdf - prev;
      acc += F(i, j);
      prev = cdf;
    }
    F(i, K - 1) = 1.0 - acc;
  }
  return F;
}

inline TauchenChain tauchen(int K, double gamma0, double gamma1, double sigma,
                            double shift = 0.0) {
  TauchenChain ch;
  ch.grid = tauchen_grid(K, gamma0, gamma1, sigma);
  ch.F = tauchen_transition(ch.grid, ch.grid, gamma0 + shift, gamma1, sigma);
  return ch;
}

// Action-conditional transitions; stationary or one matrix pair per departing
// period t = 1..T.
struct TransitionSet {
  int X = 0;
  bool stationary = true;
  std::vector<std::array<Matrix, 2>> F;

  int periods() const { return static_cast<int>(F.size()); }
  const Matrix& at(int d, int t = 1) const {
    require(d == 0 || d == 1, "TransitionSet: action out of range");
    if (stationary) return F.at(0)[static_cast<size_t>(d)];
    require(t >= 1 && t <= periods(), "TransitionSet: period out of range");
    return F.at(static_cast<size_t>(t - 1))[static_cast<size_t>(d)];
  }
};

inline Matrix diff_transition(const TransitionSet& ts, int t = 1) {
  return ts.at(1, t) - ts.at(0, t);
}

// Endogenous block (y, omega) times exogenous block z; full-state index is
// endogenous-slow, exogenous-fast.
struct KronFactors {
  bool stationary = true;
  std::vector<std::array<Matrix, 2>> F_omega;  // (2 K_o) x (2 K_o) per period
  Matrix F_z;                                  // K_z^4 x K_z^4, action-independent

  const Matrix& omega(int d, int t = 1) const {
    require(d == 0 || d == 1, "KronFactors: action out of range");
    if (stationary) return F_omega.at(0)[static_cast<size_t>(d)];
    require(t >= 1 && t <= static_cast<int>(F_omega.size()),
            "KronFactors: period out of range");
    return F_omega.at(static_cast<size_t>(t - 1))[static_cast<size_t>(d)];
  }
  int X() const {
    return static_cast<int>(F_omega.at(0)[0].rows() * F_z.rows());
  }
};

struct UtilityModel {
  Matrix Phi1;  // X x K features of action 1
  Matrix Phi0;  // X x K features of action 0 (zero under the normalization)
  Vector theta;
  std::vector<std::string> names;
  Vector u(int d, const Vector& th) const { return (d == 1 ? Phi1 : Phi0) * th; }
};

struct EntryModelConfig {
  int K_z = 2;
  int K_o = 2;
  double beta = 0.95;
  double gamma_a = 0.0;  // productivity shift from last period's entry
  double gamma0_omega = 0.0, gamma1_omega = 0.9, sigma_omega = 1.0;
  double gamma0_z = 0.0, gamma1_z = 0.9, sigma_z = 1.0;
  // optional per-shock overrides for the four z chains: {gamma0, gamma1, sigma}
  std::vector<std::array<double, 3>> z_chains;
  // nonstationary omega intercepts by arrival period (1-based); 0 beyond the list
  std::vector<double> gamma0_t;
  int horizon = 0;  // 0 = stationary, else number of data periods T
  Vector theta = (Vector(7) << 0.5, 1.0, -1.0, 0.5, 1.0, 1.0, 1.0).finished();

  bool nonstationary() const { return horizon > 0; }
  long X() const {
    long kz4 = 1;
    for (int i = 0; i < 4; ++i) kz4 *= K_z;
    return 2L * K_o * kz4;
  }
};

struct EntryModel {
  EntryModelConfig cfg;
  KronFactors kf;
  UtilityModel util;
  Vector omega_grid;
  std::vector<Vector> z_grids;              // four chains
  std::optional<TransitionSet> ts;          // dense form, absent above the cap

  const TransitionSet& dense() const {
    require(ts.has_value(), "EntryModel: dense transitions not materialized "
                            "(state space above the dense cap; use the Kronecker path)");
    return *ts;
  }
};

inline void validate(const EntryModelConfig& cfg) {
  require(cfg.K_z >= 1 && cfg.K_o >= 1, "entry model: K_z and K_o must be at least 1");
  require(cfg.beta > 0.0 && cfg.beta < 1.0, "entry model: beta must lie in (0,1)");
  require(cfg.sigma_omega > 0 && cfg.sigma_z > 0, "entry model: sigma must be positive");
  require(std::abs(cfg.gamma1_omega) < 1 && std::abs(cfg.gamma1_z) < 1,
          "entry model: |gamma1| must be below 1");
  require(cfg.theta.size() == 7, "entry model: theta must have 7 entries");
  require(cfg.z_chains.empty() || cfg.z_chains.size() == 4,
          "entry model: z_chains must list exactly 4 chains when given");
  require(cfg.horizon >= 0, "entry model: horizon must be non-negative");
  require(cfg.X() <= 4'000'000L, "entry model: state space too large");
}

inline double nonstationary_intercept(const EntryModelConfig& cfg, int arrival_t) {
  int idx = arrival_t - 1;
  if (idx >= 0 && idx < static_cast<int>(cfg.gamma0_t.size()))
    return cfg.gamma0_t[static_cast<size_t>(idx)];
  return 0.0;
}

inline EntryModel build_entry_model(const EntryModelConfig& cfg,
                                    long dense_cap = 4096) {
  validate(cfg);
  EntryModel m;
  m.cfg = cfg;

  m.omega_grid = tauchen_grid(cfg.K_o, cfg.gamma0_omega, cfg.gamma1_omega,
                              cfg.sigma_omega);
  if (cfg.nonstationary() && cfg.K_o >= 2) {
    // nonstationary designs pin the productivity grid ends at -1 and 1 so
    // the period intercepts shift the process against a fixed support
    m.omega_grid(0) = -1.0;
    m.omega_grid(cfg.K_o - 1) = 1.0;
  }

  Matrix Fz;
  for (int s = 0; s < 4; ++s) {
    double g0 = cfg.gamma0_z, g1 = cfg.gamma1_z, sg = cfg.sigma_z;
    if (!cfg.z_chains.empty()) {
      g0 = cfg.z_chains[static_cast<size_t>(s)][0];
      g1 = cfg.z_chains[static_cast<size_t>(s)][1];
      sg = cfg.z_chains[static_cast<size_t>(s)][2];
    }
    TauchenChain ch = tauchen(cfg.K_z, g0, g1, sg);
    m.z_grids.push_back(ch.grid);
    Fz = s == 0 ? ch.F : kron(Fz, ch.F);
  }
  m.kf.F_z = Fz;
  m.kf.stationary = !cfg.nonstationary();

  // y' = d deterministically: the endogenous block is [[T_d in column-block d]]
  auto omega_block = [&](int d, double intercept) {
    Matrix T_d = tauchen_transition(m.omega_grid, m.omega_grid,
                                    intercept + cfg.gamma_a * d,
                                    cfg.gamma1_omega, cfg.sigma_omega);
    Matrix blk = Matrix::Zero(2 * cfg.K_o, 2 * cfg.K_o);
    blk.block(0, d * cfg.K_o, cfg.K_o, cfg.K_o) = T_d;
    blk.block(cfg.K_o, d * cfg.K_o, cfg.K_o, cfg.K_o) = T_d;
    return blk;
  };
  if (cfg.nonstationary()) {
    for (int t = 1; t <= cfg.horizon; ++t) {
      double icp = nonstationary_intercept(cfg, t + 1);
      m.kf.F_omega.push_back({omega_block(0, icp), omega_block(1, icp)});
    }
  } else {
    m.kf.F_omega.push_back(
        {omega_block(0, cfg.gamma0_omega), omega_block(1, cfg.gamma0_omega)});
  }

  const long X = cfg.X();
  if (X <= dense_cap) {
    TransitionSet ts;
    ts.X = static_cast<int>(X);
    ts.stationary = !cfg.nonstationary();
    for (const auto& pair : m.kf.F_omega)
      ts.F.push_back({kron(pair[0], m.kf.F_z), kron(pair[1], m.kf.F_z)});
    m.ts = std::move(ts);
  }

  // features: (e^w, e^w z1, e^w z2, -1, -z3, -(1-y), -(1-y) z4)
  const int Kz = cfg.K_z, Ko = cfg.K_o;
  Matrix Phi1(X, 7);
  for (long x = 0; x < X; ++x) {
    long rest = x;
    int i4 = static_cast<int>(rest % Kz); rest /= Kz;
    int i3 = static_cast<int>(rest % Kz); rest /= Kz;
    int i2 = static_cast<int>(rest % Kz); rest /= Kz;
    int i1 = static_cast<int>(rest % Kz); rest /= Kz;
    int io = static_cast<int>(rest % Ko); rest /= Ko;
    int y = static_cast<int>(rest);
    double ew = std::exp(m.omega_grid(io));
    double z1 = m.z_grids[0](i1), z2 = m.z_grids[1](i2);
    double z3 = m.z_grids[2](i3), z4 = m.z_grids[3](i4);
    Phi1(x, 0) = ew;
    Phi1(x, 1) = ew * z1;
    Phi1(x, 2) = ew * z2;
    Phi1(x, 3) = -1.0;
    Phi1(x, 4) = -z3;
    Phi1(x, 5) = -(1.0 - y);
    Phi1(x, 6) = -(1.0 - y) * z4;
  }
  m.util.Phi1 = std::move(Phi1);
  m.util.Phi0 = Matrix::Zero(X, 7);
  m.util.theta = cfg.theta;
  m.util.names = {"vp0", "vp1", "vp2", "fc0", "fc1", "ec0", "ec1"};
  return m;
}

inline const std::string kStateLayout =
    "x = ((((y*K_o + i_omega)*K_z + i_z1)*K_z + i_z2)*K_z + i_z3)*K_z + i_z4, "
    "0-based; y slow, omega next, z1..z4 fastest";

inline void write_transition_set(const std::filesystem::path& dir,
                                 const TransitionSet& ts) {
  io::ensure_dir(dir);
  io::json manifest;
  manifest["X"] = ts.X;
  manifest["T"] = ts.stationary ? 0 : ts.periods();
  manifest["actions"] = 2;
  manifest["layout"] = kStateLayout;
  io::write_json(dir / "manifest.json", manifest);
  for (int t = 0; t < ts.periods(); ++t)
    for (int d = 0; d < 2; ++d) {
      int tag = ts.stationary ? 0 : t + 1;
      io::write_csv_matrix(dir / ("F_" + std::to_string(d) + "_" +
                                  std::to_string(tag) + ".csv"),
                           ts.F[static_cast<size_t>(t)][static_cast<size_t>(d)]);
    }
}

inline TransitionSet read_transition_set(const std::filesystem::path& dir) {
  io::json manifest = io::read_json(dir / "manifest.json");
  TransitionSet ts;
  ts.X = manifest.at("X").get<int>();
  int T = manifest.at("T").get<int>();
  ts.stationary = T == 0;
  int files = ts.stationary ? 1 : T;
  for (int t = 0; t < files; ++t) {
    int tag = ts.stationary ? 0 : t + 1;
    std::array<Matrix, 2> pair;
    for (int d = 0; d < 2; ++d) {
      pair[static_cast<size_t>(d)] = io::read_csv_matrix(
          dir / ("F_" + std::to_string(d) + "_" + std::to_string(tag) + ".csv"));
      require(pair[static_cast<size_t>(d)].rows() == ts.X &&
                  pair[static_cast<size_t>(d)].cols() == ts.X,
              "transition set: matrix dimensions disagree with manifest");
    }
    ts.F.push_back(std::move(pair));
  }
  return ts;
}

}  // namespace findep
