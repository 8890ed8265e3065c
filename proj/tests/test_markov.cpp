#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "findep/markov.hpp"

using findep::EntryModelConfig;
using findep::Matrix;
using findep::Vector;

namespace {

// independent quantile oracle: bisection on the CDF
double quantile_by_bisection(double p) {
  double lo = -10, hi = 10;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (findep::normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("normal_quantile matches a bisection oracle") {
  for (double p : {1e-9, 1e-4, 0.02, 0.25, 0.5, 0.75, 0.9, 0.999, 1 - 1e-9})
    REQUIRE(findep::normal_quantile(p) ==
            Catch::Approx(quantile_by_bisection(p)).margin(1e-12));
  REQUIRE_THROWS_AS(findep::normal_quantile(0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(findep::normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("tauchen single state and error cases") {
  auto ch = findep::tauchen(1, 0.3, 0.5, 1.0);
  REQUIRE(ch.grid.size() == 1);
  REQUIRE(ch.grid(0) == Catch::Approx(0.6).margin(1e-15));
  REQUIRE(ch.F.rows() == 1);
  REQUIRE(ch.F(0, 0) == 1.0);

  REQUIRE_THROWS_AS(findep::tauchen(0, 0, 0.5, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(findep::tauchen(3, 0, 1.0, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(findep::tauchen(3, 0, -1.2, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(findep::tauchen(3, 0, 0.5, 0.0), std::invalid_argument);
}

TEST_CASE("tauchen with gamma1 = 0 has identical rows") {
  auto ch = findep::tauchen(5, 0.2, 0.0, 0.7);
  for (int i = 1; i < 5; ++i)
    REQUIRE((ch.F.row(i) - ch.F.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tauchen two-state grid and transitions match the direct oracle") {
  auto ch = findep::tauchen(2, 0.0, 0.9, 1.0);
  double zstar = quantile_by_bisection(0.75) * std::sqrt(1.0 / 0.19);
  REQUIRE(ch.grid(0) == Catch::Approx(-zstar).margin(1e-12));
  REQUIRE(ch.grid(1) == Catch::Approx(zstar).margin(1e-12));

  // boundary between the two cells is the midpoint 0
  double mu0 = 0.9 * ch.grid(0);
  double mu1 = 0.9 * ch.grid(1);
  REQUIRE(ch.F(0, 0) == Catch::Approx(findep::normal_cdf(-mu0)).margin(1e-14));
  REQUIRE(ch.F(0, 1) == Catch::Approx(1 - findep::normal_cdf(-mu0)).margin(1e-14));
  REQUIRE(ch.F(1, 0) == Catch::Approx(findep::normal_cdf(-mu1)).margin(1e-14));
}

TEST_CASE("tauchen rows are stochastic and FOSD-ordered for positive gamma1") {
  for (int K : {2, 4, 7}) {
    auto ch = findep::tauchen(K, 0.1, 0.8, 0.9);
    for (int i = 0; i < K; ++i) {
      REQUIRE(ch.F.row(i).minCoeff() >= 0.0);
      REQUIRE(ch.F.row(i).sum() == Catch::Approx(1.0).margin(1e-12));
    }
    for (int i = 0; i + 1 < K; ++i) {
      double cum_lo = 0, cum_hi = 0;
      for (int j = 0; j < K; ++j) {
        cum_lo += ch.F(i, j);
        cum_hi += ch.F(i + 1, j);
        REQUIRE(cum_hi <= cum_lo + 1e-12);
      }
    }
  }
}

TEST_CASE("diff_transition on hand inputs") {
  findep::TransitionSet ts;
  ts.X = 2;
  Matrix F1(2, 2), F0(2, 2);
  F1 << 1, 0, 1, 0;
  F0 << 0.7, 0.3, 0.2, 0.8;
  ts.F.push_back({F0, F1});
  Matrix expected(2, 2);
  expected << 0.3, -0.3, 0.8, -0.8;
  REQUIRE((findep::diff_transition(ts) - expected).cwiseAbs().maxCoeff() < 1e-15);

  findep::TransitionSet same;
  same.X = 2;
  same.F.push_back({F0, F0});
  REQUIRE(findep::diff_transition(same).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("entry model dimensions, defaults, and stochastic structure") {
  EntryModelConfig cfg;
  REQUIRE(cfg.X() == 64);
  REQUIRE(cfg.beta == 0.95);
  REQUIRE(cfg.gamma1_omega == 0.9);
  REQUIRE(cfg.sigma_omega == 1.0);
  Vector truth(7);
  truth << 0.5, 1.0, -1.0, 0.5, 1.0, 1.0, 1.0;
  REQUIRE((cfg.theta - truth).cwiseAbs().maxCoeff() == 0.0);

  auto m = findep::build_entry_model(cfg);
  const auto& ts = m.dense();
  REQUIRE(ts.X == 64);
  for (int d = 0; d < 2; ++d) {
    const Matrix& F = ts.at(d);
    REQUIRE(F.minCoeff() >= 0.0);
    for (int i = 0; i < 64; ++i)
      REQUIRE(F.row(i).sum() == Catch::Approx(1.0).margin(1e-12));
    Matrix rebuilt = findep::kron(m.kf.omega(d), m.kf.F_z);
    REQUIRE((F - rebuilt).cwiseAbs().maxCoeff() < 1e-12);
  }
  Matrix Ftilde = findep::diff_transition(ts);
  for (int i = 0; i < 64; ++i)
    REQUIRE(Ftilde.row(i).sum() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("entry model omega blocks coincide across actions only when gamma_a = 0") {
  EntryModelConfig cfg;
  auto m = findep::build_entry_model(cfg);
  int Ko = cfg.K_o;
  Matrix T0 = m.kf.omega(0).block(0, 0, Ko, Ko);
  Matrix T1 = m.kf.omega(1).block(0, Ko, Ko, Ko);
  REQUIRE((T0 - T1).cwiseAbs().maxCoeff() == 0.0);

  cfg.gamma_a = 0.8;
  auto shifted = findep::build_entry_model(cfg);
  Matrix S0 = shifted.kf.omega(0).block(0, 0, Ko, Ko);
  Matrix S1 = shifted.kf.omega(1).block(0, Ko, Ko, Ko);
  REQUIRE((S0 - S1).cwiseAbs().maxCoeff() > 1e-3);
  REQUIRE(findep::spectral_norm(findep::diff_transition(shifted.dense())) > 0.0);
}

TEST_CASE("entry model utility features match the flow-payoff formula") {
  EntryModelConfig cfg;
  auto m = findep::build_entry_model(cfg);
  int Kz = cfg.K_z, Ko = cfg.K_o;
  // x = (y=0, io=1, i1=0, i2=1, i3=0, i4=1)
  long x = ((((0L * Ko + 1) * Kz + 0) * Kz + 1) * Kz + 0) * Kz + 1;
  double w = m.omega_grid(1);
  double z1 = m.z_grids[0](0), z2 = m.z_grids[1](1);
  double z3 = m.z_grids[2](0), z4 = m.z_grids[3](1);
  const Vector& th = cfg.theta;
  double expected = std::exp(w) * (th(0) + th(1) * z1 + th(2) * z2) -
                    (th(3) + th(4) * z3) - (th(5) + th(6) * z4);
  double got = m.util.Phi1.row(x).dot(th);
  REQUIRE(got == Catch::Approx(expected).margin(1e-14));
  REQUIRE(m.util.Phi0.cwiseAbs().maxCoeff() == 0.0);

  // y = 1 drops the entry-cost terms
  long xy = x + Ko * Kz * Kz * Kz * Kz;
  double expected_inc = std::exp(w) * (th(0) + th(1) * z1 + th(2) * z2) -
                        (th(3) + th(4) * z3);
  REQUIRE(m.util.Phi1.row(xy).dot(th) == Catch::Approx(expected_inc).margin(1e-14));
}

TEST_CASE("entry model above the dense cap keeps only factors") {
  EntryModelConfig cfg;
  cfg.K_z = 3;  // X = 324
  auto m = findep::build_entry_model(cfg, 100);
  REQUIRE(!m.ts.has_value());
  REQUIRE(m.kf.X() == 324);
  REQUIRE_THROWS_AS(m.dense(), std::invalid_argument);
}

TEST_CASE("transition set serialization round trips bit-exactly") {
  EntryModelConfig cfg;
  cfg.gamma_a = 0.4;
  auto m = findep::build_entry_model(cfg);
  auto dir = std::filesystem::temp_directory_path() / "findep_test_ts";
  std::filesystem::remove_all(dir);
  findep::write_transition_set(dir, m.dense());
  auto rt = findep::read_transition_set(dir);
  REQUIRE(rt.X == 64);
  REQUIRE(rt.stationary);
  for (int d = 0; d < 2; ++d) {
    const Matrix& A = m.dense().at(d);
    const Matrix& B = rt.at(d);
    REQUIRE(A.rows() == B.rows());
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j)
        REQUIRE(std::memcmp(&A(i, j), &B(i, j), sizeof(double)) == 0);
  }
}

TEST_CASE("nonstationary entry model uses clamped grid and arrival intercepts") {
  EntryModelConfig cfg;
  cfg.gamma_a = 0.5;
  cfg.horizon = 4;
  cfg.gamma0_t = {-0.8, 0.8, 0.0, -0.3};
  auto m = findep::build_entry_model(cfg);

  REQUIRE(m.omega_grid(0) == -1.0);
  REQUIRE(m.omega_grid(1) == 1.0);
  REQUIRE(static_cast<int>(m.kf.F_omega.size()) == 4);
  REQUIRE(!m.dense().stationary);
  REQUIRE(m.dense().periods() == 4);

  // departing period t uses the arrival intercept gamma0_{t+1}
  double expected_icp[] = {0.8, 0.0, -0.3, 0.0};
  for (int t = 1; t <= 4; ++t) {
    for (int d = 0; d < 2; ++d) {
      Matrix T_expect = findep::tauchen_transition(
          m.omega_grid, m.omega_grid, expected_icp[t - 1] + cfg.gamma_a * d,
          cfg.gamma1_omega, cfg.sigma_omega);
      Matrix got = m.kf.omega(d, t).block(0, d * cfg.K_o, cfg.K_o, cfg.K_o);
      REQUIRE((got - T_expect).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  REQUIRE_THROWS_AS(findep::diff_transition(m.dense(), 7), std::invalid_argument);

  auto dir = std::filesystem::temp_directory_path() / "findep_test_ts_ns";
  std::filesystem::remove_all(dir);
  findep::write_transition_set(dir, m.dense());
  auto rt = findep::read_transition_set(dir);
  REQUIRE(!rt.stationary);
  REQUIRE(rt.periods() == 4);
  REQUIRE((rt.at(1, 3) - m.dense().at(1, 3)).cwiseAbs().maxCoeff() == 0.0);
}
