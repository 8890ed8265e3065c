#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "findep/dp.hpp"

using namespace findep;

namespace {

EntryModel tiny_model(double gamma_a = 0.0, int K_o = 1, int K_z = 1,
                      bool zero_theta = false) {
  EntryModelConfig cfg;
  cfg.K_z = K_z;
  cfg.K_o = K_o;
  cfg.gamma_a = gamma_a;
  EntryModel m = build_entry_model(cfg);
  if (zero_theta) m.util.theta.setZero();
  return m;
}

}  // namespace

TEST_CASE("bellman step reduces to the closed form at beta = 0") {
  EntryModel m = tiny_model(0.0, 2, 1, /*zero_theta=*/true);
  Vector V = Vector::Constant(m.cfg.X(), 3.7);  // irrelevant at beta = 0
  Vector out = bellman_update(V, m, 0.0);
  for (Eigen::Index x = 0; x < out.size(); ++x)
    REQUIRE(out(x) == Catch::Approx(kEulerGamma + std::log(2.0)).margin(1e-14));

  Vector bad = V;
  bad(0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(bellman_update(bad, m, 0.95), std::invalid_argument);
}

TEST_CASE("bellman step contracts at modulus beta") {
  EntryModel m = tiny_model(0.4, 2, 1);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> g(0.0, 5.0);
  double beta = 0.9;
  for (int trial = 0; trial < 20; ++trial) {
    Vector V1(m.cfg.X()), V2(m.cfg.X());
    for (Eigen::Index i = 0; i < V1.size(); ++i) {
      V1(i) = g(gen);
      V2(i) = g(gen);
    }
    double lhs = (bellman_update(V1, m, beta) - bellman_update(V2, m, beta))
                     .cwiseAbs()
                     .maxCoeff();
    REQUIRE(lhs <= beta * (V1 - V2).cwiseAbs().maxCoeff() + 1e-12);
  }
}

TEST_CASE("stationary solver matches a long plain iteration on two states") {
  EntryModel m = tiny_model();  // X = 2
  double beta = 0.9;
  Solution sol = solve_stationary(m, beta);
  REQUIRE(sol.residual <= 1e-10);

  Vector V = Vector::Zero(2);
  for (int it = 0; it < 100000; ++it) V = bellman_update(V, m, beta);
  REQUIRE((sol.V.row(0).transpose() - V).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero utility gives a symmetric policy") {
  EntryModel m = tiny_model(0.0, 2, 1, /*zero_theta=*/true);
  Solution sol = solve_stationary(m, 0.95);
  REQUIRE(sol.v_tilde.v.cwiseAbs().maxCoeff() < 1e-9);
  REQUIRE((sol.p.p1.array() - 0.5).abs().maxCoeff() < 1e-9);
}

TEST_CASE("entry model solves to an interior policy") {
  EntryModelConfig cfg;  // X = 64 defaults
  EntryModel m = build_entry_model(cfg);
  Solution sol = solve_stationary(m, cfg.beta);
  REQUIRE(sol.iterations < 100000);
  REQUIRE(sol.residual <= 1e-10);
  REQUIRE(sol.v_tilde.v.allFinite());
  REQUIRE(sol.p.p1.minCoeff() > kCcpClamp);
  REQUIRE(sol.p.p1.maxCoeff() < 1.0 - kCcpClamp);

  Solution lin = hm_solution(sol.p, m, cfg.beta);
  REQUIRE((lin.V - sol.V).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((lin.v_tilde.v - sol.v_tilde.v).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("linear solution hits its closed forms") {
  EntryModel m = tiny_model(0.0, 2, 1, /*zero_theta=*/true);
  const Eigen::Index X = m.cfg.X();
  CcpTable half{Matrix::Constant(1, X, 0.5)};

  Solution b0 = hm_solution(half, m, 0.0);
  for (Eigen::Index x = 0; x < X; ++x)
    REQUIRE(b0.V(0, x) == Catch::Approx(kEulerGamma + std::log(2.0)).margin(1e-12));

  double beta = 0.95;
  Solution bp = hm_solution(half, m, beta);
  double expected = (kEulerGamma + std::log(2.0)) / (1.0 - beta);
  for (Eigen::Index x = 0; x < X; ++x)
    REQUIRE(bp.V(0, x) == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("backward induction handles myopic and long horizons") {
  EntryModel m = tiny_model(0.4, 2, 2);  // X = 64, stationary
  double beta = m.cfg.beta;

  Solution myopic = solve_finite_horizon(m, beta, 1);
  Vector ut = m.util.u(1, m.util.theta) - m.util.u(0, m.util.theta);
  REQUIRE((myopic.v_tilde.v.row(0).transpose() - ut).cwiseAbs().maxCoeff() <
          1e-12);

  Solution inf = solve_stationary(m, beta);
  Solution fh = solve_finite_horizon(m, beta, 500);
  REQUIRE((fh.v_tilde.v.row(0) - inf.v_tilde.v.row(0)).cwiseAbs().maxCoeff() <
          1e-8);
  REQUIRE((fh.V.row(0) - inf.V.row(0)).cwiseAbs().maxCoeff() < 1e-7);

  Solution fh300 = solve_finite_horizon(m, beta, 300);
  double bound = std::pow(beta, 300) * (inf.V.cwiseAbs().maxCoeff() + 1.0) * 2.0;
  REQUIRE((fh300.V.row(0) - inf.V.row(0)).cwiseAbs().maxCoeff() < bound);
}

TEST_CASE("nonstationary entry model solves over its horizon") {
  EntryModelConfig cfg;
  cfg.K_z = 2;
  cfg.K_o = 2;
  cfg.gamma_a = 0.5;
  cfg.gamma0_t = {-0.8, 0.8, 0.0, -0.3};
  cfg.horizon = 4;
  EntryModel m = build_entry_model(cfg);
  Solution sol = solve_finite_horizon(m, cfg.beta, 4);
  REQUIRE(sol.p.periods() == 4);
  REQUIRE(sol.V.allFinite());
  REQUIRE(sol.p.p1.minCoeff() > kCcpClamp);
  // time-varying intercepts must show up in the policy
  REQUIRE((sol.p.p1.row(0) - sol.p.p1.row(1)).cwiseAbs().maxCoeff() > 1e-3);
  REQUIRE_THROWS_AS(solve_finite_horizon(m, cfg.beta, 5), std::invalid_argument);
}

TEST_CASE("stationary distribution is a fixed point of the policy chain") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix F(6, 6);
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      F(i, j) = u(gen);
      s += F(i, j);
    }
    F.row(i) /= s;
  }
  Vector pi = stationary_distribution(F);
  REQUIRE(pi.sum() == Catch::Approx(1.0).margin(1e-12));
  REQUIRE((F.transpose() * pi - pi).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("simulated actions follow the policy") {
  EntryModel m = tiny_model(0.3, 2, 1);  // X = 4
  Solution sol = solve_stationary(m, m.cfg.beta);

  Solution all1 = sol;
  all1.p = CcpTable(Matrix::Ones(1, m.cfg.X()));
  Panel ones = simulate_panel(all1, m, 50, 10, 99);
  for (auto dv : ones.d) REQUIRE(dv == 1);

  Panel panel = simulate_panel(sol, m, 20000, 5, 4242);
  Vector p1 = sol.p.at(1);
  std::vector<long> n(static_cast<size_t>(m.cfg.X()), 0), n1(n);
  for (size_t r = 0; r < panel.x.size(); ++r) {
    ++n[static_cast<size_t>(panel.x[r])];
    n1[static_cast<size_t>(panel.x[r])] += panel.d[r];
  }
  for (Eigen::Index x = 0; x < m.cfg.X(); ++x) {
    auto nx = static_cast<double>(n[static_cast<size_t>(x)]);
    if (nx < 500) continue;
    double freq = static_cast<double>(n1[static_cast<size_t>(x)]) / nx;
    double ci = 3.0 * std::sqrt(p1(x) * (1.0 - p1(x)) / nx);
    REQUIRE(std::abs(freq - p1(x)) <= ci);
  }

  // initial states follow the stationary distribution of the policy chain
  Matrix FP = p1.asDiagonal() * m.dense().at(1) +
              (Vector::Ones(m.cfg.X()) - p1).asDiagonal() * m.dense().at(0);
  Vector pi = stationary_distribution(FP);
  std::vector<long> first(static_cast<size_t>(m.cfg.X()), 0);
  for (int i = 0; i < panel.N; ++i)
    ++first[static_cast<size_t>(panel.x[panel.row(i, 1)])];
  for (Eigen::Index x = 0; x < m.cfg.X(); ++x) {
    double freq = static_cast<double>(first[static_cast<size_t>(x)]) / panel.N;
    double ci = 3.0 * std::sqrt(pi(x) * (1.0 - pi(x)) / panel.N);
    REQUIRE(std::abs(freq - pi(x)) <= ci);
  }
}

TEST_CASE("panels are deterministic in the seed and replication") {
  EntryModel m = tiny_model(0.2, 2, 1);
  Solution sol = solve_stationary(m, m.cfg.beta);
  Panel a = simulate_panel(sol, m, 200, 8, 1234);
  Panel b = simulate_panel(sol, m, 200, 8, 1234);
  REQUIRE(a.x == b.x);
  REQUIRE(a.d == b.d);
  Panel c = simulate_panel(sol, m, 200, 8, 1235);
  REQUIRE((a.x != c.x || a.d != c.d));
  Panel r1 = simulate_panel(sol, m, 200, 8, 1234, /*replication=*/1);
  REQUIRE((a.x != r1.x || a.d != r1.d));
}

TEST_CASE("nonstationary simulation starts uniform and respects the horizon") {
  EntryModelConfig cfg;
  cfg.K_z = 1;
  cfg.K_o = 2;
  cfg.gamma_a = 0.4;
  cfg.gamma0_t = {0.5, -0.5, 0.2};
  cfg.horizon = 3;
  EntryModel m = build_entry_model(cfg);
  Solution sol = solve_finite_horizon(m, cfg.beta, 3);
  Panel panel = simulate_panel(sol, m, 12000, 3, 777);

  std::vector<long> first(static_cast<size_t>(m.cfg.X()), 0);
  for (int i = 0; i < panel.N; ++i)
    ++first[static_cast<size_t>(panel.x[panel.row(i, 1)])];
  double uni = 1.0 / static_cast<double>(m.cfg.X());
  for (long cnt : first) {
    double freq = static_cast<double>(cnt) / panel.N;
    REQUIRE(std::abs(freq - uni) <= 3.0 * std::sqrt(uni * (1 - uni) / panel.N));
  }
  REQUIRE_THROWS_AS(simulate_panel(sol, m, 10, 4, 1), std::invalid_argument);
}

TEST_CASE("panels survive the CSV round trip") {
  EntryModel m = tiny_model(0.1, 2, 1);
  Solution sol = solve_stationary(m, m.cfg.beta);
  Panel panel = simulate_panel(sol, m, 25, 6, 31337);
  std::string path = "/tmp/findep_test_panel.csv";
  write_panel_csv(path, panel);

  std::string text = io::read_text(path);
  REQUIRE(text.rfind("i,t,x,d\n", 0) == 0);

  Panel back = read_panel_csv(path);
  REQUIRE(back.N == panel.N);
  REQUIRE(back.T == panel.T);
  REQUIRE(back.x == panel.x);
  REQUIRE(back.d == panel.d);
}
