#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "findep/estimate.hpp"

namespace findep::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// config identity
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// dump() sorts object keys, so the hash is canonical for the parsed content
inline std::string config_hash(const io::json& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.dump())));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// validation: collect every offending key before giving up
// ---------------------------------------------------------------------------

struct Issues {
  std::vector<std::string> list;
  void add(const std::string& key, const std::string& msg) {
    list.push_back(key + ": " + msg);
  }
  bool ok() const { return list.empty(); }
};

inline void check_unknown(const io::json& block, const std::string& prefix,
                          std::initializer_list<const char*> known, Issues& iss) {
  for (auto it = block.begin(); it != block.end(); ++it) {
    bool found = false;
    for (const char* k : known)
      if (it.key() == k) found = true;
    if (!found)
      iss.add(prefix.empty() ? it.key() : prefix + "." + it.key(), "unknown key");
  }
}

inline double get_num(const io::json& b, const std::string& prefix, const char* key,
                      double dflt, Issues& iss) {
  if (!b.contains(key)) return dflt;
  if (!b[key].is_number()) {
    iss.add(prefix + "." + key, "expected a number");
    return dflt;
  }
  return b[key].get<double>();
}

inline int get_int(const io::json& b, const std::string& prefix, const char* key,
                   int dflt, Issues& iss) {
  if (!b.contains(key)) return dflt;
  if (!b[key].is_number_integer()) {
    iss.add(prefix + "." + key, "expected an integer");
    return dflt;
  }
  return b[key].get<int>();
}

inline std::uint64_t get_u64(const io::json& b, const std::string& prefix,
                             const char* key, std::uint64_t dflt, Issues& iss) {
  if (!b.contains(key)) return dflt;
  const io::json& v = b[key];
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    iss.add(prefix + "." + key, "expected a non-negative integer");
    return dflt;
  }
  return v.get<std::uint64_t>();
}

inline std::string get_str(const io::json& b, const std::string& prefix,
                           const char* key, const std::string& dflt, Issues& iss) {
  if (!b.contains(key)) return dflt;
  if (!b[key].is_string()) {
    iss.add(prefix + "." + key, "expected a string");
    return dflt;
  }
  return b[key].get<std::string>();
}

inline bool all_numbers(const io::json& a) {
  return std::all_of(a.begin(), a.end(),
                     [](const io::json& v) { return v.is_number(); });
}

inline EntryModelConfig parse_model(const io::json& b, Issues& iss) {
  EntryModelConfig cfg;
  check_unknown(b, "model",
                {"K_z", "K_o", "beta", "gamma_a", "gamma0_omega", "gamma1_omega",
                 "sigma_omega", "gamma0_z", "gamma1_z", "sigma_z", "z_chains",
                 "gamma0_t", "horizon", "theta"},
                iss);
  cfg.K_z = get_int(b, "model", "K_z", cfg.K_z, iss);
  cfg.K_o = get_int(b, "model", "K_o", cfg.K_o, iss);
  cfg.beta = get_num(b, "model", "beta", cfg.beta, iss);
  cfg.gamma_a = get_num(b, "model", "gamma_a", cfg.gamma_a, iss);
  cfg.gamma0_omega = get_num(b, "model", "gamma0_omega", cfg.gamma0_omega, iss);
  cfg.gamma1_omega = get_num(b, "model", "gamma1_omega", cfg.gamma1_omega, iss);
  cfg.sigma_omega = get_num(b, "model", "sigma_omega", cfg.sigma_omega, iss);
  cfg.gamma0_z = get_num(b, "model", "gamma0_z", cfg.gamma0_z, iss);
  cfg.gamma1_z = get_num(b, "model", "gamma1_z", cfg.gamma1_z, iss);
  cfg.sigma_z = get_num(b, "model", "sigma_z", cfg.sigma_z, iss);
  cfg.horizon = get_int(b, "model", "horizon", cfg.horizon, iss);

  if (b.contains("z_chains")) {
    const io::json& zc = b["z_chains"];
    bool shape_ok = zc.is_array() && zc.size() == 4;
    if (shape_ok)
      for (const io::json& row : zc)
        if (!row.is_array() || row.size() != 3 || !all_numbers(row)) shape_ok = false;
    if (!shape_ok) {
      iss.add("model.z_chains", "expected four [gamma0, gamma1, sigma] triples");
    } else {
      for (const io::json& row : zc)
        cfg.z_chains.push_back({row[0].get<double>(), row[1].get<double>(),
                                row[2].get<double>()});
    }
  }
  if (b.contains("gamma0_t")) {
    const io::json& g = b["gamma0_t"];
    if (!g.is_array() || !all_numbers(g)) {
      iss.add("model.gamma0_t", "expected an array of numbers");
    } else {
      for (const io::json& v : g) cfg.gamma0_t.push_back(v.get<double>());
    }
  }
  if (b.contains("theta")) {
    const io::json& th = b["theta"];
    if (!th.is_array() || th.size() != 7 || !all_numbers(th)) {
      iss.add("model.theta", "expected an array of 7 numbers");
    } else {
      for (Eigen::Index k = 0; k < 7; ++k)
        cfg.theta(k) = th[static_cast<size_t>(k)].get<double>();
    }
  }

  // range checks mirror the library preconditions, collecting every violation
  if (cfg.K_z < 1) iss.add("model.K_z", "must be at least 1");
  if (cfg.K_o < 1) iss.add("model.K_o", "must be at least 1");
  if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) iss.add("model.beta", "must lie in (0, 1)");
  if (!(cfg.sigma_omega > 0)) iss.add("model.sigma_omega", "must be positive");
  if (!(cfg.sigma_z > 0)) iss.add("model.sigma_z", "must be positive");
  if (!(std::abs(cfg.gamma1_omega) < 1))
    iss.add("model.gamma1_omega", "|gamma1| must be below 1");
  if (!(std::abs(cfg.gamma1_z) < 1))
    iss.add("model.gamma1_z", "|gamma1| must be below 1");
  if (cfg.horizon < 0) iss.add("model.horizon", "must be non-negative (0 = stationary)");
  for (size_t i = 0; i < cfg.z_chains.size(); ++i) {
    if (!(cfg.z_chains[i][2] > 0))
      iss.add("model.z_chains[" + std::to_string(i) + "]", "sigma must be positive");
    if (!(std::abs(cfg.z_chains[i][1]) < 1))
      iss.add("model.z_chains[" + std::to_string(i) + "]", "|gamma1| must be below 1");
  }
  return cfg;
}

struct SolverCfg {
  int rho = 2;
  double tol = 1e-10;
};

inline SolverCfg parse_solver(const io::json& b, Issues& iss) {
  SolverCfg s;
  check_unknown(b, "solver", {"rho", "tol"}, iss);
  s.rho = get_int(b, "solver", "rho", s.rho, iss);
  s.tol = get_num(b, "solver", "tol", s.tol, iss);
  if (s.rho < 1) iss.add("solver.rho", "must be at least 1");
  if (!(s.tol > 0)) iss.add("solver.tol", "must be positive");
  return s;
}

struct EstimationCfg {
  std::vector<Estimator> estimators = {Estimator::FD};
  CcpMode ccp = CcpMode::Oracle;
  int N = 30;
  int T = 40;
  int reps = 100;
  std::uint64_t seed = 1;
};

inline EstimationCfg parse_estimation(const io::json& b, Issues& iss) {
  EstimationCfg e;
  check_unknown(b, "estimation", {"estimators", "ccp_mode", "N", "T", "reps", "seed"},
                iss);
  if (b.contains("estimators")) {
    const io::json& a = b["estimators"];
    if (!a.is_array() || a.empty()) {
      iss.add("estimation.estimators", "expected a non-empty array of estimator names");
    } else {
      e.estimators.clear();
      for (size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_string()) {
          iss.add("estimation.estimators[" + std::to_string(i) + "]",
                  "expected a string");
          continue;
        }
        try {
          e.estimators.push_back(estimator_from_string(a[i].get<std::string>()));
        } catch (const std::exception&) {
          iss.add("estimation.estimators[" + std::to_string(i) + "]",
                  "unknown estimator '" + a[i].get<std::string>() +
                      "' (valid: FD, FD2, HM)");
        }
      }
    }
  }
  if (b.contains("ccp_mode")) {
    std::string s = get_str(b, "estimation", "ccp_mode", "oracle", iss);
    try {
      e.ccp = ccp_mode_from_string(s);
    } catch (const std::exception&) {
      iss.add("estimation.ccp_mode", "expected 'oracle' or 'frequency'");
    }
  }
  e.N = get_int(b, "estimation", "N", e.N, iss);
  e.T = get_int(b, "estimation", "T", e.T, iss);
  e.reps = get_int(b, "estimation", "reps", e.reps, iss);
  e.seed = get_u64(b, "estimation", "seed", e.seed, iss);
  if (e.N < 1) iss.add("estimation.N", "must be at least 1");
  if (e.T < 1) iss.add("estimation.T", "must be at least 1");
  if (e.reps < 1) iss.add("estimation.reps", "must be at least 1");
  return e;
}

struct BenchCfg {
  std::vector<long> X;
  std::vector<double> gamma_a;
  int reps = 3;
};

inline BenchCfg parse_bench(const io::json& b, Issues& iss) {
  BenchCfg bc;
  check_unknown(b, "bench", {"X", "gamma_a", "reps"}, iss);
  if (!b.contains("X")) {
    iss.add("bench.X", "required: array of state-space sizes");
  } else {
    const io::json& xs = b["X"];
    bool ok = xs.is_array() && !xs.empty() &&
              std::all_of(xs.begin(), xs.end(), [](const io::json& v) {
                return v.is_number_integer() && v.get<long>() > 0;
              });
    if (!ok) {
      iss.add("bench.X", "expected a non-empty array of positive integers");
    } else {
      for (const io::json& v : xs) bc.X.push_back(v.get<long>());
    }
  }
  if (b.contains("gamma_a")) {
    const io::json& g = b["gamma_a"];
    if (g.is_number()) {
      bc.gamma_a.push_back(g.get<double>());
    } else if (g.is_array() && !g.empty() && all_numbers(g)) {
      for (const io::json& v : g) bc.gamma_a.push_back(v.get<double>());
    } else {
      iss.add("bench.gamma_a", "expected a number or a non-empty array of numbers");
    }
  }
  bc.reps = get_int(b, "bench", "reps", bc.reps, iss);
  if (bc.reps < 1) iss.add("bench.reps", "must be at least 1");
  return bc;
}

struct RunConfig {
  io::json raw;
  EntryModelConfig model;
  bool has_model = false;
  SolverCfg solver;
  EstimationCfg est;
  std::string out;
  std::string panel;
  std::string transitions;
  std::string mat_F0, mat_F1;
  BenchCfg bench;
  bool has_bench = false;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"simulate", "weights", "diagnose",
                                              "estimate", "mc", "bench"};
  return names;
}

inline RunConfig parse_config(const std::string& command, const io::json& j,
                              Issues& iss) {
  RunConfig rc;
  rc.raw = j;
  if (!j.is_object()) {
    iss.add("config", "top level must be a JSON object");
    return rc;
  }
  check_unknown(j, "",
                {"model", "solver", "estimation", "out", "panel", "transitions",
                 "matrices", "bench"},
                iss);
  if (j.contains("model")) {
    if (!j["model"].is_object()) {
      iss.add("model", "expected an object");
    } else {
      rc.model = parse_model(j["model"], iss);
      rc.has_model = true;
    }
  }
  if (j.contains("solver")) {
    if (!j["solver"].is_object()) iss.add("solver", "expected an object");
    else rc.solver = parse_solver(j["solver"], iss);
  }
  bool T_explicit = false;
  if (j.contains("estimation")) {
    if (!j["estimation"].is_object()) {
      iss.add("estimation", "expected an object");
    } else {
      rc.est = parse_estimation(j["estimation"], iss);
      T_explicit = j["estimation"].contains("T");
    }
  }
  for (const char* key : {"out", "panel", "transitions"}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_string()) {
      iss.add(key, "expected a string");
      continue;
    }
    std::string v = j[key].get<std::string>();
    if (std::string(key) == "out") rc.out = v;
    else if (std::string(key) == "panel") rc.panel = v;
    else rc.transitions = v;
  }
  if (j.contains("matrices")) {
    const io::json& mt = j["matrices"];
    if (!mt.is_object()) {
      iss.add("matrices", "expected an object with F0 and F1 paths");
    } else {
      check_unknown(mt, "matrices", {"F0", "F1"}, iss);
      rc.mat_F0 = get_str(mt, "matrices", "F0", "", iss);
      rc.mat_F1 = get_str(mt, "matrices", "F1", "", iss);
      if (rc.mat_F0.empty()) iss.add("matrices.F0", "required");
      if (rc.mat_F1.empty()) iss.add("matrices.F1", "required");
    }
  }
  if (j.contains("bench")) {
    if (!j["bench"].is_object()) {
      iss.add("bench", "expected an object");
    } else {
      rc.bench = parse_bench(j["bench"], iss);
      rc.has_bench = true;
    }
  }

  // cross-field and per-command requirements
  if (rc.has_model && rc.model.nonstationary()) {
    if (T_explicit && rc.est.T != rc.model.horizon)
      iss.add("estimation.T", "must equal model.horizon for nonstationary models");
    rc.est.T = rc.model.horizon;
  }
  if ((command == "simulate" || command == "mc" || command == "estimate") &&
      !rc.has_model)
    iss.add("model", "required for " + command);
  if (command == "estimate") {
    if (rc.panel.empty()) {
      iss.add("panel", "required for estimate (path to a panel CSV)");
    } else if (!fs::exists(rc.panel)) {
      iss.add("panel", "file not found: " + rc.panel);
    }
  }
  if (command == "weights") {
    if (!rc.has_model && rc.transitions.empty())
      iss.add("model", "weights needs a model block or a transitions directory");
    if (!rc.transitions.empty() && !fs::exists(rc.transitions))
      iss.add("transitions", "directory not found: " + rc.transitions);
    if (rc.transitions.empty() && rc.has_model && rc.model.nonstationary())
      iss.add("model.horizon",
              "weights command is stationary-only (nonstationary weights are "
              "built during estimation)");
  }
  if (command == "diagnose") {
    if (!rc.has_model && !j.contains("matrices"))
      iss.add("model", "diagnose needs a model block or a matrices block");
    for (const std::string* p : {&rc.mat_F0, &rc.mat_F1})
      if (!p->empty() && !fs::exists(*p))
        iss.add("matrices", "file not found: " + *p);
  }
  if (command == "bench") {
    if (!rc.has_bench) {
      iss.add("bench", "required for bench (object with an X array)");
    } else {
      int K_z = rc.has_model ? rc.model.K_z : EntryModelConfig{}.K_z;
      long kz4 = 1;
      for (int i = 0; i < 4; ++i) kz4 *= K_z;
      for (size_t i = 0; i < rc.bench.X.size(); ++i) {
        long X = rc.bench.X[i];
        if (X % (2 * kz4) != 0 || X / (2 * kz4) < 1)
          iss.add("bench.X[" + std::to_string(i) + "]",
                  "not representable as 2*K_o*K_z^4 with K_z=" + std::to_string(K_z));
      }
      if (rc.has_model && rc.model.nonstationary())
        iss.add("model.horizon", "bench requires a stationary model");
    }
  }
  if (command == "estimate" || command == "mc") {
    if (rc.solver.rho != 2 &&
        std::any_of(rc.est.estimators.begin(), rc.est.estimators.end(),
                    [](Estimator e) { return e == Estimator::FD2; }))
      iss.add("solver.rho", "must be 2 when estimators include FD2");
  }
  return rc;
}

// ---------------------------------------------------------------------------
// shared serialization
// ---------------------------------------------------------------------------

inline io::json diagnosis_to_json(const FdDiagnosis& d) {
  io::json j;
  j["rank_Ftilde"] = d.rank_Ftilde;
  j["nullity"] = d.nullity;
  j["norm_S01"] = d.norm_S01;
  j["norm_S01_S11_proj"] = d.norm_S01_S11_proj;
  j["verdict"] = to_string(d.verdict);
  j["tol"] = d.tol;
  return j;
}

inline std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// data periods: the horizon for nonstationary models, estimation.T otherwise
inline int effective_T(const RunConfig& rc) {
  return rc.model.nonstationary() ? rc.model.horizon : rc.est.T;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline io::json cmd_simulate(const RunConfig& rc, const fs::path& out,
                             std::uint64_t seed) {
  EntryModel m = build_entry_model(rc.model);
  int T = effective_T(rc);
  Solution sol = rc.model.nonstationary()
                     ? solve_finite_horizon(m, rc.model.beta, T)
                     : solve_stationary(m, rc.model.beta, rc.solver.tol);
  Panel panel = simulate_panel(sol, m, rc.est.N, T, seed);
  write_panel_csv((out / "panel.csv").string(), panel);

  io::json manifest;
  manifest["seed"] = seed;
  manifest["theta"] = to_std(panel.theta);
  manifest["config_hash"] = config_hash(rc.raw);
  manifest["N"] = panel.N;
  manifest["T"] = panel.T;
  manifest["X"] = panel.X;
  manifest["layout"] = kStateLayout;
  io::write_json(out / "manifest.json", manifest);

  io::json summary;
  summary["N"] = panel.N;
  summary["T"] = panel.T;
  summary["X"] = panel.X;
  summary["seed"] = seed;
  summary["files"] = {"panel.csv", "manifest.json", "run.json"};
  return summary;
}

inline io::json cmd_weights(const RunConfig& rc, const fs::path& out) {
  WeightPlan plan;
  Matrix Ftilde, F0;
  std::string basis = "dense";
  long X = 0;

  if (!rc.transitions.empty()) {
    TransitionSet ts = read_transition_set(rc.transitions);
    require(ts.stationary, "weights: transitions directory must be stationary (T=0)");
    F0 = ts.at(0);
    Ftilde = diff_transition(ts);
    X = ts.X;
    plan = solve_sequential(Ftilde, F0, rc.solver.rho);
  } else {
    EntryModel m = build_entry_model(rc.model);
    X = rc.model.X();
    plan = kron_solve(m.kf, rc.solver.rho);
    if (m.ts) {
      F0 = m.dense().at(0);
      Ftilde = diff_transition(m.dense());
    } else {
      // above the dense cap the diagnosis runs on the endogenous block, which
      // determines the verdict (the exogenous factor is full-rank)
      F0 = m.kf.omega(0);
      Ftilde = m.kf.omega(1) - F0;
      basis = "omega_block";
    }
  }

  io::json residuals;
  for (int s = 1; s <= plan.rho; ++s)
    residuals[std::to_string(s)] = plan.residual_at(s);
  io::write_json(out / "residuals.json", residuals);

  io::json files = {"residuals.json", "diagnosis.json", "plan.json", "run.json"};
  const bool write_dense = !plan.factored || X <= 1024;
  if (write_dense) {
    for (int s = 1; s <= plan.rho; ++s) {
      std::string name = "wcheck_" + std::to_string(s) + ".csv";
      io::write_csv_matrix(out / name, plan.W_dense(s));
      files.push_back(name);
    }
  } else {
    // W_s = wcheck_omega_s (x) fz^s; writing the factors keeps big plans small
    for (int s = 1; s <= plan.rho; ++s) {
      std::string name = "wcheck_omega_" + std::to_string(s) + ".csv";
      io::write_csv_matrix(out / name, plan.W_omega[static_cast<size_t>(s - 1)]);
      files.push_back(name);
    }
    io::write_csv_matrix(out / "fz.csv", plan.Fz_pow[1]);
    files.push_back("fz.csv");
  }

  FdDiagnosis d = diagnose_finite_dependence(Ftilde, F0, rc.solver.tol);
  io::json dj = diagnosis_to_json(d);
  dj["basis"] = basis;
  io::write_json(out / "diagnosis.json", dj);

  io::json plan_j;
  plan_j["rho"] = plan.rho;
  plan_j["factored"] = plan.factored;
  plan_j["X"] = X;
  plan_j["dense_files"] = write_dense;
  plan_j["realizable"] = plan.realizable;
  io::write_json(out / "plan.json", plan_j);

  io::json summary;
  summary["residuals"] = residuals;
  summary["verdict"] = to_string(d.verdict);
  summary["factored"] = plan.factored;
  summary["files"] = files;
  return summary;
}

inline io::json cmd_diagnose(const RunConfig& rc, const fs::path& out) {
  Matrix Ftilde, F0;
  if (!rc.mat_F0.empty()) {
    F0 = io::read_csv_matrix(rc.mat_F0);
    Matrix F1 = io::read_csv_matrix(rc.mat_F1);
    require(F0.rows() == F0.cols() && F1.rows() == F1.cols() &&
                F0.rows() == F1.rows(),
            "diagnose: matrices must be square and of equal size");
    Ftilde = F1 - F0;
  } else {
    EntryModel m = build_entry_model(rc.model);
    F0 = m.dense().at(0);  // period-1 pair for nonstationary models
    Ftilde = diff_transition(m.dense());
  }
  FdDiagnosis d = diagnose_finite_dependence(Ftilde, F0, rc.solver.tol);
  io::json dj = diagnosis_to_json(d);
  dj["basis"] = "dense";
  io::write_json(out / "diagnosis.json", dj);

  io::json summary;
  summary["verdict"] = to_string(d.verdict);
  summary["rank_Ftilde"] = d.rank_Ftilde;
  summary["nullity"] = d.nullity;
  summary["norm_S01"] = d.norm_S01;
  summary["files"] = {"diagnosis.json", "run.json"};
  return summary;
}

inline io::json cmd_estimate(const RunConfig& rc, const fs::path& out) {
  EntryModel m = build_entry_model(rc.model);
  Panel panel = read_panel_csv(rc.panel);
  require(panel.X == static_cast<int>(rc.model.X()),
          "estimate: panel has X=" + std::to_string(panel.X) +
              " states but the model has X=" + std::to_string(rc.model.X()));
  if (rc.model.nonstationary())
    require(panel.T == rc.model.horizon,
            "estimate: panel length must equal model.horizon");
  const bool stationary = !rc.model.nonstationary();

  Solution sol;
  const Solution* sp = nullptr;
  if (rc.est.ccp == CcpMode::Oracle) {
    sol = stationary ? solve_stationary(m, rc.model.beta, rc.solver.tol)
                     : solve_finite_horizon(m, rc.model.beta, panel.T);
    sp = &sol;
  }
  CcpTable used = rc.est.ccp == CcpMode::Oracle
                      ? sol.p
                      : estimate_ccp(panel, CcpMode::Frequency, stationary);
  write_ccp_csv((out / "ccp.csv").string(), used);

  io::json results = io::json::array();
  for (Estimator est : rc.est.estimators) {
    EstimateOptions opt;
    opt.estimator = est;
    opt.ccp = rc.est.ccp;
    opt.rho = rc.solver.rho;
    EstimationReport rep = fd_estimate(panel, m, opt, sp);
    io::json r;
    r["estimator"] = to_string(est);
    io::json th;
    for (Eigen::Index k = 0; k < rep.theta.size(); ++k)
      th[rep.names[static_cast<size_t>(k)]] = rep.theta(k);
    r["theta"] = th;
    r["loglik"] = rep.loglik;
    r["grad_norm"] = rep.grad_norm;
    r["iterations"] = rep.iterations;
    r["converged"] = rep.converged;
    r["residual1"] = rep.residual1;
    r["residual2"] = rep.residual2;
    r["time_weights"] = rep.time_weights;
    r["time_assemble"] = rep.time_assemble;
    r["time_optimize"] = rep.time_optimize;
    results.push_back(std::move(r));
  }

  io::json ej;
  ej["names"] = m.util.names;
  ej["ccp_mode"] = to_string(rc.est.ccp);
  ej["rho"] = rc.solver.rho;
  io::json pj;
  pj["N"] = panel.N;
  pj["T"] = panel.T;
  pj["X"] = panel.X;
  ej["panel"] = pj;
  ej["results"] = results;
  io::write_json(out / "estimate.json", ej);

  io::json summary;
  summary["results"] = results;
  summary["files"] = {"estimate.json", "ccp.csv", "run.json"};
  return summary;
}

inline io::json cmd_mc(const RunConfig& rc, const fs::path& out, std::uint64_t seed) {
  McConfig mc;
  mc.model = rc.model;
  mc.estimators = rc.est.estimators;
  mc.N = rc.est.N;
  mc.T = effective_T(rc);
  mc.replications = rc.est.reps;
  mc.seed = seed;
  mc.rho = rc.solver.rho;
  mc.ccp = rc.est.ccp;
  McReport rep = monte_carlo(mc);
  write_mc_csv(rep, out / "mc.csv");
  io::write_json(out / "mc.json", mc_to_json(rep));

  io::json summary = mc_to_json(rep);
  summary["files"] = {"mc.csv", "mc.json", "run.json"};
  return summary;
}

inline io::json cmd_bench(const RunConfig& rc, const fs::path& out) {
  EntryModelConfig base = rc.has_model ? rc.model : EntryModelConfig{};
  long kz4 = 1;
  for (int i = 0; i < 4; ++i) kz4 *= base.K_z;
  std::vector<double> gammas =
      rc.bench.gamma_a.empty() ? std::vector<double>{base.gamma_a} : rc.bench.gamma_a;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::string csv =
      "X,K_o,K_z,gamma_a,residual1,residual2,residual2_optimal,"
      "time_weights,time_hm_inversion,reps\n";
  io::json rows = io::json::array();
  for (long X : rc.bench.X) {
    int K_o = static_cast<int>(X / (2 * kz4));
    for (double g : gammas) {
      EntryModelConfig c = base;
      c.K_o = K_o;
      c.gamma_a = g;
      EntryModel m = build_entry_model(c);

      std::vector<double> tw;
      WeightPlan plan;
      for (int r = 0; r < rc.bench.reps; ++r) {
        detail::Stopwatch sw;
        plan = kron_solve(m.kf, rc.solver.rho);
        tw.push_back(sw.lap());
      }
      double res1 = plan.residual_at(1);
      double res2 = rc.solver.rho >= 2 ? plan.residual_at(2) : nan;

      // the optimal two-period residual factors through the endogenous block:
      // with a full-rank exogenous factor, residual = R_omega (x) F_z^2
      Matrix T0 = m.kf.omega(0);
      TwoPeriodSolution two = solve_two_period_optimal(m.kf.omega(1) - T0, T0);
      double res2_opt =
          two.residual2_norm * spectral_norm(Matrix(m.kf.F_z * m.kf.F_z));

      double thm = nan;
      if (m.ts) {
        CcpTable half(Matrix::Constant(1, m.dense().X, 0.5));
        std::vector<double> th;
        for (int r = 0; r < rc.bench.reps; ++r)
          th.push_back(detail::assemble_hm(m, half, c.beta).time_weights);
        thm = median(th);
      }
      double tmed = median(tw);

      csv += std::to_string(X) + "," + std::to_string(K_o) + "," +
             std::to_string(base.K_z) + "," + io::fmt_double(g) + "," +
             io::fmt_double(res1) + "," + io::fmt_double(res2) + "," +
             io::fmt_double(res2_opt) + "," + io::fmt_double(tmed) + "," +
             io::fmt_double(thm) + "," + std::to_string(rc.bench.reps) + "\n";
      io::json row;
      row["X"] = X;
      row["K_o"] = K_o;
      row["K_z"] = base.K_z;
      row["gamma_a"] = g;
      row["residual1"] = res1;
      row["residual2"] = res2;
      row["residual2_optimal"] = res2_opt;
      row["time_weights"] = tmed;
      row["time_hm_inversion"] = thm;
      rows.push_back(std::move(row));
    }
  }
  io::write_text(out / "bench.csv", csv);
  io::json bj;
  bj["reps"] = rc.bench.reps;
  bj["rows"] = rows;
  io::write_json(out / "bench.json", bj);

  io::json summary;
  summary["rows"] = rows;
  summary["files"] = {"bench.csv", "bench.json", "run.json"};
  return summary;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

struct RunInput {
  std::string command;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};

inline io::json error_json(const std::string& command,
                           const std::vector<std::string>& issues) {
  io::json e;
  e["status"] = "error";
  e["command"] = command;
  e["issues"] = issues;
  return e;
}

inline int run(const RunInput& in, std::ostream& os) {
  if (std::find(command_names().begin(), command_names().end(), in.command) ==
      command_names().end()) {
    os << error_json(in.command, {"command: unknown command '" + in.command + "'"})
              .dump(2)
       << "\n";
    return 2;
  }
  io::json cfg;
  try {
    cfg = io::read_json(in.config_path);
  } catch (const std::exception& e) {
    os << error_json(in.command, {std::string("config: ") + e.what()}).dump(2)
       << "\n";
    return 1;
  }
  Issues iss;
  RunConfig rc = parse_config(in.command, cfg, iss);
  if (!iss.ok()) {
    os << error_json(in.command, iss.list).dump(2) << "\n";
    return 2;
  }
  std::uint64_t seed = in.seed ? *in.seed : rc.est.seed;
  fs::path out = in.out_dir && !in.out_dir->empty()
                     ? fs::path(*in.out_dir)
                     : !rc.out.empty()
                           ? fs::path(rc.out)
                           : fs::path("out") / (in.command + "-" + config_hash(cfg));
  try {
    io::ensure_dir(out);
    io::json summary;
    if (in.command == "simulate") summary = cmd_simulate(rc, out, seed);
    else if (in.command == "weights") summary = cmd_weights(rc, out);
    else if (in.command == "diagnose") summary = cmd_diagnose(rc, out);
    else if (in.command == "estimate") summary = cmd_estimate(rc, out);
    else if (in.command == "mc") summary = cmd_mc(rc, out, seed);
    else summary = cmd_bench(rc, out);

    io::json runj;
    runj["command"] = in.command;
    runj["config"] = cfg;
    runj["config_hash"] = config_hash(cfg);
    if (in.command == "simulate" || in.command == "mc") runj["seed"] = seed;
    io::write_json(out / "run.json", runj);

    summary["status"] = "ok";
    summary["command"] = in.command;
    summary["out"] = out.string();
    os << summary.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    os << error_json(in.command, {e.what()}).dump(2) << "\n";
    return 1;
  }
}

}  // namespace findep::cli
