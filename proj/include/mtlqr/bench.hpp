#pragma once

// Seeded task families, bound validation against a finished run, and the
// experiment driver that writes the run artifacts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mtlqr/bisim.hpp"
#include "mtlqr/config.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/hetero_baseline.hpp"
#include "mtlqr/io/json.hpp"
#include "mtlqr/lqr.hpp"
#include "mtlqr/policy_grad.hpp"
#include "mtlqr/rng.hpp"

#define MTLQR_VERSION "1.0.0"

namespace mtlqr {

inline constexpr double kGravity = 10.0;
inline constexpr double kDt = 0.05;

inline Task pendulum_task(double ell, double m, double q, double r, std::string id) {
  Task t;
  t.id = std::move(id);
  t.A = RealMatrix{{1.0, kDt}, {kGravity * kDt / ell, 1.0}};
  t.B = RealMatrix{{0.0}, {kDt / (m * ell * ell)}};
  t.Q = q * RealMatrix::Identity(2, 2);
  t.R = RealMatrix{{r}};
  t.Sigma0 = 0.01 * RealMatrix::Identity(2, 2);
  return t;
}

inline Task unicycle_task(double v0, double theta0, double q, double r, std::string id) {
  const double c = std::cos(theta0), s = std::sin(theta0);
  Task t;
  t.id = std::move(id);
  t.A = RealMatrix{{1.0, 0.0, -kDt * v0 * s}, {0.0, 1.0, kDt * v0 * c}, {0.0, 0.0, 1.0}};
  t.B = RealMatrix{{kDt * c, 0.0}, {kDt * s, 0.0}, {0.0, kDt}};
  t.Q = q * RealMatrix::Identity(3, 3);
  t.R = r * RealMatrix::Identity(2, 2);
  t.Sigma0 = RealMatrix::Identity(3, 3);
  return t;
}

inline std::string task_label(std::size_t i) { return "task" + std::to_string(i); }

/// Draws (l, m, q, r) per task, in that order.
inline std::vector<Task> gen_pendulum(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw DomainError("need at least one task");
  Xoshiro256 rng(seed);
  std::vector<Task> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double ell = rng.uniform(0.5, 1.0);
    const double m = rng.uniform(0.1, 0.5);
    const double q = rng.uniform(0.1, 0.5);
    const double r = rng.uniform(0.01, 0.05);
    out.push_back(pendulum_task(ell, m, q, r, task_label(i)));
  }
  return out;
}

/// Draws (v0, theta0, q, r) per task, in that order.
inline std::vector<Task> gen_unicycle(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw DomainError("need at least one task");
  Xoshiro256 rng(seed);
  std::vector<Task> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double v0 = rng.uniform(0.1, 1.75);
    const double theta0 = rng.uniform(0.0, std::acos(-1.0) / 2.0);
    const double q = rng.uniform(0.1, 0.5);
    const double r = rng.uniform(0.01, 0.05);
    out.push_back(unicycle_task(v0, theta0, q, r, task_label(i)));
  }
  return out;
}

inline std::vector<Task> make_tasks(const ExperimentConfig& cfg, std::uint64_t seed) {
  switch (cfg.family) {
    case Family::pendulum: return gen_pendulum(seed, cfg.n_tasks);
    case Family::unicycle: return gen_unicycle(seed, cfg.n_tasks);
    case Family::custom: break;
  }
  if (!cfg.tasks) throw ConfigError("custom family needs an explicit task list");
  return *cfg.tasks;
}

struct TaskBound {
  std::string id;
  double J = 0.0;
  double J_star = 0.0;
  double gap = 0.0;
  double b = 0.0;
  double sigma_star_norm = 0.0;
  double lam_min_Sigma0 = 0.0;
  double sig_min_R = 0.0;
  double limit_rhs = 0.0;    ///< 3 ||Sigma*|| b^2 / (4 lam_min(Sigma0)^2 sig_min(R))
  double optimum_rhs = 0.0;  ///< 2 ||Sigma*|| b^2 / (lam_min(Sigma0)^2 sig_min(R)), K_f standing in for the minimizer
  bool limit_ok = false;
  bool optimum_ok = false;
};

struct BoundReport {
  std::size_t iterations = 0;
  double grad_norm = 0.0;  ///< residual of the K_f surrogate
  RealMatrix K_final;
  std::vector<TaskBound> tasks;
  std::vector<Certificate> certificates;
  std::optional<double> baseline;

  bool all_limit_ok() const {
    return std::all_of(tasks.begin(), tasks.end(), [](const TaskBound& t) { return t.limit_ok; });
  }
  bool all_optimum_ok() const {
    return std::all_of(tasks.begin(), tasks.end(), [](const TaskBound& t) { return t.optimum_ok; });
  }
  double max_gap() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& t : tasks) m = std::max(m, t.gap);
    return m;
  }
  double max_b() const {
    double m = 0.0;
    for (const auto& t : tasks) m = std::max(m, t.b);
    return m;
  }
};

/// Gaps at the final iterate against both heterogeneity bounds. A gap
/// passes when it is at most the bound plus 1e-8.
inline BoundReport validate_bounds(const std::vector<Task>& tasks, const RunLog& log, const BisimOptions& opt = {}) {
  if (!log.converged) {
    throw ValidationError("run did not converge (final gradient norm " + io::format_double(log.final_grad_norm) +
                          " after " + std::to_string(log.iterations) + " iterations); refusing to validate bounds");
  }
  require_consistent(tasks);
  const IterRecord& last = log.last();
  BoundReport rep;
  rep.iterations = log.iterations;
  rep.grad_norm = log.final_grad_norm;
  rep.K_final = log.K_final;
  std::vector<double> b;
  if (last.b && last.iter == log.iterations && !log.final_certificates.empty()) {
    b = *last.b;
    rep.certificates = log.final_certificates;
  } else if (last.b && last.iter == log.iterations && tasks.size() == 1) {
    b = *last.b;
  } else {
    HeteroProfile prof = hetero_profile(tasks, log.K_final, opt);
    b = std::move(prof.b);
    rep.certificates = std::move(prof.certificates);
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const BoundConstants c = dare_solve(tasks[i], opt.tol);
    TaskBound t;
    t.id = tasks[i].id;
    t.J = solve_task(tasks[i], log.K_final, opt.tol).J;
    t.J_star = c.J_star;
    t.gap = t.J - c.J_star;
    t.b = b[i];
    t.sigma_star_norm = c.sigma_star_norm;
    t.lam_min_Sigma0 = c.lam_min_Sigma0;
    t.sig_min_R = c.sig_min_R;
    const double base = c.sigma_star_norm * t.b * t.b / (c.lam_min_Sigma0 * c.lam_min_Sigma0 * c.sig_min_R);
    t.limit_rhs = 0.75 * base;
    t.optimum_rhs = 2.0 * base;
    t.limit_ok = t.gap <= t.limit_rhs + 1e-8;
    t.optimum_ok = t.gap <= t.optimum_rhs + 1e-8;
    rep.tasks.push_back(std::move(t));
  }
  return rep;
}

/// Mean over entries of (1 - ours/baseline) * 100.
inline double reduction_stats(const std::vector<double>& ours, const std::vector<double>& baseline) {
  if (ours.size() != baseline.size()) throw DimensionError("ours and baseline differ in length");
  if (ours.empty()) throw DomainError("reduction_stats needs at least one entry");
  double sum = 0.0;
  for (std::size_t k = 0; k < ours.size(); ++k) {
    if (!(baseline[k] > 0.0)) throw DomainError("baseline entries must be positive");
    sum += (1.0 - ours[k] / baseline[k]) * 100.0;
  }
  return sum / static_cast<double>(ours.size());
}

struct CollectionStats {
  std::uint64_t seed = 0;
  bool converged = false;
  std::size_t iterations = 0;
  double max_gap = 0.0;
  double max_b = 0.0;
  std::optional<double> baseline;
  std::string error;  ///< non-empty when the collection could not be run
};

struct ExperimentResult {
  std::vector<Task> tasks;
  RealMatrix K0;
  RunLog log;
  std::optional<BoundReport> report;  ///< absent when the run did not converge
  std::vector<CollectionStats> collections;
  std::vector<std::string> files;
};

inline io::Json to_json(const BoundReport& r) {
  using io::Json;
  auto ratio = [](double rhs, double gap) {
    return gap > 0.0 ? Json(rhs / gap) : Json(nullptr);
  };
  Json tasks = Json::array();
  for (const TaskBound& t : r.tasks) {
    tasks.push_back(Json{{"id", t.id},
                         {"J", t.J},
                         {"J_star", t.J_star},
                         {"gap", t.gap},
                         {"b", t.b},
                         {"sigma_star_norm", t.sigma_star_norm},
                         {"lam_min_Sigma0", t.lam_min_Sigma0},
                         {"sig_min_R", t.sig_min_R},
                         {"limit_bound", t.limit_rhs},
                         {"limit_ratio", ratio(t.limit_rhs, t.gap)},
                         {"limit_ok", t.limit_ok},
                         {"optimum_bound", t.optimum_rhs},
                         {"optimum_ratio", ratio(t.optimum_rhs, t.gap)},
                         {"optimum_ok", t.optimum_ok}});
  }
  Json j{{"iterations", r.iterations},
         {"grad_norm", r.grad_norm},
         {"K_final", io::to_json(r.K_final)},
         {"all_limit_ok", r.all_limit_ok()},
         {"all_optimum_ok", r.all_optimum_ok()},
         {"max_gap", r.max_gap()},
         {"max_b", r.max_b()},
         {"tasks", std::move(tasks)}};
  if (r.baseline) j["baseline"] = *r.baseline;
  return j;
}

inline io::Json to_json(const CollectionStats& c) {
  io::Json j{{"seed", c.seed}, {"converged", c.converged}, {"iterations", c.iterations},
             {"max_gap", c.max_gap}, {"max_b", c.max_b}};
  if (c.baseline) j["baseline"] = *c.baseline;
  if (!c.error.empty()) j["error"] = c.error;
  return j;
}

namespace detail {

inline CollectionStats run_collection(const ExperimentConfig& cfg, std::uint64_t seed,
                                      const BaselineMeasure* baseline) {
  CollectionStats st;
  st.seed = seed;
  try {
    const std::vector<Task> tasks = make_tasks(cfg, seed);
    PGConfig pg = cfg.pg;
    pg.jobs = 1;
    pg.log_every = std::numeric_limits<std::size_t>::max();
    pg.log_bisim_every = 0;
    const RunLog log = run_pg(tasks, initial_controller(tasks, pg.bisim.tol), pg);
    st.converged = log.converged;
    st.iterations = log.iterations;
    st.max_gap = *std::max_element(log.last().gap.begin(), log.last().gap.end());
    const HeteroProfile prof = hetero_profile(tasks, log.K_final, pg.bisim);
    st.max_b = *std::max_element(prof.b.begin(), prof.b.end());
    if (baseline) st.baseline = (*baseline)(deviation_bounds(tasks), log.K_final, tasks);
  } catch (const Error& e) {
    st.error = e.what();
  }
  return st;
}

inline std::string eigen_version() {
  return std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
         std::to_string(EIGEN_MINOR_VERSION);
}

}  // namespace detail

/// Generates the tasks, runs policy gradient, validates the bounds and
/// writes run.csv, certificates.json, bounds.json, manifest.json (and
/// collections.json when more than one collection is requested) into
/// cfg.output_dir. Files written by a failing call are removed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const BaselineMeasure* baseline = nullptr) {
  cfg.validate();
  ExperimentResult res;
  res.tasks = make_tasks(cfg, cfg.seed);
  res.K0 = cfg.K0 ? *cfg.K0 : initial_controller(res.tasks, cfg.pg.bisim.tol);
  res.log = run_pg(res.tasks, res.K0, cfg.pg);
  if (res.log.converged) {
    res.report = validate_bounds(res.tasks, res.log, cfg.pg.bisim);
    if (baseline) res.report->baseline = (*baseline)(deviation_bounds(res.tasks), res.log.K_final, res.tasks);
  }
  if (cfg.collections > 1) {
    res.collections.resize(cfg.collections);
    CollectionStats& first = res.collections[0];
    first.seed = cfg.seed;
    first.converged = res.log.converged;
    first.iterations = res.log.iterations;
    first.max_gap = *std::max_element(res.log.last().gap.begin(), res.log.last().gap.end());
    if (res.report) {
      first.max_b = res.report->max_b();
      first.baseline = res.report->baseline;
    } else {
      first.error = "did not converge";
    }
    parallel_for(cfg.collections - 1, cfg.pg.jobs, [&](std::size_t k) {
      res.collections[k + 1] = detail::run_collection(cfg, cfg.seed + k + 1, baseline);
    });
  }

  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  try {
    fs::create_directories(dir);
    auto path = [&](const char* name) {
      res.files.push_back((dir / name).string());
      return res.files.back();
    };
    {
      const std::string p = path("run.csv");
      std::ofstream f(p, std::ios::binary);
      if (!f) throw Error("cannot open '" + p + "' for writing");
      write_run_csv(f, res.log);
      if (!f) throw Error("failed writing '" + p + "'");
    }
    io::write_json_file(path("certificates.json"),
                        io::to_json(res.report ? res.report->certificates : std::vector<Certificate>{}));
    io::Json bounds = res.report ? to_json(*res.report)
                                 : io::Json{{"converged", false},
                                            {"iterations", res.log.iterations},
                                            {"grad_norm", res.log.final_grad_norm}};
    if (res.report) bounds["converged"] = true;
    io::write_json_file(path("bounds.json"), bounds);
    if (!res.collections.empty()) {
      io::Json list = io::Json::array();
      std::vector<double> ours, base;
      double sum_b = 0.0, sum_gap = 0.0;
      std::size_t ok = 0;
      for (const auto& c : res.collections) {
        list.push_back(to_json(c));
        if (!c.error.empty()) continue;
        ++ok;
        sum_b += c.max_b;
        sum_gap += c.max_gap;
        if (c.baseline) {
          ours.push_back(c.max_b);
          base.push_back(*c.baseline);
        }
      }
      io::Json summary{{"aggregate", "mean"},
                       {"completed", ok},
                       {"mean_max_b", ok ? io::Json(sum_b / ok) : io::Json(nullptr)},
                       {"mean_max_gap", ok ? io::Json(sum_gap / ok) : io::Json(nullptr)}};
      if (!ours.empty() && ours.size() == ok) summary["reduction_percent"] = reduction_stats(ours, base);
      io::write_json_file(path("collections.json"), io::Json{{"summary", summary}, {"collections", list}});
    }
    io::Json outputs = io::Json::array();
    for (const auto& f : res.files) outputs.push_back(fs::path(f).filename().string());
    outputs.push_back("manifest.json");
    io::Json summary{{"converged", res.log.converged},
                     {"iterations", res.log.iterations},
                     {"final_grad_norm", res.log.final_grad_norm},
                     {"K0", io::to_json(res.K0)}};
    if (res.report) {
      summary["max_gap"] = res.report->max_gap();
      summary["max_b"] = res.report->max_b();
      summary["bounds_ok"] = res.report->all_limit_ok();
    }
    io::write_json_file(path("manifest.json"), io::Json{{"tool", "mtlqr"},
                                                        {"version", MTLQR_VERSION},
                                                        {"eigen", detail::eigen_version()},
                                                        {"config", to_json(cfg)},
                                                        {"outputs", outputs},
                                                        {"summary", summary}});
  } catch (...) {
    std::error_code ec;
    for (const auto& f : res.files) fs::remove(f, ec);
    throw;
  }
  return res;
}

}  // namespace mtlqr
