#pragma once

// Shared-controller policy gradient over a collection of LQR tasks, with
// trajectory logging and the checks on the stabilizing subset and the
// step-size / heterogeneity conditions of the convergence guarantee.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mtlqr/bisim.hpp"
#include "mtlqr/conic.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/hetero_baseline.hpp"
#include "mtlqr/lqr.hpp"
#include "mtlqr/parallel.hpp"

namespace mtlqr {

struct PGConfig {
  double alpha = 0.01;
  std::size_t max_iters = 1000000;
  double grad_tol = 1e-6;           ///< stop when ||grad J_avg||_F <= grad_tol
  std::size_t log_every = 1;        ///< record every n-th iterate (the last one always)
  std::size_t log_bisim_every = 0;  ///< b_i every n-th iterate; 0 = never
  std::vector<double> beta;         ///< stabilizing-subset constants; empty = 10 for every task
  BisimOptions bisim;
  unsigned jobs = 1;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and > 0");
    if (!(grad_tol > 0.0)) throw DomainError("grad_tol must be positive");
    if (log_every == 0) throw DomainError("log_every must be >= 1");
    for (double b : beta)
      if (!(b >= 1.0)) throw DomainError("beta values must be >= 1");
  }

  std::vector<double> betas(std::size_t n) const {
    if (beta.empty()) return std::vector<double>(n, 10.0);
    if (beta.size() != n) throw DimensionError("beta has " + std::to_string(beta.size()) + " entries for " +
                                               std::to_string(n) + " tasks");
    return beta;
  }
};

struct IterRecord {
  std::size_t iter = 0;
  RealMatrix K;
  std::vector<double> J;
  std::vector<double> gap;  ///< J_i(K) - J_i(K*_i)
  double grad_norm = 0.0;   ///< ||grad J_avg||_F
  double rho_max = 0.0;
  std::optional<std::vector<double>> b;
};

struct RunLog {
  std::vector<std::string> task_ids;
  std::vector<double> J_star;
  std::vector<IterRecord> records;
  std::vector<Certificate> final_certificates;  ///< at the last iterate when b was computed there
  bool converged = false;
  std::size_t iterations = 0;  ///< index of the last iterate
  RealMatrix K_final;
  double final_grad_norm = 0.0;

  const IterRecord& last() const {
    if (records.empty()) throw ValidationError("run log is empty");
    return records.back();
  }
};

inline RealMatrix avg_gradient(const std::vector<TaskSolution>& sols) {
  RealMatrix g = RealMatrix::Zero(sols.front().grad.rows(), sols.front().grad.cols());
  for (const auto& s : sols) g += s.grad;
  return g / static_cast<double>(sols.size());
}

inline RealMatrix avg_gradient(const std::vector<Task>& tasks, const RealMatrix& K, const Tolerances& tol = {}) {
  require_consistent(tasks);
  return avg_gradient(solve_all(tasks, K, tol));
}

inline RealMatrix pg_step(const std::vector<Task>& tasks, const RealMatrix& K, double alpha,
                          const Tolerances& tol = {}) {
  return K - alpha * avg_gradient(tasks, K, tol);
}

namespace detail {

inline std::vector<TaskSolution> solve_all_parallel(const std::vector<Task>& tasks, const RealMatrix& K,
                                                    const Tolerances& tol, unsigned jobs) {
  std::vector<TaskSolution> sols(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) { sols[i] = solve_task(tasks[i], K, tol); });
  return sols;
}

}  // namespace detail

/// Runs K_{n+1} = K_n - alpha grad J_avg(K_n) from K0. The optimal costs
/// J*_i come from `optima` (one per task, as from dare_solve).
inline RunLog run_pg(const std::vector<Task>& tasks, const RealMatrix& K0, const PGConfig& cfg,
                     const std::vector<BoundConstants>& optima) {
  cfg.validate();
  require_consistent(tasks);
  if (optima.size() != tasks.size()) throw DimensionError("need one optimum per task");
  const Tolerances& tol = cfg.bisim.tol;
  RunLog log;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    log.task_ids.push_back(tasks[i].id);
    log.J_star.push_back(optima[i].J_star);
  }
  RealMatrix K = K0;
  for (std::size_t n = 0;; ++n) {
    std::vector<TaskSolution> sols;
    try {
      sols = detail::solve_all_parallel(tasks, K, tol, cfg.jobs);
    } catch (const InstabilityError& e) {
      throw InstabilityError("iterate " + std::to_string(n) + " destabilizes task '" + e.task_id() +
                                 "' (rho = " + std::to_string(e.rho()) + ")",
                             e.rho(), e.task_id(), n);
    }
    const RealMatrix g = avg_gradient(sols);
    const double gnorm = g.norm();
    if (!std::isfinite(gnorm)) throw NumericError("non-finite gradient at iterate " + std::to_string(n));
    const bool done = gnorm <= cfg.grad_tol || n >= cfg.max_iters;
    if (n % cfg.log_every == 0 || done) {
      IterRecord rec;
      rec.iter = n;
      rec.K = K;
      rec.grad_norm = gnorm;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        rec.J.push_back(sols[i].J);
        rec.gap.push_back(sols[i].J - optima[i].J_star);
        rec.rho_max = std::max(rec.rho_max, sols[i].rho);
      }
      if (cfg.log_bisim_every > 0 && (n % cfg.log_bisim_every == 0 || done)) {
        BisimOptions bo = cfg.bisim;
        bo.jobs = cfg.jobs;
        HeteroProfile prof = hetero_profile(tasks, sols, K, bo);
        rec.b = prof.b;
        if (done) log.final_certificates = std::move(prof.certificates);
      }
      log.records.push_back(std::move(rec));
    }
    if (done) {
      log.converged = gnorm <= cfg.grad_tol;
      log.iterations = n;
      log.K_final = K;
      log.final_grad_norm = gnorm;
      return log;
    }
    K -= cfg.alpha * g;
  }
}

inline RunLog run_pg(const std::vector<Task>& tasks, const RealMatrix& K0, const PGConfig& cfg) {
  std::vector<BoundConstants> optima;
  for (const Task& t : tasks) optima.push_back(dare_solve(t, cfg.bisim.tol));
  return run_pg(tasks, K0, cfg, optima);
}

/// J_i(K) - J*_i <= beta_i (J_i(K0) - J*_i) for each task.
inline std::vector<bool> check_stabilizing_subset(const std::vector<Task>& tasks, const RealMatrix& K,
                                                  const RealMatrix& K0, const std::vector<double>& beta,
                                                  const std::vector<BoundConstants>& optima,
                                                  const Tolerances& tol = {}) {
  if (beta.size() != tasks.size() || optima.size() != tasks.size()) {
    throw DimensionError("need one beta and one optimum per task");
  }
  std::vector<bool> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double jk = solve_task(tasks[i], K, tol).J, j0 = solve_task(tasks[i], K0, tol).J;
    out.push_back(jk - optima[i].J_star <= beta[i] * (j0 - optima[i].J_star) + 1e-12 * std::max(1.0, jk));
  }
  return out;
}

struct ConvergenceReport {
  bool step_size_ok = false;
  double step_size_limit = 0.0;  ///< min{1/(4 max L), 4/max gamma}
  double step_size_margin = 0.0; ///< limit - alpha
  std::vector<bool> heterogeneity_ok;
  std::vector<double> heterogeneity_margin;  ///< gamma (J(K0) - J*)/6 - b_sup^2
  bool incomplete = false;  ///< some estimate was missing; the affected checks are false
  bool estimates = true;    ///< L and b_sup are numerical estimates, not certified constants
};

/// Condition check from precomputed constants. Missing (empty) L or b_sup
/// marks the report incomplete rather than throwing.
inline ConvergenceReport check_convergence_conditions(double alpha, const std::vector<double>& gamma,
                                        const std::vector<double>& initial_gap, const std::vector<double>& L,
                                        const std::vector<double>& b_sup) {
  const std::size_t N = gamma.size();
  if (initial_gap.size() != N) throw DimensionError("initial_gap and gamma differ in length");
  ConvergenceReport r;
  const double gmax = *std::max_element(gamma.begin(), gamma.end());
  if (L.size() == N) {
    const double lmax = *std::max_element(L.begin(), L.end());
    r.step_size_limit = std::min(1.0 / (4.0 * lmax), 4.0 / gmax);
    r.step_size_margin = r.step_size_limit - alpha;
    r.step_size_ok = alpha < r.step_size_limit || alpha == 0.0;
  } else {
    r.incomplete = true;
    r.step_size_ok = alpha == 0.0;
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (b_sup.size() != N) {
      r.incomplete = true;
      r.heterogeneity_ok.push_back(false);
      r.heterogeneity_margin.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double margin = gamma[i] * initial_gap[i] / 6.0 - b_sup[i] * b_sup[i];
    r.heterogeneity_margin.push_back(margin);
    r.heterogeneity_ok.push_back(margin >= 0.0);
  }
  return r;
}

inline ConvergenceReport check_convergence_conditions(const std::vector<Task>& tasks, const RealMatrix& K0, double alpha,
                                        const std::vector<BoundConstants>& optima, const std::vector<double>& L,
                                        const std::vector<double>& b_sup, const Tolerances& tol = {}) {
  std::vector<double> gamma, gap0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    gamma.push_back(optima.at(i).gamma);
    gap0.push_back(solve_task(tasks[i], K0, tol).J - optima[i].J_star);
  }
  return check_convergence_conditions(alpha, gamma, gap0, L, b_sup);
}

/// Per-task estimate of the gradient Lipschitz constant: the largest
/// |second directional difference| of J_i over the sample controllers and
/// `directions` random unit directions. An estimate only.
inline std::vector<double> estimate_smoothness(const std::vector<Task>& tasks, const std::vector<RealMatrix>& samples,
                                               int directions = 10, std::uint64_t seed = 0,
                                               const Tolerances& tol = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> L(tasks.size(), 0.0);
  for (const RealMatrix& K : samples) {
    for (int d = 0; d < directions; ++d) {
      RealMatrix D(K.rows(), K.cols());
      for (Eigen::Index k = 0; k < D.size(); ++k) D.data()[k] = n01(rng);
      D /= D.norm();
      const double h = 1e-4 * std::max(1.0, K.norm());
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!is_stabilizing(tasks[i], K + h * D, tol) || !is_stabilizing(tasks[i], K - h * D, tol)) continue;
        const double jp = solve_task(tasks[i], K + h * D, tol).J, j0 = solve_task(tasks[i], K, tol).J,
                     jm = solve_task(tasks[i], K - h * D, tol).J;
        L[i] = std::max(L[i], std::fabs(jp - 2.0 * j0 + jm) / (h * h));
      }
    }
  }
  return L;
}

/// A gain K = L Y^-1 with one quadratic Lyapunov function for every closed
/// loop: maximize t subject to [[Y, (A_i Y - B_i L)'], [A_i Y - B_i L, Y]] >= tI
/// and Y <= I. Y = L = 0 always gives t = 0, so anything not clearly above
/// zero (1e-7) counts as no certificate.
inline std::optional<RealMatrix> common_lyapunov_gain(const std::vector<Task>& tasks,
                                                      const ConicSettings& settings = {}) {
  require_consistent(tasks);
  const Eigen::Index n = tasks.front().state_dim(), m = tasks.front().input_dim();
  const Eigen::Index nY = svec_size(n), nL = m * n, nv = nY + nL + 1, it = nY + nL;
  const Eigen::Index blk = svec_size(2 * n);
  auto Y_of = [&](const RealVector& x) { return smat(x.head(nY), n); };
  auto L_of = [&](const RealVector& x) { return RealMatrix(Eigen::Map<const RealMatrix>(x.data() + nY, m, n)); };
  auto block = [&](const Task& t, const RealVector& x) {
    const RealMatrix Y = Y_of(x), C = t.A * Y - t.B * L_of(x);
    RealMatrix F(2 * n, 2 * n);
    F << Y, C.transpose(), C, Y;
    return RealMatrix(F - x(it) * RealMatrix::Identity(2 * n, 2 * n));
  };
  ConicProgram p;
  p.c = RealVector::Zero(nv);
  p.c(it) = -1.0;
  const Eigen::Index rows = 1 + nY + static_cast<Eigen::Index>(tasks.size()) * blk;
  p.A = RealMatrix::Zero(rows, nv);
  p.b = RealVector::Zero(rows);
  // t <= 1
  p.A(0, it) = 1.0;
  p.b(0) = 1.0;
  // I - Y >= 0
  p.A.block(1, 0, nY, nY) = RealMatrix::Identity(nY, nY);
  p.b.segment(1, nY) = svec(RealMatrix::Identity(n, n));
  p.cones = {{ConeKind::nonnegative, 1}, {ConeKind::psd, n}};
  Eigen::Index r = 1 + nY;
  for (const Task& t : tasks) {
    const RealVector zero = RealVector::Zero(nv);
    for (Eigen::Index k = 0; k < nv; ++k) {
      RealVector e = zero;
      e(k) = 1.0;
      p.A.block(r, k, blk, 1) = -svec(block(t, e));
    }
    p.cones.push_back({ConeKind::psd, 2 * n});
    r += blk;
  }
  const ConicSolution sol = solve_conic(p, settings);
  if (sol.status != ConicStatus::optimal || !(sol.x(it) > 1e-7)) return std::nullopt;
  const RealMatrix Y = Y_of(sol.x);
  return RealMatrix(L_of(sol.x) * Y.inverse());
}

/// Tries, in order, K* of the first task, K* of the parameter-averaged task
/// and common_lyapunov_gain, returning the first that stabilizes every task.
/// Throws DomainError if none does.
inline RealMatrix initial_controller(const std::vector<Task>& tasks, const Tolerances& tol = {}) {
  require_consistent(tasks);
  auto common = [&](const RealMatrix& K) {
    return std::all_of(tasks.begin(), tasks.end(), [&](const Task& t) { return is_stabilizing(t, K, tol); });
  };
  try {
    const RealMatrix K = dare_solve(tasks.front(), tol).K_star;
    if (common(K)) return K;
  } catch (const Error&) {
  }
  Task avg = tasks.front();
  avg.id = "average";
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    avg.A += tasks[i].A;
    avg.B += tasks[i].B;
    avg.Q += tasks[i].Q;
    avg.R += tasks[i].R;
    avg.Sigma0 += tasks[i].Sigma0;
  }
  const double n = static_cast<double>(tasks.size());
  avg.A /= n;
  avg.B /= n;
  avg.Q /= n;
  avg.R /= n;
  avg.Sigma0 /= n;
  try {
    const RealMatrix K = dare_solve(avg, tol).K_star;
    if (common(K)) return K;
  } catch (const Error&) {
  }
  try {
    if (const auto K = common_lyapunov_gain(tasks); K && common(*K)) return *K;
  } catch (const Error&) {
  }
  throw DomainError("no common stabilizing initial controller found; supply K0 explicitly");
}

/// RunLog as CSV: iter,task_id,J,gap,grad_avg_norm,rho_max,b_i.
inline void write_run_csv(std::ostream& os, const RunLog& log) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "iter,task_id,J,gap,grad_avg_norm,rho_max,b_i\n";
  for (const IterRecord& r : log.records) {
    for (std::size_t i = 0; i < log.task_ids.size(); ++i) {
      os << r.iter << ',' << log.task_ids[i] << ',' << num(r.J[i]) << ',' << num(r.gap[i]) << ','
         << num(r.grad_norm) << ',' << num(r.rho_max) << ',';
      if (r.b) os << num((*r.b)[i]);
      os << '\n';
    }
  }
}

}  // namespace mtlqr
