#pragma once

// Bisimulation certificates for pairs of closed-loop covariance systems and
// the heterogeneity measures built from them.
//
// For tasks i, j under a shared K the pair system has state
// diag(Sigma_i, Sigma_j), dynamics A = diag(A_K^i, A_K^j) and output map
// E = [E_K^i, -E_K^j]. A certificate (M, lambda) satisfies
//
//   M >= E'E,    A'MA <= (1 - lambda) M,
//
// and bounds the gradient gap by sqrt(2) tr(M Sigma0) / (lambda sqrt(lambda_min(M))).

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mtlqr/conic.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/hetero_baseline.hpp"
#include "mtlqr/lqr.hpp"
#include "mtlqr/matops.hpp"
#include "mtlqr/parallel.hpp"

namespace mtlqr {

struct PairSystem {
  std::string id_i, id_j;
  RealMatrix A;       ///< 2dx x 2dx, block diagonal
  RealMatrix E;       ///< du x 2dx, [E_i, -E_j]
  RealMatrix Sigma0;  ///< 2dx x 2dx, block diagonal
  double rho = 0.0;   ///< spectral radius of A

  Eigen::Index state_dim() const { return A.rows() / 2; }
  RealMatrix E_i() const { return E.leftCols(state_dim()); }
  RealMatrix E_j() const { return -E.rightCols(state_dim()); }
};

enum class CertMode { constructive, optimized, best };

inline const char* to_string(CertMode m) {
  switch (m) {
    case CertMode::constructive: return "constructive";
    case CertMode::optimized: return "optimized";
    case CertMode::best: return "best";
  }
  return "?";
}

inline CertMode parse_cert_mode(const std::string& s) {
  if (s == "constructive") return CertMode::constructive;
  if (s == "optimized") return CertMode::optimized;
  if (s == "best") return CertMode::best;
  throw DomainError("unknown certificate mode '" + s + "' (expected constructive, optimized or best)");
}

struct Certificate {
  std::string i, j;
  RealMatrix M;
  double lambda = 0.0;
  double value = 0.0;
  CertMode method = CertMode::constructive;  ///< constructive or optimized
  double feas_slack = 0.0;
  bool fallback = false;  ///< optimized mode failed and the constructive one was used
  std::string note;
};

inline RealMatrix block_diag(const RealMatrix& X, const RealMatrix& Y) {
  RealMatrix D = RealMatrix::Zero(X.rows() + Y.rows(), X.cols() + Y.cols());
  D.topLeftCorner(X.rows(), X.cols()) = X;
  D.bottomRightCorner(Y.rows(), Y.cols()) = Y;
  return D;
}

inline PairSystem build_pair(const Task& ti, const TaskSolution& si, const Task& tj, const TaskSolution& sj,
                             const RealMatrix& K) {
  PairSystem p;
  p.id_i = ti.id;
  p.id_j = tj.id;
  p.A = block_diag(closed_loop(ti, K), closed_loop(tj, K));
  p.E.resize(si.E.rows(), 2 * ti.state_dim());
  p.E << si.E, -sj.E;
  p.Sigma0 = block_diag(ti.Sigma0, tj.Sigma0);
  p.rho = std::max(si.rho, sj.rho);
  return p;
}

inline PairSystem build_pair(const Task& ti, const Task& tj, const RealMatrix& K, const Tolerances& tol = {}) {
  if (ti.state_dim() != tj.state_dim() || ti.input_dim() != tj.input_dim()) {
    throw DimensionError("tasks '" + ti.id + "' and '" + tj.id + "' have different dimensions");
  }
  return build_pair(ti, solve_task(ti, K, tol), tj, solve_task(tj, K, tol), K);
}

/// lambda = (1 - rho^2)(1 - eps_frac).
inline double lambda_for_pair(const PairSystem& pair, double eps_frac) {
  if (!(eps_frac > 0.0 && eps_frac < 1.0)) throw DomainError("eps_frac must lie in (0, 1)");
  if (!(pair.rho < 1.0)) {
    throw InstabilityError("pair (" + pair.id_i + ", " + pair.id_j + ") is not stable", pair.rho, pair.id_i);
  }
  return (1.0 - pair.rho * pair.rho) * (1.0 - eps_frac);
}

/// sqrt(2) tr(M diag(Sig_i, Sig_j)) / sqrt(lambda_min(M)).
inline double bisim_value(const RealMatrix& M, const RealMatrix& Sig_i, const RealMatrix& Sig_j) {
  const double lmin = min_eig_sym(M);
  if (!(lmin > 0.0)) throw DomainError("certificate matrix is not positive definite");
  const Eigen::Index n = Sig_i.rows();
  const double tr = (M.topLeftCorner(n, n) * Sig_i).trace() + (M.bottomRightCorner(n, n) * Sig_j).trace();
  return std::sqrt(2.0) * tr / std::sqrt(lmin);
}

inline double certificate_value(const PairSystem& pair, const RealMatrix& M, double lambda) {
  const Eigen::Index n = pair.state_dim();
  return bisim_value(M, pair.Sigma0.topLeftCorner(n, n), pair.Sigma0.bottomRightCorner(n, n)) / lambda;
}

/// V along the pair trajectory grows at most like this from V(Sigma0) = v0.
inline double recursion_bound(double v0, double lambda, int t) {
  const double decay = std::pow(1.0 - lambda, t);
  return decay * v0 + (1.0 - decay) / lambda * v0;
}

/// Largest LMI violation of (M, lambda), relative to max(1, ||M||_F).
inline double lmi_violation(const PairSystem& pair, const RealMatrix& M, double lambda) {
  const RealMatrix Ms = symmetrized(M);
  const double v_out = std::max(0.0, -min_eig_sym(symmetrized(Ms - pair.E.transpose() * pair.E)));
  const double v_dec =
      std::max(0.0, max_eig_sym(symmetrized(pair.A.transpose() * Ms * pair.A - (1.0 - lambda) * Ms)));
  const double v_pd = std::max(0.0, -min_eig_sym(Ms));
  return std::max({v_out, v_dec, v_pd}) / std::max(1.0, Ms.norm());
}

struct CertificateCheck {
  double feas_slack = 0.0;
  bool output_bound_ok = true;   ///< V >= ||E_i S_i - E_j S_j||_F on sampled states
  bool decrease_ok = true;       ///< V(t+1) - V(t) <= -lambda V(t) + V(Sigma0) along the trajectory
  double worst_output_margin = 0.0;
  double worst_decrease_margin = 0.0;
};

/// Checks the LMIs and, on sampled states and one trajectory, the two
/// defining inequalities of a bisimulation function.
inline CertificateCheck validate_certificate(const PairSystem& pair, const Certificate& cert, int samples = 20,
                                             int horizon = 200) {
  CertificateCheck chk;
  chk.feas_slack = lmi_violation(pair, cert.M, cert.lambda);
  const Eigen::Index n = pair.state_dim();
  const RealMatrix Ei = pair.E_i(), Ej = pair.E_j();
  const double lmin = min_eig_sym(symmetrized(cert.M));
  if (!(lmin > 0.0)) {
    chk.output_bound_ok = chk.decrease_ok = false;
    chk.feas_slack = std::max(chk.feas_slack, 1.0);
    return chk;
  }
  const RealMatrix M = symmetrized(cert.M);
  auto V = [&](const RealMatrix& Si, const RealMatrix& Sj) { return bisim_value(M, Si, Sj); };

  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> n01(0.0, 1.0);
  chk.worst_output_margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    RealMatrix Gi(n, n), Gj(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b) {
        Gi(a, b) = n01(rng);
        Gj(a, b) = n01(rng);
      }
    const RealMatrix Si = Gi * Gi.transpose(), Sj = Gj * Gj.transpose();
    const double v = V(Si, Sj), out = (Ei * Si - Ej * Sj).norm();
    const double margin = v - out;
    chk.worst_output_margin = std::min(chk.worst_output_margin, margin / std::max(1.0, v));
    if (margin < -1e-9 * std::max(1.0, v)) chk.output_bound_ok = false;
  }

  const RealMatrix S0i = pair.Sigma0.topLeftCorner(n, n), S0j = pair.Sigma0.bottomRightCorner(n, n);
  const RealMatrix Ai = pair.A.topLeftCorner(n, n), Aj = pair.A.bottomRightCorner(n, n);
  const double v0 = V(S0i, S0j);
  RealMatrix Si = S0i, Sj = S0j;
  double vt = v0;
  chk.worst_decrease_margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < horizon; ++t) {
    Si = symmetrized(Ai * Si * Ai.transpose() + S0i);
    Sj = symmetrized(Aj * Sj * Aj.transpose() + S0j);
    const double vn = V(Si, Sj);
    const double margin = (-cert.lambda * vt + v0) - (vn - vt);
    chk.worst_decrease_margin = std::min(chk.worst_decrease_margin, margin / std::max(1.0, vn));
    if (margin < -1e-9 * std::max(1.0, vn)) chk.decrease_ok = false;
    vt = vn;
  }
  return chk;
}

/// Feasible certificate from a Lyapunov solve for the rate-scaled dynamics.
inline Certificate constructive_certificate(const PairSystem& pair, double lambda, const Tolerances& tol = {}) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("lambda must lie in (0, 1)");
  const RealMatrix Al = pair.A / std::sqrt(1.0 - lambda);
  const double rho_l = pair.rho / std::sqrt(1.0 - lambda);
  if (!(rho_l < 1.0 - tol.stability_margin)) {
    throw InfeasibleError("lambda = " + std::to_string(lambda) + " exceeds 1 - rho^2 for pair (" + pair.id_i +
                          ", " + pair.id_j + ")");
  }
  const RealMatrix EtE = symmetrized(pair.E.transpose() * pair.E);
  const Eigen::Index D = pair.A.rows();
  const RealMatrix Lam = symmetrized(Al.transpose() * EtE * Al) +
                         tol.psd_slack * (1.0 + EtE.norm()) * RealMatrix::Identity(D, D);
  Tolerances loose = tol;
  loose.stability_margin = std::min(tol.stability_margin, 0.5 * (1.0 - rho_l));
  const RealMatrix Mbar = solve_dlyap(Al, Lam, LyapunovForm::cost, loose);
  Certificate c;
  c.i = pair.id_i;
  c.j = pair.id_j;
  c.M = symmetrized(Mbar + EtE);
  c.lambda = lambda;
  c.method = CertMode::constructive;
  c.value = certificate_value(pair, c.M, lambda);
  c.feas_slack = lmi_violation(pair, c.M, lambda);
  return c;
}

/// The certificate program in scaled variables (svec(M), s, u) / scale.
struct CertificateProgram {
  ConicProgram program;
  double scale = 1.0;
  Eigen::Index side = 0;

  RealMatrix M_from(const RealVector& x) const { return scale * smat(x.head(svec_size(side)), side); }
};

inline CertificateProgram build_certificate_program(const PairSystem& pair, double lambda, double eps_s) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("lambda must lie in (0, 1)");
  if (!(eps_s > 0.0)) throw DomainError("eps_s must be positive");
  const Eigen::Index D = pair.A.rows(), nm = svec_size(D), nv = nm + 2;
  const Eigen::Index is = nm, iu = nm + 1;
  const RealMatrix EtE = symmetrized(pair.E.transpose() * pair.E);
  CertificateProgram cp;
  cp.side = D;
  cp.scale = std::max(eps_s, EtE.norm());
  const double sc = cp.scale;

  // Column k of the svec basis as a symmetric matrix.
  std::vector<RealMatrix> basis(nm);
  for (Eigen::Index k = 0; k < nm; ++k) {
    RealVector unit = RealVector::Zero(nm);
    unit(k) = 1.0;
    basis[k] = smat(unit, D);
  }
  const Eigen::Index rows = 3 + 1 + 3 * nm;
  ConicProgram& p = cp.program;
  p.c = RealVector::Zero(nv);
  p.c(iu) = 1.0;
  p.A = RealMatrix::Zero(rows, nv);
  p.b = RealVector::Zero(rows);

  // SOC: (u + s, sqrt(2) tr(M Sigma0) / lambda, u - s).
  const RealVector tr_row = svec(pair.Sigma0) * (std::sqrt(2.0) / lambda);
  p.A(0, is) = -1.0;
  p.A(0, iu) = -1.0;
  p.A.block(1, 0, 1, nm) = -tr_row.transpose();
  p.A(2, is) = 1.0;
  p.A(2, iu) = -1.0;
  // s >= eps_s
  p.A(3, is) = -1.0;
  p.b(3) = -eps_s / sc;
  Eigen::Index r = 4;
  // M - s I >= 0
  const RealVector svec_I = svec(RealMatrix::Identity(D, D));
  p.A.block(r, 0, nm, nm) = -RealMatrix::Identity(nm, nm);
  p.A.block(r, is, nm, 1) = svec_I;
  r += nm;
  // M - E'E / scale >= 0
  p.A.block(r, 0, nm, nm) = -RealMatrix::Identity(nm, nm);
  p.b.segment(r, nm) = -svec(EtE / sc);
  r += nm;
  // (1 - lambda) M - A'MA >= 0
  for (Eigen::Index k = 0; k < nm; ++k) {
    p.A.block(r, k, nm, 1) = -svec((1.0 - lambda) * basis[k] - pair.A.transpose() * basis[k] * pair.A);
  }
  p.cones = {{ConeKind::second_order, 3}, {ConeKind::nonnegative, 1}, {ConeKind::psd, D}, {ConeKind::psd, D},
             {ConeKind::psd, D}};
  return cp;
}

/// Solves the certificate program at a fixed lambda. Throws NumericError when
/// the solver does not reach an acceptable optimum.
inline Certificate optimized_certificate(const PairSystem& pair, double lambda, const Tolerances& tol = {},
                                         const ConicSettings& settings = {}) {
  const CertificateProgram cp = build_certificate_program(pair, lambda, tol.eps_s);
  const ConicSolution sol = solve_conic(cp.program, settings);
  if (sol.status != ConicStatus::optimal) {
    throw NumericError(std::string("certificate program for pair (") + pair.id_i + ", " + pair.id_j +
                       ") ended with status " + to_string(sol.status));
  }
  Certificate c;
  c.i = pair.id_i;
  c.j = pair.id_j;
  c.M = symmetrized(cp.M_from(sol.x));
  c.lambda = lambda;
  c.method = CertMode::optimized;
  if (!(min_eig_sym(c.M) > 0.0)) throw NumericError("certificate program returned a singular M");
  c.value = certificate_value(pair, c.M, lambda);
  c.feas_slack = lmi_violation(pair, c.M, lambda);
  return c;
}

struct BisimOptions {
  CertMode mode = CertMode::best;
  Tolerances tol;
  int lambda_grid = 0;  ///< extra lambda values tried in (0, 1 - rho^2); 0 = fixed lambda only
  double max_feas_slack = 1e-6;
  ConicSettings conic;
  unsigned jobs = 1;
};

namespace detail {

inline Certificate certify_at(const PairSystem& pair, double lambda, const BisimOptions& opt) {
  if (opt.mode == CertMode::constructive) return constructive_certificate(pair, lambda, opt.tol);
  Certificate opt_cert;
  std::string failure;
  try {
    opt_cert = optimized_certificate(pair, lambda, opt.tol, opt.conic);
    if (opt_cert.feas_slack > opt.max_feas_slack) failure = "optimized certificate violates the LMIs";
  } catch (const Error& e) {
    failure = e.what();
  }
  if (!failure.empty()) {
    Certificate c = constructive_certificate(pair, lambda, opt.tol);
    c.fallback = opt.mode == CertMode::optimized;
    c.note = failure;
    return c;
  }
  if (opt.mode == CertMode::optimized) return opt_cert;
  const Certificate con = constructive_certificate(pair, lambda, opt.tol);
  return con.value < opt_cert.value ? con : opt_cert;
}

}  // namespace detail

inline Certificate certify_pair(const PairSystem& pair, const BisimOptions& opt = {}) {
  const double lam0 = lambda_for_pair(pair, opt.tol.eps_lambda_frac);
  Certificate best = detail::certify_at(pair, lam0, opt);
  const double top = 1.0 - pair.rho * pair.rho;
  for (int g = 1; g <= opt.lambda_grid; ++g) {
    const double lam = top * static_cast<double>(g) / static_cast<double>(opt.lambda_grid + 1);
    try {
      Certificate c = detail::certify_at(pair, lam, opt);
      if (c.value < best.value) best = std::move(c);
    } catch (const InfeasibleError&) {
    }
  }
  const CertificateCheck chk = validate_certificate(pair, best);
  best.feas_slack = chk.feas_slack;
  if (chk.feas_slack > opt.max_feas_slack || !chk.output_bound_ok || !chk.decrease_ok) {
    throw ValidationError("certificate for pair (" + pair.id_i + ", " + pair.id_j +
                          ") failed validation (feas_slack = " + std::to_string(chk.feas_slack) + ")");
  }
  return best;
}

inline Certificate certify_pair(const Task& ti, const Task& tj, const RealMatrix& K, const BisimOptions& opt = {}) {
  return certify_pair(build_pair(ti, tj, K, opt.tol), opt);
}

struct HeteroProfile {
  std::vector<double> b;                  ///< b_i, one per task
  RealMatrix b_pair;                      ///< symmetric b_ij, zero diagonal
  std::vector<Certificate> certificates;  ///< one per unordered pair, i < j
};

/// b_i = (1/N) sum_{j != i} b_ij, each unordered pair certified once.
inline HeteroProfile hetero_profile(const std::vector<Task>& tasks, const std::vector<TaskSolution>& sols,
                                    const RealMatrix& K, const BisimOptions& opt = {}) {
  const std::size_t N = tasks.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) pairs.emplace_back(i, j);
  HeteroProfile out;
  out.certificates.resize(pairs.size());
  parallel_for(pairs.size(), opt.jobs, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    out.certificates[k] = certify_pair(build_pair(tasks[i], sols[i], tasks[j], sols[j], K), opt);
  });
  out.b_pair = RealMatrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    out.b_pair(i, j) = out.b_pair(j, i) = out.certificates[k].value;
  }
  out.b.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) out.b[i] = out.b_pair.row(i).sum() / static_cast<double>(N);
  return out;
}

inline HeteroProfile hetero_profile(const std::vector<Task>& tasks, const RealMatrix& K, const BisimOptions& opt = {}) {
  require_consistent(tasks);
  return hetero_profile(tasks, solve_all(tasks, K, opt.tol), K, opt);
}

}  // namespace mtlqr
