#pragma once

// Single-task discrete-time LQR quantities for static state feedback
// u = -K x: value and covariance matrices, average cost, exact gradient,
// the task optimum and the constants that enter the suboptimality bounds.

#include <cmath>
#include <string>

#include "mtlqr/errors.hpp"
#include "mtlqr/matops.hpp"

namespace mtlqr {

/// One LQR task (A, B, Q, R) with initial-state covariance Sigma0.
struct Task {
  std::string id;
  RealMatrix A;       ///< d_x x d_x
  RealMatrix B;       ///< d_x x d_u
  RealMatrix Q;       ///< d_x x d_x, symmetric PSD
  RealMatrix R;       ///< d_u x d_u, symmetric PD
  RealMatrix Sigma0;  ///< d_x x d_x, symmetric PD

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
};

/// Quantities derived from a (task, controller) pair.
struct TaskSolution {
  RealMatrix P;      ///< cost-to-go, X = A_K' X A_K + Q + K'RK
  RealMatrix Sigma;  ///< accumulated covariance, X = A_K X A_K' + Sigma0
  RealMatrix E;      ///< 2((R + B'PB)K - B'PA)
  double J = 0.0;    ///< trace(P Sigma0)
  RealMatrix grad;   ///< E Sigma
  double rho = 0.0;  ///< spectral radius of A - BK
};

/// Task optimum and the constants of the gradient-dominance inequality.
struct BoundConstants {
  double gamma = 0.0;            ///< 4 lam_min(Sigma0)^2 sig_min(R) / ||Sigma_{K*}||
  double sigma_star_norm = 0.0;  ///< ||Sigma_{K*}|| (spectral)
  double lam_min_Sigma0 = 0.0;
  double sig_min_R = 0.0;
  double J_star = 0.0;
  RealMatrix K_star;
  RealMatrix P_star;
  std::size_t riccati_iterations = 0;
};

/// Checks dimensions and the Task invariants; throws on violation.
inline void validate_task(const Task& t) {
  const auto n = t.A.rows();
  const std::string who = "task '" + t.id + "'";
  if (t.A.cols() != n || t.B.rows() != n || t.Q.rows() != n || t.Q.cols() != n ||
      t.Sigma0.rows() != n || t.Sigma0.cols() != n || t.R.rows() != t.B.cols() ||
      t.R.cols() != t.B.cols()) {
    throw DimensionError(who + ": inconsistent matrix dimensions");
  }
  if (n == 0 || t.B.cols() == 0) throw DimensionError(who + ": empty state or input");
  for (const RealMatrix* m : {&t.A, &t.B, &t.Q, &t.R, &t.Sigma0}) require_finite(*m, who.c_str());
  if (asymmetry(t.Q) > 1e-12 || asymmetry(t.R) > 1e-12 || asymmetry(t.Sigma0) > 1e-12) {
    throw DomainError(who + ": Q, R and Sigma0 must be symmetric");
  }
  if (min_eig_sym(t.Q) < -1e-12 * (1.0 + t.Q.norm())) throw DomainError(who + ": Q is not PSD");
  if (!(min_eig_sym(t.R) > 0.0)) throw DomainError(who + ": R is not positive definite");
  if (!(min_eig_sym(t.Sigma0) > 0.0)) throw DomainError(who + ": Sigma0 is not positive definite");
}

inline void require_gain_shape(const Task& task, const RealMatrix& K) {
  if (K.rows() != task.input_dim() || K.cols() != task.state_dim()) {
    throw DimensionError("controller is " + std::to_string(K.rows()) + "x" + std::to_string(K.cols()) +
                         ", task '" + task.id + "' needs " + std::to_string(task.input_dim()) + "x" +
                         std::to_string(task.state_dim()));
  }
}

inline RealMatrix closed_loop(const Task& task, const RealMatrix& K) {
  require_gain_shape(task, K);
  return task.A - task.B * K;
}

inline bool is_stabilizing(const Task& task, const RealMatrix& K, const Tolerances& tol = {}) {
  return spectral_radius(closed_loop(task, K)) < 1.0 - tol.stability_margin;
}

inline TaskSolution solve_task(const Task& task, const RealMatrix& K, const Tolerances& tol = {}) {
  const RealMatrix Ak = closed_loop(task, K);
  TaskSolution sol;
  sol.rho = spectral_radius(Ak);
  if (!(sol.rho < 1.0 - tol.stability_margin)) {
    throw InstabilityError("controller does not stabilize task '" + task.id +
                               "' (rho = " + std::to_string(sol.rho) + ")",
                           sol.rho, task.id);
  }
  sol.P = solve_dlyap(Ak, symmetrized(task.Q + K.transpose() * task.R * K), LyapunovForm::cost, tol);
  sol.Sigma = solve_dlyap(Ak, task.Sigma0, LyapunovForm::state, tol);
  sol.E = 2.0 * ((task.R + task.B.transpose() * sol.P * task.B) * K - task.B.transpose() * sol.P * task.A);
  sol.J = (sol.P * task.Sigma0).trace();
  sol.grad = sol.E * sol.Sigma;
  if (!std::isfinite(sol.J) || !sol.grad.allFinite()) {
    throw NumericError("non-finite cost or gradient for task '" + task.id + "'");
  }
  return sol;
}

/// Task-optimal controller by fixed-point Riccati iteration from P0 = Q,
/// plus the gradient-dominance constants at that optimum.
inline BoundConstants dare_solve(const Task& task, const Tolerances& tol = {},
                                 std::size_t max_iters = 100000, double rel_tol = 1e-13) {
  const RealMatrix& A = task.A;
  const RealMatrix& B = task.B;
  const RealMatrix& R = task.R;
  RealMatrix P = task.Q;
  BoundConstants out;
  bool converged = false;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const RealMatrix BtP = B.transpose() * P;
    const RealMatrix gain = (R + BtP * B).ldlt().solve(BtP * A);
    RealMatrix next = symmetrized(A.transpose() * P * A - (BtP * A).transpose() * gain + task.Q);
    if (!next.allFinite()) break;
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (std::isfinite(change) && change <= rel_tol * std::max(1.0, P.cwiseAbs().maxCoeff())) {
      converged = true;
      out.riccati_iterations = it;
      break;
    }
  }
  if (!converged) {
    throw NonStabilizableError("Riccati iteration did not converge for task '" + task.id +
                               "'; (A, B) treated as not stabilizable");
  }
  const RealMatrix BtP = B.transpose() * P;
  out.K_star = (R + BtP * B).ldlt().solve(BtP * A);
  out.P_star = P;
  if (!is_stabilizing(task, out.K_star, tol)) {
    throw NonStabilizableError("Riccati fixed point for task '" + task.id + "' does not stabilize");
  }
  const TaskSolution at_opt = solve_task(task, out.K_star, tol);
  out.J_star = at_opt.J;
  out.sigma_star_norm = max_eig_sym(at_opt.Sigma);
  out.lam_min_Sigma0 = min_eig_sym(task.Sigma0);
  out.sig_min_R = min_eig_sym(task.R);
  out.gamma = 4.0 * out.lam_min_Sigma0 * out.lam_min_Sigma0 * out.sig_min_R / out.sigma_star_norm;
  return out;
}

/// Riccati residual ||P - A'PA + A'PB(R+B'PB)^{-1}B'PA - Q||_F.
inline double riccati_residual(const Task& task, const RealMatrix& P) {
  const RealMatrix BtP = task.B.transpose() * P;
  const RealMatrix gain = (task.R + BtP * task.B).ldlt().solve(BtP * task.A);
  return (P - task.A.transpose() * P * task.A + (BtP * task.A).transpose() * gain - task.Q).norm();
}

}  // namespace mtlqr
