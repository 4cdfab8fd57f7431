#pragma once

// Ground-truth gradient gaps between tasks under a shared controller, and the
// parameter-deviation statistics used by model-based heterogeneity measures.

#include <algorithm>
#include <functional>
#include <vector>

#include "mtlqr/lqr.hpp"
#include "mtlqr/matops.hpp"

namespace mtlqr {

/// Max pairwise spectral-norm distance of each task parameter.
struct DeviationBounds {
  double b_A = 0.0;
  double b_B = 0.0;
  double b_Q = 0.0;
  double b_R = 0.0;
};

inline void require_consistent(const std::vector<Task>& tasks) {
  if (tasks.empty()) throw DimensionError("need at least one task");
  for (const Task& t : tasks) {
    validate_task(t);
    if (t.state_dim() != tasks.front().state_dim() || t.input_dim() != tasks.front().input_dim()) {
      throw DimensionError("task '" + t.id + "' has dimensions different from task '" + tasks.front().id + "'");
    }
  }
}

inline DeviationBounds deviation_bounds(const std::vector<Task>& tasks) {
  require_consistent(tasks);
  DeviationBounds d;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      d.b_A = std::max(d.b_A, spectral_norm(tasks[i].A - tasks[j].A));
      d.b_B = std::max(d.b_B, spectral_norm(tasks[i].B - tasks[j].B));
      d.b_Q = std::max(d.b_Q, spectral_norm(tasks[i].Q - tasks[j].Q));
      d.b_R = std::max(d.b_R, spectral_norm(tasks[i].R - tasks[j].R));
    }
  }
  return d;
}

inline std::vector<TaskSolution> solve_all(const std::vector<Task>& tasks, const RealMatrix& K,
                                           const Tolerances& tol = {}) {
  std::vector<TaskSolution> out;
  out.reserve(tasks.size());
  for (const Task& t : tasks) out.push_back(solve_task(t, K, tol));
  return out;
}

/// g_ij = ||grad_i - grad_j||_F from precomputed solutions.
inline RealMatrix pairwise_gaps(const std::vector<TaskSolution>& sols) {
  const auto n = static_cast<Eigen::Index>(sols.size());
  RealMatrix g = RealMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) g(i, j) = g(j, i) = (sols[i].grad - sols[j].grad).norm();
  return g;
}

inline RealMatrix pairwise_gaps(const std::vector<Task>& tasks, const RealMatrix& K, const Tolerances& tol = {}) {
  require_consistent(tasks);
  return pairwise_gaps(solve_all(tasks, K, tol));
}

/// ||grad_i - grad_avg||_F for each task.
inline std::vector<double> gradient_deviation(const std::vector<TaskSolution>& sols) {
  RealMatrix avg = RealMatrix::Zero(sols.front().grad.rows(), sols.front().grad.cols());
  for (const auto& s : sols) avg += s.grad;
  avg /= static_cast<double>(sols.size());
  std::vector<double> out;
  for (const auto& s : sols) out.push_back((s.grad - avg).norm());
  return out;
}

/// Caller-supplied model-based heterogeneity measure, evaluated on a
/// collection at a controller. The library ships no implementation.
using BaselineMeasure =
    std::function<double(const DeviationBounds&, const RealMatrix& K, const std::vector<Task>& tasks)>;

}  // namespace mtlqr
