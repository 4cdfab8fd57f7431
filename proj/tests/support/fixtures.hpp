#pragma once

#include <random>
#include <string>
#include <vector>

#include "mtlqr/lqr.hpp"
#include "support/oracles.hpp"

namespace fixtures {

using mtlqr::RealMatrix;
using mtlqr::Task;

inline Task scalar_task(double a, double b, double q, double r, double s0, std::string id = "s") {
  return Task{std::move(id), RealMatrix{{a}}, RealMatrix{{b}}, RealMatrix{{q}}, RealMatrix{{r}},
              RealMatrix{{s0}}};
}

/// Random task with d_x states and d_u inputs; A has spectral radius in
/// [0.5, 1.3] so some tasks are open-loop unstable.
inline Task random_task(std::mt19937_64& rng, int dx, int du, const std::string& id) {
  std::uniform_real_distribution<double> radius(0.5, 1.3);
  Task t;
  t.id = id;
  t.A = oracle::random_with_radius(rng, dx, radius(rng));
  t.B = oracle::random_matrix(rng, dx, du);
  t.Q = oracle::random_spd(rng, dx);
  t.R = oracle::random_spd(rng, du);
  t.Sigma0 = oracle::random_spd(rng, dx);
  return t;
}

/// Perturbs K until it stabilizes every task with closed-loop radius at most
/// rho_cap. Returns false when no such perturbation was found.
inline bool random_common_gain(std::mt19937_64& rng, const std::vector<Task>& tasks, const RealMatrix& center,
                               double scale, double rho_cap, RealMatrix& K) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    K = center + oracle::random_matrix(rng, center.rows(), center.cols(), scale);
    bool ok = true;
    for (const auto& t : tasks) {
      if (oracle::reference_spectral_radius(t.A - t.B * K) > rho_cap) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
    scale *= 0.8;
  }
  return false;
}

/// Random (task, K) with K stabilizing: K is the task optimum plus noise.
inline std::pair<Task, RealMatrix> random_stabilized(std::mt19937_64& rng, int dx, int du, double rho_cap = 0.95) {
  for (;;) {
    Task t = random_task(rng, dx, du, "rand");
    const auto opt = mtlqr::dare_solve(t);
    RealMatrix K;
    if (random_common_gain(rng, {t}, opt.K_star, 0.3, rho_cap, K)) return {t, K};
  }
}

/// Two tasks that share a random stabilizing controller: the second is a
/// perturbation of the first.
inline std::tuple<Task, Task, RealMatrix> random_pair(std::mt19937_64& rng, int dx, int du, double spread = 0.2,
                                                      double rho_cap = 0.95) {
  for (;;) {
    Task a = random_task(rng, dx, du, "i");
    Task b = a;
    b.id = "j";
    b.A += oracle::random_matrix(rng, dx, dx, spread);
    b.B += oracle::random_matrix(rng, dx, du, spread);
    b.Q = oracle::random_spd(rng, dx);
    b.R = oracle::random_spd(rng, du);
    b.Sigma0 = oracle::random_spd(rng, dx);
    const auto opt = mtlqr::dare_solve(a);
    RealMatrix K;
    if (random_common_gain(rng, {a, b}, opt.K_star, 0.2, rho_cap, K)) return {a, b, K};
  }
}

}  // namespace fixtures
