#include "mtlqr/conic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "support/oracles.hpp"

namespace mtlqr {
namespace {

ConicProgram lp_x_ge_1() {
  ConicProgram p;
  p.c = RealVector::Ones(1);
  p.A = RealMatrix::Constant(1, 1, -1.0);
  p.b = RealVector::Constant(1, -1.0);
  p.cones = {{ConeKind::nonnegative, 1}};
  return p;
}

// min trace(M) s.t. M - diag(1,2) psd, variables svec(M).
ConicProgram psd_trace() {
  ConicProgram p;
  p.c = svec(RealMatrix::Identity(2, 2));
  p.A = -RealMatrix::Identity(3, 3);
  p.b = -svec(RealMatrix(RealVector::LinSpaced(2, 1.0, 2.0).asDiagonal()));
  p.cones = {{ConeKind::psd, 2}};
  return p;
}

TEST(Svec, RoundTripAndInnerProduct) {
  std::mt19937_64 rng(1);
  for (int n = 1; n <= 5; ++n) {
    RealMatrix X = oracle::random_matrix(rng, n, n), Y = oracle::random_matrix(rng, n, n);
    X = symmetrized(X);
    Y = symmetrized(Y);
    EXPECT_LT((smat(svec(X), n) - X).norm(), 1e-14);
    EXPECT_NEAR(svec(X).dot(svec(Y)), (X * Y).trace(), 1e-12);
  }
  EXPECT_EQ(svec_size(4), 10);
}

TEST(SolveConic, LinearProgram) {
  const auto sol = solve_conic(lp_x_ge_1());
  EXPECT_EQ(sol.status, ConicStatus::optimal);
  EXPECT_NEAR(sol.x(0), 1.0, 1e-8);
  EXPECT_LE(check_solution(lp_x_ge_1(), sol.x), 1e-8);
}

TEST(SolveConic, SecondOrderNorm) {
  // variables (t); rows (t, 3, 4) in SOC.
  ConicProgram p;
  p.c = RealVector::Ones(1);
  p.A = RealMatrix::Zero(3, 1);
  p.A(0, 0) = -1.0;
  p.b = RealVector::Zero(3);
  p.b << 0.0, 3.0, 4.0;
  p.cones = {{ConeKind::second_order, 3}};
  const auto sol = solve_conic(p);
  EXPECT_EQ(sol.status, ConicStatus::optimal);
  EXPECT_NEAR(sol.x(0), 5.0, 1e-7);
}

TEST(SolveConic, PsdTrace) {
  const auto sol = solve_conic(psd_trace());
  EXPECT_EQ(sol.status, ConicStatus::optimal);
  EXPECT_NEAR(sol.objective, 3.0, 1e-7);
  EXPECT_LE(sol.primal_residual, 1e-8);
}

TEST(CheckSolution, Examples) {
  EXPECT_NEAR(check_solution(lp_x_ge_1(), RealVector::Constant(1, 0.9)), 0.1, 1e-14);
  EXPECT_EQ(check_solution(lp_x_ge_1(), RealVector::Constant(1, 1.1)), 0.0);
  const RealVector M = svec(RealMatrix(RealVector::LinSpaced(2, 0.5, 2.0).asDiagonal()));
  EXPECT_NEAR(check_solution(psd_trace(), M), 0.5, 1e-14);
  EXPECT_THROW(check_solution(lp_x_ge_1(), RealVector::Zero(2)), DimensionError);
}

TEST(SolveConic, EqualitiesAndMixedCones) {
  // min x0 + x1 + x2 s.t. x0 + x1 = 2 (zero cone), x >= 0, ||(x1, x2)|| <= x0.
  ConicProgram p;
  p.c = RealVector::Ones(3);
  p.A = RealMatrix::Zero(7, 3);
  p.b = RealVector::Zero(7);
  p.A.row(0) << 1, 1, 0;
  p.b(0) = 2.0;
  p.A.block(1, 0, 3, 3) = -RealMatrix::Identity(3, 3);
  p.A.block(4, 0, 3, 3) = -RealMatrix::Identity(3, 3);
  p.cones = {{ConeKind::zero, 1}, {ConeKind::nonnegative, 3}, {ConeKind::second_order, 3}};
  const auto sol = solve_conic(p);
  ASSERT_EQ(sol.status, ConicStatus::optimal);
  // x2 = 0 and x1 <= x0 with x0 + x1 = 2: cost 2 for any split.
  EXPECT_NEAR(sol.objective, 2.0, 1e-7);
  EXPECT_LE(sol.primal_residual, 1e-7);
}

TEST(SolveConic, InfeasibleAndUnbounded) {
  ConicProgram infeasible;  // x >= 1 and x <= 0
  infeasible.c = RealVector::Ones(1);
  infeasible.A = RealMatrix(2, 1);
  infeasible.A << -1, 1;
  infeasible.b = RealVector(2);
  infeasible.b << -1, 0;
  infeasible.cones = {{ConeKind::nonnegative, 2}};
  EXPECT_EQ(solve_conic(infeasible).status, ConicStatus::infeasible);

  ConicProgram unbounded = lp_x_ge_1();  // min -x s.t. x >= 1
  unbounded.c(0) = -1.0;
  EXPECT_EQ(solve_conic(unbounded).status, ConicStatus::unbounded);
}

TEST(SolveConic, RejectsMalformed) {
  ConicProgram p = lp_x_ge_1();
  p.cones = {{ConeKind::nonnegative, 2}};
  EXPECT_THROW(solve_conic(p), DimensionError);
}

// Random point strictly inside the cone product.
RealVector interior_point(std::mt19937_64& rng, const std::vector<Cone>& cones) {
  Eigen::Index rows = 0;
  for (const Cone& k : cones) rows += k.rows();
  RealVector v(rows);
  Eigen::Index off = 0;
  for (const Cone& k : cones) {
    const Eigen::Index r = k.rows();
    if (k.kind == ConeKind::psd) {
      v.segment(off, r) = svec(oracle::random_spd(rng, k.size));
    } else if (k.kind == ConeKind::second_order) {
      const RealVector tail = oracle::random_matrix(rng, r - 1, 1);
      v(off) = tail.norm() + 0.5;
      v.segment(off + 1, r - 1) = tail;
    } else {
      v.segment(off, r) = oracle::random_matrix(rng, r, 1).cwiseAbs().array() + 0.5;
    }
    off += r;
  }
  return v;
}

// Random feasible, bounded program: b puts a random x0 strictly inside, and c
// is dual feasible for a random interior dual point.
ConicProgram random_program(std::mt19937_64& rng, const std::vector<Cone>& cones, Eigen::Index n) {
  ConicProgram p;
  p.cones = cones;
  const RealVector s0 = interior_point(rng, cones), z0 = interior_point(rng, cones);
  p.A = oracle::random_matrix(rng, s0.size(), n);
  const RealVector x0 = oracle::random_matrix(rng, n, 1);
  p.b = p.A * x0 + s0;
  p.c = -p.A.transpose() * z0;
  return p;
}

TEST(SolveConic, RandomProgramsSatisfyContract) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Cone> cones = {{ConeKind::nonnegative, 3}, {ConeKind::second_order, 4}, {ConeKind::psd, 3}};
    const ConicProgram p = random_program(rng, cones, 5);
    const auto sol = solve_conic(p);
    ASSERT_EQ(sol.status, ConicStatus::optimal) << "trial " << trial;
    EXPECT_LE(sol.primal_residual, 1e-7 * (1.0 + p.b.norm()));
    EXPECT_NEAR(sol.objective, sol.dual_objective, 1e-6 * std::max(1.0, std::fabs(sol.objective)));
    // Weak duality from the independent dual point gives a lower bound.
    EXPECT_GE(sol.objective, -p.b.dot(sol.y) - 1e-6 * std::max(1.0, std::fabs(sol.objective)));
  }
}

TEST(SolveConic, ObjectiveInvariantUnderRowPermutation) {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Cone> cones = {{ConeKind::psd, 2}, {ConeKind::nonnegative, 2}, {ConeKind::second_order, 3}};
    const ConicProgram p = random_program(rng, cones, 4);
    // Reverse the cone blocks and permute the nonnegative rows within their block.
    ConicProgram q = p;
    q.cones = {cones[2], {ConeKind::nonnegative, 2}, cones[0]};
    std::vector<Eigen::Index> order = {5, 6, 7, 4, 3, 0, 1, 2};
    for (Eigen::Index i = 0; i < 8; ++i) {
      q.A.row(i) = p.A.row(order[i]);
      q.b(i) = p.b(order[i]);
    }
    const auto a = solve_conic(p), b = solve_conic(q);
    ASSERT_EQ(a.status, ConicStatus::optimal);
    ASSERT_EQ(b.status, ConicStatus::optimal);
    EXPECT_NEAR(a.objective, b.objective, 1e-6 * std::max(1.0, std::fabs(a.objective)));
  }
}

TEST(NtScaling, MapsPrimalAndDualToSamePoint) {
  std::mt19937_64 rng(79);
  const std::vector<Cone> cones = {{ConeKind::nonnegative, 2}, {ConeKind::second_order, 4}, {ConeKind::psd, 3}};
  const detail::ConeLayout L(cones);
  for (int trial = 0; trial < 20; ++trial) {
    const RealVector s = interior_point(rng, cones), z = interior_point(rng, cones);
    detail::NtScaling sc;
    ASSERT_TRUE(detail::nt_scaling(L, s, z, sc));
    EXPECT_LT((sc.W * z - sc.lambda).norm(), 1e-10 * (1.0 + z.norm()));
    EXPECT_LT((sc.Winv.transpose() * s - sc.lambda).norm(), 1e-10 * (1.0 + s.norm()));
    EXPECT_LT((sc.W * sc.Winv - RealMatrix::Identity(L.rows, L.rows)).norm(), 1e-10);
    EXPECT_NEAR(sc.lambda.squaredNorm(), s.dot(z), 1e-9 * (1.0 + std::fabs(s.dot(z))));
    // lambda \ (lambda o v) recovers v.
    const RealVector v = oracle::random_matrix(rng, L.rows, 1);
    EXPECT_LT((detail::jordan_divide(L, sc, detail::jordan_product(L, sc.lambda, v)) - v).norm(), 1e-9 * v.norm());
  }
}

TEST(MaxStep, LandsOnBoundary) {
  std::mt19937_64 rng(80);
  const std::vector<Cone> cones = {{ConeKind::nonnegative, 2}, {ConeKind::second_order, 3}, {ConeKind::psd, 2}};
  const detail::ConeLayout L(cones);
  for (int trial = 0; trial < 50; ++trial) {
    const RealVector s = interior_point(rng, cones);
    detail::NtScaling sc;
    ASSERT_TRUE(detail::nt_scaling(L, s, s, sc));
    const RealVector d = oracle::random_matrix(rng, L.rows, 1, 3.0);
    const double a = detail::max_step(L, sc, d);
    if (!std::isfinite(a)) {
      EXPECT_GE(detail::min_jordan_eig(L, sc.lambda + 1e3 * d), -1e-9);
      continue;
    }
    EXPECT_GT(detail::min_jordan_eig(L, sc.lambda + 0.999 * a * d), 0.0);
    EXPECT_NEAR(detail::min_jordan_eig(L, sc.lambda + a * d), 0.0, 1e-9 * (1.0 + a * d.norm()));
  }
}

TEST(WriteListing, ListsEveryRow) {
  std::ostringstream os;
  write_listing(os, psd_trace());
  const std::string text = os.str();
  EXPECT_NE(text.find("cones psd:2"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

}  // namespace
}  // namespace mtlqr
