#pragma once

// Standard-form conic programs and a dense homogeneous self-dual
// interior-point solver for them.
//
//   minimize c'x  subject to  A x + s = b,  s in K
//
// K is a product of zero, nonnegative, second-order and PSD cones taken in
// the order listed. Second-order blocks are (t, v) with t >= ||v||. PSD
// blocks hold the scaled symmetric vectorization svec(X): lower triangle in
// column-major order with off-diagonal entries multiplied by sqrt(2), so that
// svec(X)'svec(Y) = trace(XY).
//
// Zero-cone rows become equality constraints; the remaining rows are the
// inequality block G x + s = h. Each iteration recomputes Nesterov-Todd
// scaling from (s, z) and takes a Mehrotra predictor-corrector step on the
// embedding. Everything is dense: the programs this library builds have at
// most a few hundred rows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mtlqr/errors.hpp"
#include "mtlqr/matops.hpp"

namespace mtlqr {

enum class ConeKind { zero, nonnegative, second_order, psd };

struct Cone {
  ConeKind kind = ConeKind::nonnegative;
  Eigen::Index size = 0;  ///< row count, or the matrix side for psd

  Eigen::Index rows() const { return kind == ConeKind::psd ? size * (size + 1) / 2 : size; }
};

inline Eigen::Index svec_size(Eigen::Index n) { return n * (n + 1) / 2; }

inline RealVector svec(const RealMatrix& X) {
  require_square(X, "svec");
  const Eigen::Index n = X.rows();
  RealVector v(svec_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    v(k++) = X(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) v(k++) = std::sqrt(2.0) * 0.5 * (X(i, j) + X(j, i));
  }
  return v;
}

inline RealMatrix smat(const Eigen::Ref<const RealVector>& v, Eigen::Index n) {
  if (v.size() != svec_size(n)) throw DimensionError("smat: vector length does not match side");
  RealMatrix X(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    X(j, j) = v(k++);
    for (Eigen::Index i = j + 1; i < n; ++i) X(i, j) = X(j, i) = v(k++) / std::sqrt(2.0);
  }
  return X;
}

struct ConicProgram {
  RealVector c;
  RealMatrix A;
  RealVector b;
  std::vector<Cone> cones;

  Eigen::Index num_vars() const { return c.size(); }
  Eigen::Index num_rows() const { return b.size(); }

  void validate() const {
    if (A.rows() != b.size() || A.cols() != c.size()) throw DimensionError("conic program: A, b, c disagree");
    Eigen::Index total = 0;
    for (const Cone& k : cones) {
      if (k.size <= 0) throw DimensionError("conic program: empty cone");
      if (k.kind == ConeKind::second_order && k.size < 2) throw DimensionError("conic program: SOC needs >= 2 rows");
      total += k.rows();
    }
    if (total != b.size()) throw DimensionError("conic program: cone rows do not cover the constraint rows");
    if (!c.allFinite() || !A.allFinite() || !b.allFinite()) throw DomainError("conic program: non-finite data");
  }
};

enum class ConicStatus { optimal, infeasible, unbounded, max_iter, numerical };

inline const char* to_string(ConicStatus s) {
  switch (s) {
    case ConicStatus::optimal: return "optimal";
    case ConicStatus::infeasible: return "infeasible";
    case ConicStatus::unbounded: return "unbounded";
    case ConicStatus::max_iter: return "max_iter";
    case ConicStatus::numerical: return "numerical";
  }
  return "?";
}

struct ConicSolution {
  RealVector x;
  RealVector s;  ///< b - A x at the returned point
  RealVector y;  ///< dual multipliers, one per row
  ConicStatus status = ConicStatus::numerical;
  double primal_residual = std::numeric_limits<double>::infinity();  ///< check_solution(x)
  double objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

struct ConicSettings {
  int max_iters = 200;
  double feas_tol = 1e-10;
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double step = 0.99;
  std::ostream* trace = nullptr;  ///< per-iteration residual log when set
};

/// Distance of v outside the cone (0 when inside).
inline double cone_violation(const Cone& k, const Eigen::Ref<const RealVector>& v) {
  switch (k.kind) {
    case ConeKind::zero: return v.cwiseAbs().maxCoeff();
    case ConeKind::nonnegative: return std::max(0.0, -v.minCoeff());
    case ConeKind::second_order: return std::max(0.0, v.tail(v.size() - 1).norm() - v(0));
    case ConeKind::psd: return std::max(0.0, -min_eig_sym(smat(v, k.size)));
  }
  return 0.0;
}

/// Max cone violation of b - A x, recomputed from the program data alone.
inline double check_solution(const ConicProgram& p, const RealVector& x) {
  if (x.size() != p.num_vars()) throw DimensionError("check_solution: x has the wrong length");
  const RealVector slack = p.b - p.A * x;
  double worst = 0.0;
  Eigen::Index off = 0;
  for (const Cone& k : p.cones) {
    worst = std::max(worst, cone_violation(k, slack.segment(off, k.rows())));
    off += k.rows();
  }
  return worst;
}

inline void write_listing(std::ostream& os, const ConicProgram& p) {
  static const char* names[] = {"zero", "nonnegative", "second_order", "psd"};
  os.precision(17);
  os << "vars " << p.num_vars() << "\nrows " << p.num_rows() << "\ncones";
  for (const Cone& k : p.cones) os << ' ' << names[static_cast<int>(k.kind)] << ':' << k.size;
  os << "\nc";
  for (Eigen::Index j = 0; j < p.c.size(); ++j) os << ' ' << p.c(j);
  os << '\n';
  for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
    os << "row " << i << " b " << p.b(i) << " :";
    for (Eigen::Index j = 0; j < p.A.cols(); ++j) {
      if (p.A(i, j) != 0.0) os << ' ' << j << '=' << p.A(i, j);
    }
    os << '\n';
  }
}

namespace detail {

// The non-zero cones with row offsets into the inequality block.
struct ConeLayout {
  std::vector<Cone> cones;
  std::vector<Eigen::Index> offsets;
  Eigen::Index rows = 0;
  Eigen::Index degree = 0;

  explicit ConeLayout(const std::vector<Cone>& all) {
    for (const Cone& k : all) {
      if (k.kind == ConeKind::zero) continue;
      cones.push_back(k);
      offsets.push_back(rows);
      rows += k.rows();
      degree += k.kind == ConeKind::nonnegative ? k.size : (k.kind == ConeKind::second_order ? 1 : k.size);
    }
  }
};

inline RealVector identity_element(const ConeLayout& L) {
  RealVector e = RealVector::Zero(L.rows);
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    auto seg = e.segment(L.offsets[q], k.rows());
    if (k.kind == ConeKind::nonnegative) {
      seg.setOnes();
    } else if (k.kind == ConeKind::second_order) {
      seg(0) = 1.0;
    } else {
      seg = svec(RealMatrix::Identity(k.size, k.size));
    }
  }
  return e;
}

// Smallest Jordan eigenvalue of x over the cone product.
inline double min_jordan_eig(const ConeLayout& L, const RealVector& x) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    const auto seg = x.segment(L.offsets[q], k.rows());
    if (k.kind == ConeKind::nonnegative) {
      m = std::min(m, seg.minCoeff());
    } else if (k.kind == ConeKind::second_order) {
      m = std::min(m, seg(0) - seg.tail(seg.size() - 1).norm());
    } else {
      m = std::min(m, min_eig_sym(smat(seg, k.size)));
    }
  }
  return m;
}

inline RealVector jordan_product(const ConeLayout& L, const RealVector& x, const RealVector& y) {
  RealVector out(L.rows);
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    const Eigen::Index o = L.offsets[q], r = k.rows();
    const auto xs = x.segment(o, r), ys = y.segment(o, r);
    if (k.kind == ConeKind::nonnegative) {
      out.segment(o, r) = xs.cwiseProduct(ys);
    } else if (k.kind == ConeKind::second_order) {
      out(o) = xs.dot(ys);
      out.segment(o + 1, r - 1) = xs(0) * ys.tail(r - 1) + ys(0) * xs.tail(r - 1);
    } else {
      const RealMatrix X = smat(xs, k.size), Y = smat(ys, k.size);
      out.segment(o, r) = svec(0.5 * (X * Y + Y * X));
    }
  }
  return out;
}

// Nesterov-Todd scaling: W z = W^{-T} s = lambda. W and W^{-1} are stored
// dense and block diagonal.
struct NtScaling {
  RealMatrix W;
  RealMatrix Winv;
  RealVector lambda;
  std::vector<RealVector> psd_eigs;  ///< lambda of each PSD block as a diagonal
};

// Returns false when s or z is not strictly interior to working precision.
inline bool nt_scaling(const ConeLayout& L, const RealVector& s, const RealVector& z, NtScaling& out) {
  out.W = RealMatrix::Zero(L.rows, L.rows);
  out.Winv = RealMatrix::Zero(L.rows, L.rows);
  out.lambda = RealVector::Zero(L.rows);
  out.psd_eigs.clear();
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    const Eigen::Index o = L.offsets[q], r = k.rows();
    const RealVector sq = s.segment(o, r), zq = z.segment(o, r);
    if (k.kind == ConeKind::nonnegative) {
      if (sq.minCoeff() <= 0.0 || zq.minCoeff() <= 0.0) return false;
      for (Eigen::Index i = 0; i < r; ++i) {
        const double w = std::sqrt(sq(i) / zq(i));
        out.W(o + i, o + i) = w;
        out.Winv(o + i, o + i) = 1.0 / w;
        out.lambda(o + i) = std::sqrt(sq(i) * zq(i));
      }
    } else if (k.kind == ConeKind::second_order) {
      const double s2 = sq(0) * sq(0) - sq.tail(r - 1).squaredNorm();
      const double z2 = zq(0) * zq(0) - zq.tail(r - 1).squaredNorm();
      if (sq(0) <= 0.0 || zq(0) <= 0.0 || s2 <= 0.0 || z2 <= 0.0) return false;
      const double sn = std::sqrt(s2), zn = std::sqrt(z2);
      const RealVector sb = sq / sn, zb = zq / zn;
      const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
      RealVector wb(r);
      wb(0) = (sb(0) + zb(0)) / (2.0 * gamma);
      wb.tail(r - 1) = (sb.tail(r - 1) - zb.tail(r - 1)) / (2.0 * gamma);
      RealVector v = wb;
      v(0) += 1.0;
      v /= std::sqrt(2.0 * (wb(0) + 1.0));
      const double beta = std::sqrt(sn / zn);
      RealMatrix J = RealMatrix::Identity(r, r);
      J.bottomRightCorner(r - 1, r - 1) *= -1.0;
      const RealVector Jv = J * v;
      out.W.block(o, o, r, r) = beta * (2.0 * v * v.transpose() - J);
      out.Winv.block(o, o, r, r) = (2.0 * Jv * Jv.transpose() - J) / beta;
      out.lambda.segment(o, r) = out.W.block(o, o, r, r) * zq;
    } else {
      const Eigen::Index n = k.size;
      Eigen::LLT<RealMatrix> ls(smat(sq, n)), lz(smat(zq, n));
      if (ls.info() != Eigen::Success || lz.info() != Eigen::Success) return false;
      const RealMatrix Ls = ls.matrixL(), Lz = lz.matrixL();
      Eigen::JacobiSVD<RealMatrix> svd(Lz.transpose() * Ls, Eigen::ComputeFullU | Eigen::ComputeFullV);
      const RealVector lam = svd.singularValues();
      if (!(lam.minCoeff() > 0.0)) return false;
      const RealVector inv_sqrt = lam.cwiseSqrt().cwiseInverse();
      const RealMatrix R = Ls * svd.matrixV() * inv_sqrt.asDiagonal();
      const RealMatrix rti = Lz * svd.matrixU() * inv_sqrt.asDiagonal();
      // Columns are images of the svec basis under X -> R'XR and X -> rti X rti'.
      for (Eigen::Index col = 0; col < r; ++col) {
        RealVector unit = RealVector::Zero(r);
        unit(col) = 1.0;
        const RealMatrix X = smat(unit, n);
        out.W.block(o, o + col, r, 1) = svec(R.transpose() * X * R);
        out.Winv.block(o, o + col, r, 1) = svec(rti * X * rti.transpose());
      }
      out.lambda.segment(o, r) = svec(RealMatrix(lam.asDiagonal()));
      out.psd_eigs.push_back(lam);
    }
  }
  return true;
}

// Solves lambda o x = v for x (lambda from the current scaling).
inline RealVector jordan_divide(const ConeLayout& L, const NtScaling& sc, const RealVector& v) {
  RealVector out(L.rows);
  std::size_t psd_index = 0;
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    const Eigen::Index o = L.offsets[q], r = k.rows();
    const auto lam = sc.lambda.segment(o, r);
    const auto vs = v.segment(o, r);
    if (k.kind == ConeKind::nonnegative) {
      out.segment(o, r) = vs.cwiseQuotient(lam);
    } else if (k.kind == ConeKind::second_order) {
      const double det = lam(0) * lam(0) - lam.tail(r - 1).squaredNorm();
      const double x0 = (lam(0) * vs(0) - lam.tail(r - 1).dot(vs.tail(r - 1))) / det;
      out(o) = x0;
      out.segment(o + 1, r - 1) = (vs.tail(r - 1) - x0 * lam.tail(r - 1)) / lam(0);
    } else {
      const RealVector& d = sc.psd_eigs[psd_index++];
      RealMatrix X = smat(vs, k.size);
      for (Eigen::Index j = 0; j < k.size; ++j)
        for (Eigen::Index i = 0; i < k.size; ++i) X(i, j) *= 2.0 / (d(i) + d(j));
      out.segment(o, r) = svec(X);
    }
  }
  return out;
}

// Largest alpha with lambda + alpha d in the cone product (infinity if unbounded).
inline double max_step(const ConeLayout& L, const NtScaling& sc, const RealVector& d) {
  double alpha = std::numeric_limits<double>::infinity();
  std::size_t psd_index = 0;
  for (std::size_t q = 0; q < L.cones.size(); ++q) {
    const Cone& k = L.cones[q];
    const Eigen::Index o = L.offsets[q], r = k.rows();
    const auto lam = sc.lambda.segment(o, r);
    const auto ds = d.segment(o, r);
    if (k.kind == ConeKind::nonnegative) {
      for (Eigen::Index i = 0; i < r; ++i)
        if (ds(i) < 0.0) alpha = std::min(alpha, -lam(i) / ds(i));
    } else if (k.kind == ConeKind::second_order) {
      // q(a) = qa a^2 + 2 qb a + qc, positive at 0; first positive root.
      const double qa = ds(0) * ds(0) - ds.tail(r - 1).squaredNorm();
      const double qb = lam(0) * ds(0) - lam.tail(r - 1).dot(ds.tail(r - 1));
      const double qc = lam(0) * lam(0) - lam.tail(r - 1).squaredNorm();
      double root = std::numeric_limits<double>::infinity();
      if (qa == 0.0) {
        if (qb < 0.0) root = -qc / (2.0 * qb);
      } else {
        const double disc = qb * qb - qa * qc;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          const double t = -(qb + (qb >= 0.0 ? sq : -sq));
          for (double cand : {t / qa, qc / t}) {
            if (std::isfinite(cand) && cand > 0.0) root = std::min(root, cand);
          }
        }
      }
      // The cone is the t >= 0 half of {q >= 0}; a direction that only
      // decreases t without crossing q = 0 cannot exist.
      alpha = std::min(alpha, root);
    } else {
      const RealVector inv_sqrt = sc.psd_eigs[psd_index++].cwiseSqrt().cwiseInverse();
      RealMatrix D = smat(ds, k.size);
      for (Eigen::Index j = 0; j < k.size; ++j)
        for (Eigen::Index i = 0; i < k.size; ++i) D(i, j) *= inv_sqrt(i) * inv_sqrt(j);
      const double m = min_eig_sym(D);
      if (m < 0.0) alpha = std::min(alpha, -1.0 / m);
    }
  }
  return alpha;
}

// Solves [0 A' G'; A 0 0; G 0 -W'W] [ux; uy; uz] = [bx; by; bz] through the
// reduced system in (ux, uy), followed by refinement on the full system.
// Without equalities the reduced matrix Ghat'Ghat is never formed: a pivoted
// QR of Ghat = W^{-T} G keeps the solve accurate when W is badly conditioned.
class KktSolver {
 public:
  KktSolver(const RealMatrix& Aeq, const RealMatrix& G, const RealMatrix& W, const RealMatrix& Winv)
      : Aeq_(Aeq), G_(G), W_(W), Winv_(Winv) {
    Ghat_ = Winv.transpose() * G;
    const Eigen::Index n = G.cols(), p = Aeq.rows();
    if (p == 0) {
      qr_.compute(Ghat_);
      use_qr_ = qr_.rank() == n;
    }
    if (!use_qr_) {
      H_ = RealMatrix::Zero(n + p, n + p);
      H_.topLeftCorner(n, n) = Ghat_.transpose() * Ghat_;
      H_.topRightCorner(n, p) = Aeq.transpose();
      H_.bottomLeftCorner(p, n) = Aeq;
      RealMatrix Hreg = H_;
      const double delta = 1e-13 * std::max(1.0, H_.cwiseAbs().maxCoeff());
      Hreg.topLeftCorner(n, n).diagonal().array() += delta;
      Hreg.bottomRightCorner(p, p).diagonal().array() -= delta;
      lu_.compute(Hreg);
    }
  }

  bool solve(const RealVector& bx, const RealVector& by, const RealVector& bz, RealVector& ux, RealVector& uy,
             RealVector& uz) const {
    solve_reduced(bx, by, bz, ux, uy, uz);
    const double scale = 1.0 + bx.norm() + by.norm() + bz.norm();
    for (int refine = 0; refine < 4; ++refine) {
      const RealVector ex = bx - Aeq_.transpose() * uy - G_.transpose() * uz;
      const RealVector ey = by - Aeq_ * ux;
      const RealVector ez = bz - G_ * ux + W_.transpose() * (W_ * uz);
      if (!(ex.allFinite() && ey.allFinite() && ez.allFinite())) return false;
      if (ex.norm() + ey.norm() + ez.norm() <= 1e-15 * scale) break;
      RealVector cx, cy, cz;
      solve_reduced(ex, ey, ez, cx, cy, cz);
      ux += cx;
      uy += cy;
      uz += cz;
    }
    return ux.allFinite() && uy.allFinite() && uz.allFinite();
  }

 private:
  void solve_reduced(const RealVector& bx, const RealVector& by, const RealVector& bz, RealVector& ux,
                     RealVector& uy, RealVector& uz) const {
    const Eigen::Index n = bx.size(), p = by.size();
    const RealVector Wbz = Winv_.transpose() * bz;
    const RealVector rx = bx + Ghat_.transpose() * Wbz;
    if (use_qr_) {
      // Ghat P = Q R, so Ghat'Ghat = P R'R P'.
      const auto R = qr_.matrixR().topLeftCorner(n, n).template triangularView<Eigen::Upper>();
      RealVector t = qr_.colsPermutation().transpose() * rx;
      R.transpose().solveInPlace(t);
      R.solveInPlace(t);
      ux = qr_.colsPermutation() * t;
      uy = RealVector::Zero(0);
    } else {
      RealVector rhs(n + p);
      rhs << rx, by;
      RealVector sol = lu_.solve(rhs);
      sol += lu_.solve(rhs - H_ * sol);
      ux = sol.head(n);
      uy = sol.tail(p);
    }
    uz = Winv_ * (Ghat_ * ux - Wbz);
  }

  const RealMatrix& Aeq_;
  const RealMatrix& G_;
  const RealMatrix& W_;
  const RealMatrix& Winv_;
  RealMatrix Ghat_;
  Eigen::ColPivHouseholderQR<RealMatrix> qr_;
  bool use_qr_ = false;
  RealMatrix H_;
  Eigen::PartialPivLU<RealMatrix> lu_;
};

}  // namespace detail

inline ConicSolution solve_conic(const ConicProgram& p, const ConicSettings& opt = {}) {
  p.validate();
  const detail::ConeLayout L(p.cones);
  if (L.rows == 0) throw DomainError("conic program needs at least one non-zero cone");
  const Eigen::Index n = p.num_vars();

  // Split rows into the equality block and the inequality block.
  std::vector<Eigen::Index> eq_rows, cone_rows;
  {
    Eigen::Index off = 0;
    for (const Cone& k : p.cones) {
      for (Eigen::Index i = 0; i < k.rows(); ++i) (k.kind == ConeKind::zero ? eq_rows : cone_rows).push_back(off + i);
      off += k.rows();
    }
  }
  const Eigen::Index neq = static_cast<Eigen::Index>(eq_rows.size()), m = L.rows;
  RealMatrix Aeq(neq, n), G(m, n);
  RealVector beq(neq), h(m);
  for (Eigen::Index i = 0; i < neq; ++i) {
    Aeq.row(i) = p.A.row(eq_rows[i]);
    beq(i) = p.b(eq_rows[i]);
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    G.row(i) = p.A.row(cone_rows[i]);
    h(i) = p.b(cone_rows[i]);
  }
  const RealVector& c = p.c;
  const RealVector e = detail::identity_element(L);
  const double resx0 = std::max(1.0, c.norm()), resy0 = std::max(1.0, beq.norm()), resz0 = std::max(1.0, h.norm());

  ConicSolution best;
  double best_merit = std::numeric_limits<double>::infinity();
  auto assemble = [&](const RealVector& x, const RealVector& y, const RealVector& z, double tau,
                      ConicSolution& out) {
    out.x = x / tau;
    out.s = p.b - p.A * out.x;
    out.y = RealVector::Zero(p.num_rows());
    for (Eigen::Index i = 0; i < neq; ++i) out.y(eq_rows[i]) = y(i) / tau;
    for (Eigen::Index i = 0; i < m; ++i) out.y(cone_rows[i]) = z(i) / tau;
    out.objective = c.dot(out.x);
    out.dual_objective = -(beq.dot(y) + h.dot(z)) / tau;
    out.primal_residual = check_solution(p, out.x);
  };
  // Contract for reporting "optimal": cone feasibility of b - Ax and a small
  // duality gap, checked on the returned point rather than the iterate.
  auto meets_contract = [&](const ConicSolution& sol) {
    const double scale = std::max(1.0, std::fabs(sol.objective));
    return sol.primal_residual <= 1e-7 * (1.0 + p.b.norm()) &&
           std::fabs(sol.objective - sol.dual_objective) <= 1e-6 * scale;
  };
  auto finish = [&](ConicSolution sol, ConicStatus status) {
    if (status == ConicStatus::optimal && !meets_contract(sol)) status = ConicStatus::numerical;
    if (status != ConicStatus::optimal && status != ConicStatus::infeasible && status != ConicStatus::unbounded &&
        meets_contract(sol)) {
      status = ConicStatus::optimal;
    }
    sol.status = status;
    return sol;
  };

  RealVector x, y, z, s;
  {
    detail::NtScaling unit;
    unit.W = RealMatrix::Identity(m, m);
    unit.Winv = RealMatrix::Identity(m, m);
    const detail::KktSolver kkt(Aeq, G, unit.W, unit.Winv);
    RealVector uz;
    if (!kkt.solve(RealVector::Zero(n), beq, h, x, y, uz)) {
      ConicSolution bad;
      bad.x = RealVector::Zero(n);
      return finish(bad, ConicStatus::numerical);
    }
    s = -uz;
    RealVector dx;
    kkt.solve(-c, RealVector::Zero(neq), RealVector::Zero(m), dx, y, z);
    const double ms = detail::min_jordan_eig(L, s), mz = detail::min_jordan_eig(L, z);
    if (ms <= 1e-8 * std::max(1.0, s.norm())) s += (1.0 - ms) * e;
    if (mz <= 1e-8 * std::max(1.0, z.norm())) z += (1.0 - mz) * e;
  }
  double tau = 1.0, kappa = 1.0;

  for (int it = 0;; ++it) {
    const RealVector rx = Aeq.transpose() * y + G.transpose() * z + c * tau;
    const RealVector ry = Aeq * x - beq * tau;
    const RealVector rz = s + G * x - h * tau;
    const double cx = c.dot(x), bhyz = beq.dot(y) + h.dot(z);
    const double rt = kappa + cx + bhyz;
    const double pcost = cx / tau, dcost = -bhyz / tau;
    const double gap = s.dot(z) / (tau * tau);
    const double pres = std::max(ry.norm() / resy0, rz.norm() / resz0) / tau;
    const double dres = rx.norm() / resx0 / tau;
    double relgap = std::numeric_limits<double>::infinity();
    if (pcost < 0.0) relgap = gap / -pcost;
    if (dcost > 0.0) relgap = gap / dcost;

    if (opt.trace) {
      *opt.trace << "it " << it << " pcost " << pcost << " dcost " << dcost << " gap " << gap << " pres " << pres
                 << " dres " << dres << " tau " << tau << " kappa " << kappa << '\n';
    }
    ConicSolution current;
    assemble(x, y, z, tau, current);
    current.gap = gap;
    current.iterations = it;
    const double merit = std::max({pres, dres, std::min(gap, relgap)});
    if (merit < best_merit) {
      best_merit = merit;
      best = current;
    }

    if (pres <= opt.feas_tol && dres <= opt.feas_tol && (gap <= opt.abs_tol || relgap <= opt.rel_tol)) {
      return finish(current, ConicStatus::optimal);
    }
    if (bhyz < 0.0) {
      const double pinf = (Aeq.transpose() * y + G.transpose() * z).norm() / resx0 / -bhyz;
      if (pinf <= opt.feas_tol) {
        current.status = ConicStatus::infeasible;
        return current;
      }
    }
    if (cx < 0.0) {
      const double dinf = std::max((Aeq * x).norm() / resy0, (G * x + s).norm() / resz0) / -cx;
      if (dinf <= opt.feas_tol) {
        current.status = ConicStatus::unbounded;
        return current;
      }
    }
    if (it >= opt.max_iters) return finish(best, ConicStatus::max_iter);

    detail::NtScaling sc;
    if (!detail::nt_scaling(L, s, z, sc)) return finish(best, ConicStatus::numerical);
    const RealVector& lam = sc.lambda;
    const double mu = (s.dot(z) + tau * kappa) / static_cast<double>(L.degree + 1);
    const detail::KktSolver kkt(Aeq, G, sc.W, sc.Winv);

    RealVector x1, y1, z1;
    if (!kkt.solve(-c, beq, h, x1, y1, z1)) return finish(best, ConicStatus::numerical);
    const double denom = c.dot(x1) + beq.dot(y1) + h.dot(z1) - kappa / tau;

    const RealVector lam_sq = detail::jordan_product(L, lam, lam);
    RealVector dx, dy, dz, ds, ds_scaled, dz_scaled;
    const RealMatrix WinvT = sc.Winv.transpose();
    double dtau = 0.0, dkappa = 0.0, alpha = 0.0, sigma = 0.0;
    RealVector aff_ds, aff_dz;
    double aff_dtau = 0.0, aff_dkappa = 0.0;
    bool solved = true;
    for (int phase = 0; phase < 2 && solved; ++phase) {
      const double eta = phase == 0 ? 1.0 : 1.0 - sigma;
      RealVector dslam = -lam_sq;
      double dkt = -tau * kappa;
      if (phase == 1) {
        dslam += sigma * mu * e - detail::jordan_product(L, aff_ds, aff_dz);
        dkt += sigma * mu - aff_dtau * aff_dkappa;
      }
      const RealVector rtil = detail::jordan_divide(L, sc, dslam);
      RealVector x2, y2, z2;
      if (!kkt.solve(-eta * rx, -eta * ry, -eta * rz - sc.W.transpose() * rtil, x2, y2, z2)) {
        solved = false;
        break;
      }
      dtau = (-eta * rt - dkt / tau - (c.dot(x2) + beq.dot(y2) + h.dot(z2))) / denom;
      dx = x2 + dtau * x1;
      dy = y2 + dtau * y1;
      dz = z2 + dtau * z1;
      dkappa = (dkt - kappa * dtau) / tau;
      // ds from the linearized primal equation keeps the primal residual
      // contracting exactly; W'W is too ill-conditioned near the end for
      // ds = W'(rtil - W dz) to do the same.
      ds = -eta * rz - G * dx + h * dtau;
      dz_scaled = sc.W * dz;
      ds_scaled = WinvT * ds;

      double amax = std::min(detail::max_step(L, sc, ds_scaled), detail::max_step(L, sc, dz_scaled));
      if (dtau < 0.0) amax = std::min(amax, -tau / dtau);
      if (dkappa < 0.0) amax = std::min(amax, -kappa / dkappa);
      if (phase == 0) {
        const double a_aff = std::min(1.0, amax);
        sigma = std::pow(1.0 - a_aff, 3);
        aff_ds = ds_scaled;
        aff_dz = dz_scaled;
        aff_dtau = dtau;
        aff_dkappa = dkappa;
      } else {
        alpha = std::min(1.0, opt.step * amax);
      }
    }
    if (!solved || !std::isfinite(alpha) || alpha < 1e-12 || !dx.allFinite()) {
      return finish(best, ConicStatus::numerical);
    }
    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
    tau += alpha * dtau;
    kappa += alpha * dkappa;
  }
}

}  // namespace mtlqr
