#pragma once

// Dense real-matrix kernels shared by the rest of the library: eigenvalues of
// general and symmetric matrices, discrete Lyapunov solves and PSD tests.
//
// Storage is Eigen's dynamic-size matrix. The eigenvalue kernels are written
// out here (Householder Hessenberg reduction + Francis double-shift QR, and
// Householder tridiagonalization + implicit QL) so the iteration caps and
// failure modes are under our control.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mtlqr/errors.hpp"

namespace mtlqr {

using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

/// Numerical tolerances used across the library. All strictly positive.
struct Tolerances {
  double stability_margin = 1e-8;  ///< closed loops need rho < 1 - margin
  double psd_slack = 1e-9;         ///< relative slack for PSD tests
  double lyap_residual = 1e-10;    ///< relative Lyapunov residual bound
  double fd_step = 1e-6;           ///< finite-difference step
  double eps_lambda_frac = 1e-3;   ///< relative back-off of the contraction rate
  double eps_s = 1e-9;             ///< floor on the certificate eigenvalue variable

  void validate() const {
    for (double v : {stability_margin, psd_slack, lyap_residual, fd_step, eps_lambda_frac, eps_s}) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw DomainError("tolerances must be finite and strictly positive");
      }
    }
    if (eps_lambda_frac >= 1.0) throw DomainError("eps_lambda_frac must be < 1");
  }
};

enum class LyapunovForm {
  state,  ///< X = A X A' + Q
  cost,   ///< X = A' X A + Q
};

inline void require_square(const RealMatrix& A, const char* what) {
  if (A.rows() != A.cols()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(A.rows()) + "x" + std::to_string(A.cols()));
  }
}

inline void require_finite(const RealMatrix& A, const char* what) {
  if (!A.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
}

inline RealMatrix symmetrized(const RealMatrix& M) { return 0.5 * (M + M.transpose()); }

/// Relative asymmetry ||M - M'||_F / ||M||_F (0 for the zero matrix).
inline double asymmetry(const RealMatrix& M) {
  const double n = M.norm();
  if (n == 0.0) return 0.0;
  return (M - M.transpose()).norm() / n;
}

namespace detail {

// Householder reduction to upper Hessenberg form, in place.
inline void hessenberg_reduce(RealMatrix& H) {
  const Eigen::Index n = H.rows();
  for (Eigen::Index k = 0; k + 2 < n; ++k) {
    const Eigen::Index len = n - k - 1;
    RealVector v = H.block(k + 1, k, len, 1);
    const double alpha = v.norm();
    if (alpha == 0.0) continue;
    v(0) += (v(0) >= 0.0 ? alpha : -alpha);
    const double vnorm = v.norm();
    if (vnorm == 0.0) continue;
    v /= vnorm;
    // H <- P H P with P = I - 2 v v' acting on rows/cols k+1..n-1.
    auto rows = H.bottomRows(len);
    rows -= 2.0 * v * (v.transpose() * rows);
    auto cols = H.rightCols(len);
    cols -= 2.0 * (cols * v) * v.transpose();
    H.block(k + 2, k, len - 1, 1).setZero();
  }
}

inline double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

// Francis double-shift QR on an upper Hessenberg matrix (EISPACK hqr lineage).
// Total sweep budget is 100*n; exceeding it is a hard error.
inline std::vector<std::complex<double>> hessenberg_eigenvalues(RealMatrix h) {
  const int n = static_cast<int>(h.rows());
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
  if (n == 0) return out;
  // 1-based accessor keeps the classical index arithmetic readable.
  auto a = [&h](int i, int j) -> double& { return h(i - 1, j - 1); };
  std::vector<double> wr(static_cast<std::size_t>(n) + 1), wi(static_cast<std::size_t>(n) + 1);

  double anorm = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = std::max(i - 1, 1); j <= n; ++j) anorm += std::fabs(a(i, j));

  const int sweep_cap = 100 * n;
  int sweeps = 0;
  int nn = n;
  double t = 0.0;
  while (nn >= 1) {
    int its = 0;
    int l = 0;
    do {
      for (l = nn; l >= 2; --l) {
        double s = std::fabs(a(l - 1, l - 1)) + std::fabs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::fabs(a(l, l - 1)) + s == s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      double x = a(nn, nn);
      if (l == nn) {
        wr[nn] = x + t;
        wi[nn] = 0.0;
        --nn;
      } else {
        double y = a(nn - 1, nn - 1);
        double w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          double p = 0.5 * (y - x);
          double q = p * p + w;
          double z = std::sqrt(std::fabs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_of(z, p);
            wr[nn - 1] = wr[nn] = x + z;
            if (z != 0.0) wr[nn] = x - w / z;
            wi[nn - 1] = wi[nn] = 0.0;
          } else {
            wr[nn - 1] = wr[nn] = x + p;
            wi[nn - 1] = -z;
            wi[nn] = z;
          }
          nn -= 2;
        } else {
          if (its == 30 || ++sweeps > sweep_cap) {
            throw NumericError("eigenvalues: QR iteration did not converge");
          }
          if (its == 10 || its == 20) {
            // exceptional shift
            t += x;
            for (int i = 1; i <= nn; ++i) a(i, i) -= x;
            const double s = std::fabs(a(nn, nn - 1)) + std::fabs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m = nn - 2;
          double p = 0.0, q = 0.0, r = 0.0, z = 0.0;
          for (; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            double s = y - z;
            p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::fabs(p) + std::fabs(q) + std::fabs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            const double u = std::fabs(a(m, m - 1)) * (std::fabs(q) + std::fabs(r));
            const double v = std::fabs(p) * (std::fabs(a(m - 1, m - 1)) + std::fabs(z) + std::fabs(a(m + 1, m + 1)));
            if (u + v == v) break;
          }
          for (int i = m + 2; i <= nn; ++i) {
            a(i, i - 2) = 0.0;
            if (i != m + 2) a(i, i - 3) = 0.0;
          }
          for (int k = m; k <= nn - 1; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = 0.0;
              if (k != nn - 1) r = a(k + 2, k - 1);
              x = std::fabs(p) + std::fabs(q) + std::fabs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            const double s = sign_of(std::sqrt(p * p + q * q + r * r), p);
            if (s != 0.0) {
              if (k == m) {
                if (l != m) a(k, k - 1) = -a(k, k - 1);
              } else {
                a(k, k - 1) = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (int j = k; j <= nn; ++j) {
                p = a(k, j) + q * a(k + 1, j);
                if (k != nn - 1) {
                  p += r * a(k + 2, j);
                  a(k + 2, j) -= p * z;
                }
                a(k + 1, j) -= p * y;
                a(k, j) -= p * x;
              }
              const int mmin = nn < k + 3 ? nn : k + 3;
              for (int i = l; i <= mmin; ++i) {
                p = x * a(i, k) + y * a(i, k + 1);
                if (k != nn - 1) {
                  p += z * a(i, k + 2);
                  a(i, k + 2) -= p * r;
                }
                a(i, k + 1) -= p * q;
                a(i, k) -= p;
              }
            }
          }
        }
      }
    } while (l < nn - 1);
  }
  for (int i = 1; i <= n; ++i) out[static_cast<std::size_t>(i - 1)] = {wr[i], wi[i]};
  return out;
}

}  // namespace detail

/// All eigenvalues of a real square matrix (unordered).
inline std::vector<std::complex<double>> eigenvalues(const RealMatrix& A) {
  require_square(A, "eigenvalues");
  require_finite(A, "eigenvalues");
  RealMatrix H = A;
  detail::hessenberg_reduce(H);
  return detail::hessenberg_eigenvalues(std::move(H));
}

/// Largest eigenvalue modulus.
inline double spectral_radius(const RealMatrix& A) {
  double rho = 0.0;
  for (const auto& ev : eigenvalues(A)) rho = std::max(rho, std::abs(ev));
  return rho;
}

/// Eigen-decomposition of a symmetric matrix; values ascending, vectors in
/// matching columns.
struct SymmetricEigen {
  RealVector values;
  RealMatrix vectors;
};

inline SymmetricEigen sym_eigen(const RealMatrix& M_in, double asym_tol = 1e-12) {
  require_square(M_in, "sym_eigen");
  require_finite(M_in, "sym_eigen");
  if (asymmetry(M_in) > asym_tol) {
    throw DomainError("sym_eigen: matrix is not symmetric (relative asymmetry " +
                      std::to_string(asymmetry(M_in)) + ")");
  }
  const Eigen::Index n = M_in.rows();
  RealMatrix A = symmetrized(M_in);
  RealMatrix Q = RealMatrix::Identity(n, n);

  // Householder tridiagonalization: A <- P A P, Q <- Q P.
  for (Eigen::Index k = 0; k + 2 < n; ++k) {
    const Eigen::Index len = n - k - 1;
    RealVector v = A.block(k + 1, k, len, 1);
    const double alpha = v.norm();
    if (alpha == 0.0) continue;
    v(0) += (v(0) >= 0.0 ? alpha : -alpha);
    const double vnorm = v.norm();
    if (vnorm == 0.0) continue;
    v /= vnorm;
    auto rows = A.bottomRows(len);
    rows -= 2.0 * v * (v.transpose() * rows);
    auto cols = A.rightCols(len);
    cols -= 2.0 * (cols * v) * v.transpose();
    auto qcols = Q.rightCols(len);
    qcols -= 2.0 * (qcols * v) * v.transpose();
  }

  std::vector<double> d(static_cast<std::size_t>(n)), e(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = A(i, i);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    e[static_cast<std::size_t>(i)] = 0.5 * (A(i, i + 1) + A(i + 1, i));
  }

  // Implicit QL with Wilkinson-type shifts (tqli lineage), accumulating
  // rotations into Q. Sweep budget 100*n overall.
  const int ni = static_cast<int>(n);
  const int sweep_cap = 100 * std::max(ni, 1);
  int sweeps = 0;
  for (int l = 0; l < ni; ++l) {
    int iter = 0;
    int m = l;
    do {
      for (m = l; m < ni - 1; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) + dd == dd) break;
      }
      if (m != l) {
        if (iter++ == 30 || ++sweeps > sweep_cap) {
          throw NumericError("sym_eigen: QL iteration did not converge");
        }
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + detail::sign_of(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        int i = m - 1;
        for (; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (Eigen::Index k = 0; k < n; ++k) {
            f = Q(k, i + 1);
            Q(k, i + 1) = s * Q(k, i) + c * f;
            Q(k, i) = c * Q(k, i) - s * f;
          }
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&d](Eigen::Index a, Eigen::Index b) { return d[a] < d[b]; });
  SymmetricEigen out{RealVector(n), RealMatrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = d[order[i]];
    out.vectors.col(i) = Q.col(order[i]);
  }
  return out;
}

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eig_sym(const RealMatrix& M) {
  if (M.rows() == 0) throw DimensionError("min_eig_sym: empty matrix");
  return sym_eigen(M).values(0);
}

inline double max_eig_sym(const RealMatrix& M) {
  if (M.rows() == 0) throw DimensionError("max_eig_sym: empty matrix");
  const auto eig = sym_eigen(M);
  return eig.values(eig.values.size() - 1);
}

/// True iff min_eig(M) >= -slack * (1 + ||M||_F).
inline bool is_psd(const RealMatrix& M, double slack) {
  return min_eig_sym(M) >= -slack * (1.0 + M.norm());
}

/// Largest singular value.
inline double spectral_norm(const RealMatrix& X) {
  if (X.size() == 0) return 0.0;
  const RealMatrix G = X.rows() <= X.cols() ? RealMatrix(X * X.transpose()) : RealMatrix(X.transpose() * X);
  return std::sqrt(std::max(0.0, max_eig_sym(symmetrized(G))));
}

/// Smallest singular value of a square matrix.
inline double min_singular_value(const RealMatrix& X) {
  require_square(X, "min_singular_value");
  return std::sqrt(std::max(0.0, min_eig_sym(symmetrized(X.transpose() * X))));
}

inline RealMatrix kron(const RealMatrix& A, const RealMatrix& B) {
  RealMatrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

inline double lyapunov_residual(const RealMatrix& A, const RealMatrix& Q, const RealMatrix& X,
                                LyapunovForm form) {
  const RealMatrix image = form == LyapunovForm::cost ? RealMatrix(A.transpose() * X * A)
                                                      : RealMatrix(A * X * A.transpose());
  return (X - image - Q).norm();
}

/// Solves the discrete Lyapunov equation by Kronecker vectorization:
///   form=cost:  X = A' X A + Q
///   form=state: X = A X A' + Q
/// Requires rho(A) < 1 - stability_margin. The result is symmetrized.
inline RealMatrix solve_dlyap(const RealMatrix& A, const RealMatrix& Q, LyapunovForm form,
                              const Tolerances& tol = {}) {
  require_square(A, "solve_dlyap");
  require_square(Q, "solve_dlyap");
  if (A.rows() != Q.rows()) throw DimensionError("solve_dlyap: A and Q sizes differ");
  if (A.rows() > 64) throw DimensionError("solve_dlyap: dimension above 64 is not supported");
  require_finite(Q, "solve_dlyap");
  if (asymmetry(Q) > 1e-12) throw DomainError("solve_dlyap: Q is not symmetric");
  const double rho = spectral_radius(A);
  if (!(rho < 1.0 - tol.stability_margin)) {
    throw InstabilityError("solve_dlyap: operand is not Schur stable (rho = " + std::to_string(rho) + ")", rho);
  }
  const Eigen::Index n = A.rows();
  if (n == 0) return RealMatrix(0, 0);
  const RealMatrix At = form == LyapunovForm::cost ? RealMatrix(A.transpose()) : A;
  // vec(At X At') = (At (x) At) vec(X) for column-major vec.
  const RealMatrix L = RealMatrix::Identity(n * n, n * n) - kron(At, At);
  const Eigen::PartialPivLU<RealMatrix> lu(L);
  const RealMatrix Qs = symmetrized(Q);
  const RealVector q = Eigen::Map<const RealVector>(Qs.data(), n * n);
  RealVector x = lu.solve(q);
  // One round of iterative refinement.
  x += lu.solve(RealVector(q - L * x));
  RealMatrix X = symmetrized(Eigen::Map<const RealMatrix>(x.data(), n, n));
  if (!X.allFinite()) throw NumericError("solve_dlyap: non-finite solution");
  const double res = lyapunov_residual(A, Qs, X, form);
  if (res > tol.lyap_residual * (1.0 + X.norm())) {
    throw NumericError("solve_dlyap: residual " + std::to_string(res) + " above tolerance");
  }
  return X;
}

}  // namespace mtlqr
