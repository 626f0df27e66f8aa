// SPDX-License-Identifier: Apache-2.0
//
// Exact spectral reference. Everything here is brute force on purpose: it is
// the ground truth the Newton-Schulz kernels are measured against, so it
// shares no code path with them beyond dense.hpp.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "spectral/dense.hpp"
#include "spectral/errors.hpp"

namespace spectral::oracle {

inline constexpr double kDefaultRankTolerance = 1e-10;
inline constexpr int kJacobiSweepCap = 50;
inline constexpr double kJacobiOffDiagonalTarget = 1e-12;

struct Eigensystem {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column i pairs with values[i]
};

struct SvdTriple {
  DenseMatrix u;              // m x r, orthonormal columns
  std::vector<double> sigma;  // r values, descending, all above the cutoff
  DenseMatrix v;              // n x r, orthonormal columns
};

namespace detail {

inline double off_diagonal_norm(const DenseMatrix& a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) sum += a(i, j) * a(i, j);
  return std::sqrt(sum);
}

/// Stable descending order; equal keys keep their original index order.
inline std::vector<std::size_t> descending_order(const std::vector<double>& keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  return order;
}

/// One-sided Jacobi sweeps on the columns of b, accumulating the same
/// rotations into v. Used to polish the basis obtained from the Gram
/// eigendecomposition so the small singular values keep full relative
/// accuracy instead of the squared-condition-number loss of the Gram route.
inline void orthogonalize_columns(DenseMatrix& b, DenseMatrix& v) {
  const std::size_t m = b.rows();
  const std::size_t n = b.cols();
  constexpr double kTol = 4.0 * std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kJacobiSweepCap; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += b(i, p) * b(i, p);
          beta += b(i, q) * b(i, q);
          gamma += b(i, p) * b(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
        }
        for (std::size_t i = 0; i < v.rows(); ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
}

}  // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// A pair (p, q) is rotated unless |s_pq| is negligible against
/// sqrt(|s_pp s_qq|); sweeps stop once a full sweep rotates nothing, which
/// leaves the off-diagonal mass far below 1e-12 * ||s||_F. Eigenpairs come
/// back sorted by descending eigenvalue, ties in original index order.
inline Eigensystem jacobi_eigh(const DenseMatrix& s) {
  if (!s.is_square()) throw ShapeError("jacobi_eigh: expected square, got " + s.shape());
  const double norm = frobenius_norm(s);
  if (frobenius_distance(s, transpose(s)) > 1e-10 * norm) {
    throw PreconditionError("jacobi_eigh: input is not symmetric");
  }
  const std::size_t n = s.rows();
  DenseMatrix a = symmetrize(s);
  DenseMatrix v = identity(n);
  constexpr double kRel = std::numeric_limits<double>::epsilon() / 8.0;
  const double floor = 1e-30 * norm;

  bool converged = false;
  for (int sweep = 0; sweep < kJacobiSweepCap && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= floor ||
            std::abs(apq) <= kRel * std::sqrt(std::abs(a(p, p)) * std::abs(a(q, q)))) {
          continue;
        }
        rotated = true;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, tau) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged && detail::off_diagonal_norm(a) > kJacobiOffDiagonalTarget * norm) {
    throw OracleConvergenceError("jacobi_eigh: no convergence after " +
                                 std::to_string(kJacobiSweepCap) + " sweeps");
  }

  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = detail::descending_order(diag);
  Eigensystem out{std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = diag[order[j]];
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

/// Thin SVD from the eigendecomposition of gram(o).
///
/// The eigenvectors of the Gram matrix give the right (or left, when
/// rows < cols) singular basis W. The columns of O W are then polished by
/// one-sided Jacobi and their norms taken as the singular values, which are
/// sqrt(lambda_i) in exact arithmetic. Values at or below
/// rank_tolerance * sigma_max are truncated.
inline SvdTriple svd_via_gram(const DenseMatrix& o, double rank_tolerance = kDefaultRankTolerance) {
  const bool tall = o.rows() >= o.cols();
  const Eigensystem eig = jacobi_eigh(gram(o));
  DenseMatrix basis = eig.vectors;
  DenseMatrix projected = tall ? matmul(o, basis) : matmul_tn(o, basis);
  detail::orthogonalize_columns(projected, basis);

  const std::size_t k = basis.cols();
  std::vector<double> norms(k);
  for (std::size_t j = 0; j < k; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < projected.rows(); ++i) sum += projected(i, j) * projected(i, j);
    norms[j] = std::sqrt(sum);
  }
  const auto order = detail::descending_order(norms);
  const double sigma_max = norms[order.front()];
  if (!(sigma_max > 0.0)) throw RankDeficientError("svd_via_gram: zero matrix has no singular values");

  std::size_t rank = 0;
  while (rank < k && norms[order[rank]] > rank_tolerance * sigma_max) ++rank;

  DenseMatrix left(projected.rows(), rank);
  DenseMatrix right(basis.rows(), rank);
  std::vector<double> sigma(rank);
  for (std::size_t j = 0; j < rank; ++j) {
    const std::size_t src = order[j];
    sigma[j] = norms[src];
    for (std::size_t i = 0; i < projected.rows(); ++i) left(i, j) = projected(i, src) / sigma[j];
    for (std::size_t i = 0; i < basis.rows(); ++i) right(i, j) = basis(i, src);
  }
  if (tall) return SvdTriple{std::move(left), std::move(sigma), std::move(right)};
  return SvdTriple{std::move(right), std::move(sigma), std::move(left)};
}

/// U diag(values) V^T.
inline DenseMatrix reassemble(const DenseMatrix& u, const std::vector<double>& values,
                              const DenseMatrix& v) {
  DenseMatrix scaled = u;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= values[j];
  return matmul(scaled, transpose(v));
}

inline std::size_t full_rank(const DenseMatrix& o) { return std::min(o.rows(), o.cols()); }

/// Exact U diag(sigma^p) V^T for any p in [0, 1]. p = 0 requires full rank.
inline DenseMatrix psi_exact(const DenseMatrix& o, double p,
                             double rank_tolerance = kDefaultRankTolerance) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("psi_exact: exponent must lie in [0, 1]");
  SvdTriple svd = svd_via_gram(o, rank_tolerance);
  if (p == 0.0 && svd.sigma.size() < full_rank(o)) {
    throw RankDeficientError("psi_exact: p = 0 needs full rank, numerical rank " +
                             std::to_string(svd.sigma.size()) + " of " +
                             std::to_string(full_rank(o)));
  }
  std::vector<double> powered(svd.sigma.size());
  for (std::size_t i = 0; i < powered.size(); ++i) powered[i] = std::pow(svd.sigma[i], p);
  return reassemble(svd.u, powered, svd.v);
}

/// Singular values, descending (truncated at the rank tolerance).
inline std::vector<double> singular_values(const DenseMatrix& o,
                                           double rank_tolerance = kDefaultRankTolerance) {
  return svd_via_gram(o, rank_tolerance).sigma;
}

/// sigma_max / sigma_min; throws when o is rank deficient at the tolerance.
inline double cond_number(const DenseMatrix& o, double rank_tolerance = kDefaultRankTolerance) {
  const SvdTriple svd = svd_via_gram(o, rank_tolerance);
  if (svd.sigma.size() < full_rank(o)) {
    throw RankDeficientError("cond_number: rank deficient input has infinite condition number");
  }
  return svd.sigma.front() / svd.sigma.back();
}

}  // namespace spectral::oracle
