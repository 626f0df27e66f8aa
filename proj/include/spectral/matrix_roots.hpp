// SPDX-License-Identifier: Apache-2.0
//
// SVD-free matrix-function kernels built only from matrix products:
//
//   polar_quintic       Z <- aZ + bZ(Z^T Z) + cZ(Z^T Z)^2, Z_0 = M / ||M||_F
//   polar_cubic         P <- P(3I - P^T P)/2, P_0 = M / sqrt(||M^T M||_F)
//   coupled_ns_sqrt     (Y, Z) -> (X^{1/2}, X^{-1/2}) via T = 3I - Z Y
//   coupled_ns_quarter  two coupled passes -> (X^{1/4}, X^{-1/4})
//   spectral_transform  U Sigma^p V^T for p in {1, 1/2, 1/4, 0}
//
// Every kernel works on the orientation with rows >= cols and transposes at
// entry/exit when needed, so the Gram-side matrices are the small n x n ones.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "spectral/dense.hpp"
#include "spectral/errors.hpp"
#include "spectral/exponent.hpp"

namespace spectral {

inline constexpr int kDefaultPolarIters = 5;
inline constexpr int kDefaultRootIters = 15;
inline constexpr int kDefaultCubicIters = 40;
/// ||X - X^T||_F <= kSymmetryTolerance * ||X||_F for SPD inputs.
inline constexpr double kSymmetryTolerance = 1e-10;
/// Cubic polar runs whose final residual is above this and no longer
/// decreasing are reported as rank deficient.
inline constexpr double kStagnationTolerance = 1e-6;
/// Coupled iterates whose residual exceeds this have left the basin.
inline constexpr double kCoupledBlowupResidual = 1e6;

struct QuinticCoefficients {
  double a = 3.4445;
  double b = -4.7750;
  double c = 2.0315;
};

enum class PolarMethod { Quintic, Cubic };

inline std::string_view polar_method_token(PolarMethod m) {
  return m == PolarMethod::Quintic ? "quintic" : "cubic";
}

template <typename T>
struct KernelResult {
  T value;
  KernelDiagnostics diagnostics;
};

struct RootPair {
  DenseMatrix root;          // X^{1/2} or X^{1/4}
  DenseMatrix inverse_root;  // X^{-1/2} or X^{-1/4}
};

namespace detail {

inline void require_iterations(int k, const char* op) {
  if (k < 1) throw PreconditionError(std::string(op) + ": iteration count must be >= 1");
}

inline void require_finite(const DenseMatrix& m, const KernelDiagnostics& diag,
                           const std::string& where) {
  if (!m.all_finite()) throw KernelDivergenceError(where + ": non-finite iterate", diag);
}

inline DenseMatrix require_spd_shape(const DenseMatrix& x, const std::string& op) {
  if (!x.is_square()) throw PreconditionError(op + ": expected square input, got " + x.shape());
  if (!x.all_finite()) throw PreconditionError(op + ": non-finite input");
  const double norm = frobenius_norm(x);
  if (!(norm > 0.0)) throw DegenerateInputError(op + ": zero matrix");
  if (frobenius_distance(x, transpose(x)) > kSymmetryTolerance * norm) {
    throw PreconditionError(op + ": input is not symmetric within tolerance");
  }
  return symmetrize(x);
}

/// One coupled Newton-Schulz pass on a symmetric x. Returns the unscaled
/// final iterates plus the normalizer ||x||_F; residuals are appended to
/// diag. `label` names the pass in error messages.
struct CoupledPass {
  DenseMatrix y;
  DenseMatrix z;
  double norm;
};

inline CoupledPass coupled_pass(const DenseMatrix& x, int k, KernelDiagnostics& diag,
                                const std::string& label) {
  const std::size_t n = x.rows();
  const double norm = frobenius_norm(x);
  DenseMatrix y = scale(x, 1.0 / norm);
  DenseMatrix z = identity(n);
  DenseMatrix product = y;  // Z_0 Y_0
  for (int it = 0; it < k; ++it) {
    const DenseMatrix t = shifted_negation(product, 3.0);
    y = scale(matmul(y, t), 0.5);
    z = scale(matmul(t, z), 0.5);
    product = matmul(z, y);
    const double residual = distance_to_identity(product);
    diag.residual_per_iter.push_back(residual);
    ++diag.iterations_run;
    if (!std::isfinite(residual) || residual > kCoupledBlowupResidual) {
      throw KernelDivergenceError(label + ": residual diverged at iteration " +
                                      std::to_string(it + 1),
                                  diag);
    }
  }
  detail::require_finite(y, diag, label);
  detail::require_finite(z, diag, label);
  return {std::move(y), std::move(z), norm};
}

}  // namespace detail

/// Quintic Newton-Schulz approximation of the polar factor U V^T.
///
/// The iterate is never rescaled after the initial Frobenius normalization,
/// so singular values land in a band around 1 rather than at 1. Singular
/// values that are exactly zero stay zero. Residuals are ||Z^T Z - I||_F.
inline KernelResult<DenseMatrix> polar_quintic(const DenseMatrix& m, int k = kDefaultPolarIters,
                                               QuinticCoefficients coeffs = {}) {
  detail::require_iterations(k, "polar_quintic");
  if (m.rows() < m.cols()) {
    auto r = polar_quintic(transpose(m), k, coeffs);
    return {transpose(r.value), std::move(r.diagnostics)};
  }
  KernelDiagnostics diag;
  const double alpha = frobenius_norm(m);
  if (!std::isfinite(alpha)) throw PreconditionError("polar_quintic: non-finite input");
  if (!(alpha > 0.0)) throw DegenerateInputError("polar_quintic: zero input matrix");
  diag.scale_alpha = alpha;

  DenseMatrix z = scale(m, 1.0 / alpha);
  DenseMatrix a = matmul_tn(z, z);
  for (int it = 0; it < k; ++it) {
    // Z (bA + cA^2) equals b Z Z^T Z + c (Z Z^T)^2 Z.
    DenseMatrix poly = add(scale(a, coeffs.b), scale(matmul(a, a), coeffs.c));
    z = add(scale(z, coeffs.a), matmul(z, poly));
    a = symmetrize(matmul_tn(z, z));
    const double residual = distance_to_identity(a);
    diag.residual_per_iter.push_back(residual);
    ++diag.iterations_run;
    if (!std::isfinite(residual)) {
      throw KernelDivergenceError(
          "polar_quintic: non-finite iterate at iteration " + std::to_string(it + 1), diag);
    }
  }
  return {std::move(z), std::move(diag)};
}

/// Cubic Newton-Schulz polar factor.
///
/// Mathematically Z_{k+1} = Z_k (3I - A Z_k^2) / 2 with
/// A = alpha M^T M, alpha = 1/||M^T M||_F, Z_0 = I, returning
/// sqrt(alpha) M Z_K. Because Z_k is a polynomial in A, the iterate
/// P_k = sqrt(alpha) M Z_k obeys P_{k+1} = P_k (3I - P_k^T P_k) / 2, and that
/// is the recurrence run here: the Z form amplifies rounding errors by roughly
/// sqrt(kappa(A)) per step and blows up once kappa(M) passes ~10.
///
/// Needs full column rank. A null direction keeps its residual component at
/// 1, which is reported as stagnation.
inline KernelResult<DenseMatrix> polar_cubic(const DenseMatrix& m, int k = kDefaultCubicIters) {
  detail::require_iterations(k, "polar_cubic");
  if (m.rows() < m.cols()) {
    auto r = polar_cubic(transpose(m), k);
    return {transpose(r.value), std::move(r.diagnostics)};
  }
  if (!m.all_finite()) throw PreconditionError("polar_cubic: non-finite input");
  KernelDiagnostics diag;
  const double gram_norm = frobenius_norm(gram(m));
  if (!(gram_norm > 0.0)) throw DegenerateInputError("polar_cubic: zero input matrix");
  const double alpha = 1.0 / gram_norm;
  diag.scale_alpha = alpha;

  DenseMatrix p = scale(m, std::sqrt(alpha));
  DenseMatrix ptp = symmetrize(matmul_tn(p, p));  // equals A Z_k^2
  for (int it = 0; it < k; ++it) {
    p = scale(matmul(p, shifted_negation(ptp, 3.0)), 0.5);
    ptp = symmetrize(matmul_tn(p, p));
    const double residual = distance_to_identity(ptp);
    diag.residual_per_iter.push_back(residual);
    ++diag.iterations_run;
    if (!std::isfinite(residual)) {
      throw KernelDivergenceError(
          "polar_cubic: non-finite iterate at iteration " + std::to_string(it + 1), diag);
    }
  }
  const auto& res = diag.residual_per_iter;
  if (res.back() > kStagnationTolerance &&
      (res.size() < 2 || res.back() >= res[res.size() - 2] * (1.0 - 1e-12))) {
    throw KernelDivergenceError("polar_cubic: residual stagnated at " + format_double(res.back()) +
                                    " (input is rank deficient or K is too small)",
                                diag);
  }
  return {std::move(p), std::move(diag)};
}

/// Coupled Newton-Schulz for (X^{1/2}, X^{-1/2}) on symmetric positive
/// definite X. scale_alpha = ||X||_F.
inline KernelResult<RootPair> coupled_ns_sqrt(const DenseMatrix& x, int k = kDefaultRootIters) {
  detail::require_iterations(k, "coupled_ns_sqrt");
  const DenseMatrix sym = detail::require_spd_shape(x, "coupled_ns_sqrt");
  KernelDiagnostics diag;
  auto pass = detail::coupled_pass(sym, k, diag, "coupled_ns_sqrt");
  diag.scale_alpha = pass.norm;
  const double root_alpha = std::sqrt(pass.norm);
  return {RootPair{scale(pass.y, root_alpha), scale(pass.z, 1.0 / root_alpha)}, std::move(diag)};
}

/// Two coupled passes: the first yields X^{1/2}, the second is run on that
/// result renormalized by beta = ||X^{1/2}||_F, giving (X^{1/4}, X^{-1/4}).
/// Each pass runs k iterations; residuals of both passes are concatenated.
inline KernelResult<RootPair> coupled_ns_quarter(const DenseMatrix& x, int k = kDefaultRootIters) {
  detail::require_iterations(k, "coupled_ns_quarter");
  const DenseMatrix sym = detail::require_spd_shape(x, "coupled_ns_quarter");
  KernelDiagnostics diag;
  auto first = detail::coupled_pass(sym, k, diag, "coupled_ns_quarter pass 1");
  diag.scale_alpha = first.norm;
  const DenseMatrix half_root = scale(first.y, std::sqrt(first.norm));

  auto second = detail::coupled_pass(half_root, k, diag, "coupled_ns_quarter pass 2");
  diag.scale_beta = second.norm;
  const double root_beta = std::sqrt(second.norm);
  return {RootPair{scale(second.y, root_beta), scale(second.z, 1.0 / root_beta)},
          std::move(diag)};
}

struct TransformOptions {
  int polar_iters = kDefaultPolarIters;
  int root_iters = kDefaultRootIters;
  PolarMethod polar_method = PolarMethod::Quintic;
};

namespace detail {

/// U Sigma^{1/2} V^T = O (O^T O)^{-1/4} for rows >= cols, mirrored otherwise.
inline KernelResult<DenseMatrix> half_power(const DenseMatrix& o, int k) {
  const DenseMatrix x = gram(o);
  auto roots = coupled_ns_quarter(x, k);
  DenseMatrix out = o.rows() >= o.cols() ? matmul(o, roots.value.inverse_root)
                                         : matmul(roots.value.inverse_root, o);
  return {std::move(out), std::move(roots.diagnostics)};
}

inline std::string transform_tag(SpectralExponent p, const TransformOptions& opt) {
  std::string tag = "spectral_transform[p=" + std::string(exponent_token(p));
  if (p == SpectralExponent::Zero) {
    tag += ", method=" + std::string(polar_method_token(opt.polar_method));
  } else if (p != SpectralExponent::One) {
    tag += ", method=coupled-ns";
  }
  return tag + "]";
}

}  // namespace detail

/// Psi_p(O) = U Sigma^p V^T using only matrix products.
///
/// One is the identity. Half is O X^{-1/4} with X = gram(O). Quarter is Half
/// applied twice; the diagnostics of both stages are concatenated and
/// scale_alpha/scale_beta refer to the first stage. Zero is the polar factor
/// by the selected method. Kernel errors are re-thrown tagged with exponent
/// and method.
inline KernelResult<DenseMatrix> spectral_transform(const DenseMatrix& o, SpectralExponent p,
                                                    const TransformOptions& opt = {}) {
  try {
    switch (p) {
      case SpectralExponent::One:
        return {o, KernelDiagnostics{}};
      case SpectralExponent::Half:
        return detail::half_power(o, opt.root_iters);
      case SpectralExponent::Quarter: {
        auto first = detail::half_power(o, opt.root_iters);
        auto second = detail::half_power(first.value, opt.root_iters);
        KernelDiagnostics diag = std::move(first.diagnostics);
        diag.iterations_run += second.diagnostics.iterations_run;
        diag.residual_per_iter.insert(diag.residual_per_iter.end(),
                                      second.diagnostics.residual_per_iter.begin(),
                                      second.diagnostics.residual_per_iter.end());
        return {std::move(second.value), std::move(diag)};
      }
      case SpectralExponent::Zero:
        return opt.polar_method == PolarMethod::Quintic ? polar_quintic(o, opt.polar_iters)
                                                        : polar_cubic(o, opt.polar_iters);
    }
  } catch (const KernelDivergenceError& e) {
    throw KernelDivergenceError(detail::transform_tag(p, opt) + ": " + e.what(), e.diagnostics());
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(detail::transform_tag(p, opt) + ": " + e.what());
  }
  return {o, KernelDiagnostics{}};
}

/// Convenience overload with a single iteration budget for whichever kernel
/// the exponent selects.
inline KernelResult<DenseMatrix> spectral_transform(const DenseMatrix& o, SpectralExponent p,
                                                    int k) {
  TransformOptions opt;
  opt.polar_iters = k;
  opt.root_iters = k;
  return spectral_transform(o, p, opt);
}

}  // namespace spectral
