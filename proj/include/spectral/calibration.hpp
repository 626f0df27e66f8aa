// SPDX-License-Identifier: Apache-2.0
//
// Frozen accuracy envelopes for the Newton-Schulz kernels at their default
// iteration counts. Measured against the exact oracle on seeded random
// inputs (shapes up to 64x48, condition number up to 100, input scale
// 1e-3..1e3) and then rounded outward:
//
//   coupled NS, p = 1/2, K = 15 per pass      worst 4.4e-7  -> 1e-5
//   composed p = 1/4, K = 15 per pass         worst 5.2e-7  -> 1e-5
//   cubic polar, K = 40                       worst 4.9e-15 -> 1e-6
//   quintic polar, K = 5, singular values     [0.6818, 1.1834] over 8 seeds
//                                             -> [0.65, 1.20]
//
// The quintic never converges to exactly 1, so its relative distance to the
// exact polar factor is bounded by the band half-width rather than a small
// number.

#pragma once

#include <algorithm>

#include "spectral/exponent.hpp"
#include "spectral/matrix_roots.hpp"

namespace spectral::calibration {

inline constexpr double kHalfPowerRelTol = 1e-5;
inline constexpr double kQuarterPowerRelTol = 1e-5;
inline constexpr double kCubicPolarRelTol = 1e-6;
inline constexpr int kCubicPolarIters = kDefaultCubicIters;
inline constexpr double kQuinticBandLow = 0.65;
inline constexpr double kQuinticBandHigh = 1.20;
inline constexpr double kReconstructionRelTol = 1e-6;
/// Once ||Z_k Y_k - I||_F < 1/2, the next residual is at most
/// kContractionConstant times its square: per eigenvalue the error map is
/// e -> -3e^2/4 + e^3/4. Measured worst 0.870.
inline constexpr double kContractionConstant = 0.875;
/// Iterations per pass needed for the toy spectrum diag(9, 4, 1, 1e-2, 1e-4),
/// whose Gram matrix has condition number 8.1e9.
inline constexpr int kToySpectrumRootIters = 40;
/// Largest condition number the envelopes above were measured at.
inline constexpr double kCalibratedKappa = 100.0;

/// Relative Frobenius distance to the exact Psi_p that the kernel is
/// expected to stay under at default iteration counts.
inline double relative_tolerance(SpectralExponent p, PolarMethod method = PolarMethod::Quintic) {
  switch (p) {
    case SpectralExponent::One: return 0.0;
    case SpectralExponent::Half: return kHalfPowerRelTol;
    case SpectralExponent::Quarter: return kQuarterPowerRelTol;
    case SpectralExponent::Zero:
      return method == PolarMethod::Cubic
                 ? kCubicPolarRelTol
                 : std::max(1.0 - kQuinticBandLow, kQuinticBandHigh - 1.0);
  }
  return 0.0;
}

}  // namespace spectral::calibration
