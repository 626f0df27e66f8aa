// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spectral {

/// Per-call record of a Newton-Schulz run.
///
/// `residual_per_iter[k]` is the residual of the iterate produced by
/// iteration k: ||Z_k Y_k - I||_F for coupled runs, ||P^T P - I||_F for
/// polar runs. Multi-stage kernels concatenate the stages in order.
struct KernelDiagnostics {
  int iterations_run = 0;
  double scale_alpha = 1.0;
  std::optional<double> scale_beta;
  std::vector<double> residual_per_iter;

  double final_residual() const {
    return residual_per_iter.empty() ? 0.0 : residual_per_iter.back();
  }
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Text input (matrix file, config) could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition does not hold (asymmetric SPD input, k < 1, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input carries no direction to work with (e.g. the zero matrix).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Rank deficiency where the operation needs full rank.
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

/// Jacobi sweeps hit the cap without reaching the off-diagonal target.
class OracleConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradient fed to an optimizer.
class PoisonedGradientError : public Error {
 public:
  using Error::Error;
};

/// Parameter sent to the wrong update path (matrix vs. vector).
class RoutingError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative kernel produced non-finite values or stagnated.
class KernelDivergenceError : public Error {
 public:
  KernelDivergenceError(std::string what, KernelDiagnostics diagnostics)
      : Error(std::move(what)), diagnostics_(std::move(diagnostics)) {}

  const KernelDiagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  KernelDiagnostics diagnostics_;
};

}  // namespace spectral
