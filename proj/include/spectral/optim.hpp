// SPDX-License-Identifier: Apache-2.0
//
// The eight spectral optimizers as pure state transitions.
//
//   mSGD{,S,Q,Z}  update direction Psi_p(M_t)
//   Adam{,S,Q,Z}  update direction Psi_p(M_t / (sqrt(V_t) + eps))
//
// with M_t = b1 M_{t-1} + (1 - b1) G_t and V_t = b2 V_{t-1} + (1 - b2) G_t^2.
// There is no bias correction and no weight decay anywhere. mSGDZ is Muon.
//
// Orientation: a parameter is stored as (fan_out x fan_in), i.e. rows are
// outputs. The Muon scale sqrt(fan_out / fan_in) is sqrt(rows / cols).

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "spectral/dense.hpp"
#include "spectral/errors.hpp"
#include "spectral/exponent.hpp"
#include "spectral/matrix_roots.hpp"

namespace spectral {

/// Which matrix the spectral map is applied to.
enum class InputKind { Momentum, RmsNormalized };

struct OptimizerKind {
  InputKind base = InputKind::Momentum;
  SpectralExponent exponent = SpectralExponent::One;

  friend bool operator==(const OptimizerKind&, const OptimizerKind&) = default;

  bool needs_second_moment() const { return base == InputKind::RmsNormalized; }
  bool is_muon() const {
    return base == InputKind::Momentum && exponent == SpectralExponent::Zero;
  }

  /// "mSGD", "mSGDS", ..., "AdamZ".
  std::string display_name() const {
    return std::string(base == InputKind::Momentum ? "mSGD" : "Adam") +
           std::string(exponent_suffix(exponent));
  }

  /// Name for reports; Muon is labelled as such.
  std::string report_name() const {
    return is_muon() ? display_name() + "/Muon" : display_name();
  }

  /// Lower-case config token: "msgd", "msgds", ..., "adamz".
  std::string token() const {
    std::string t = display_name();
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return t;
  }
};

inline constexpr std::array<OptimizerKind, 8> kAllOptimizers = {{
    {InputKind::Momentum, SpectralExponent::One},
    {InputKind::Momentum, SpectralExponent::Half},
    {InputKind::Momentum, SpectralExponent::Quarter},
    {InputKind::Momentum, SpectralExponent::Zero},
    {InputKind::RmsNormalized, SpectralExponent::One},
    {InputKind::RmsNormalized, SpectralExponent::Half},
    {InputKind::RmsNormalized, SpectralExponent::Quarter},
    {InputKind::RmsNormalized, SpectralExponent::Zero},
}};

/// Grammar: (msgd | adam) [s | q | z], case-insensitive; "muon" = "msgdz".
inline std::optional<OptimizerKind> parse_optimizer(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "muon") return OptimizerKind{InputKind::Momentum, SpectralExponent::Zero};
  for (const auto& kind : kAllOptimizers) {
    if (kind.token() == t) return kind;
  }
  return std::nullopt;
}

/// "msgd, msgds, ..., adamz, muon" for error messages.
inline std::string valid_optimizer_tokens() {
  std::string out;
  for (const auto& kind : kAllOptimizers) out += kind.token() + ", ";
  return out + "muon";
}

struct HyperParams {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double lr_mat = 1e-2;
  double lr_vec = 3e-4;
  /// Quintic (or cubic) polar iterations for p = 0.
  int polar_iters = kDefaultPolarIters;
  /// Coupled Newton-Schulz iterations per pass for p = 1/2, 1/4.
  int root_iters = kDefaultRootIters;
  PolarMethod polar_method = PolarMethod::Quintic;
  /// sqrt(fan_out / fan_in) on the p = 0 update.
  bool fan_scaling = true;
  /// Extend the fan scaling to p = 1/2 and 1/4 as well.
  bool fan_scaling_all_spectral = false;

  TransformOptions transform_options() const {
    return TransformOptions{polar_iters, root_iters, polar_method};
  }
};

struct OptimizerState {
  DenseMatrix m;
  std::optional<DenseMatrix> v;  // only for RMS-normalized inputs
  std::uint64_t t = 0;

  static OptimizerState zeros(std::size_t rows, std::size_t cols, bool need_v) {
    OptimizerState s{DenseMatrix(rows, cols), std::nullopt, 0};
    if (need_v) s.v = DenseMatrix(rows, cols);
    return s;
  }
  static OptimizerState zeros_like(const DenseMatrix& w, bool need_v) {
    return zeros(w.rows(), w.cols(), need_v);
  }
};

/// One EMA step of the moment buffers. No bias correction.
inline OptimizerState update_moments(const OptimizerState& state, const DenseMatrix& g,
                                     const HyperParams& hp, bool need_v,
                                     std::string_view param_name = "parameter") {
  if (g.rows() != state.m.rows() || g.cols() != state.m.cols()) {
    throw ShapeError("update_moments(" + std::string(param_name) + "): gradient " + g.shape() +
                     " vs state " + state.m.shape());
  }
  if (!g.all_finite()) {
    throw PoisonedGradientError("non-finite gradient for '" + std::string(param_name) + "' at step " +
                                std::to_string(state.t + 1));
  }
  if (need_v && !state.v) {
    throw PreconditionError("update_moments(" + std::string(param_name) +
                            "): second moment requested but not allocated");
  }
  OptimizerState next = state;
  auto m = next.m.values();
  auto gv = g.values();
  const double keep1 = hp.beta1, take1 = 1.0 - hp.beta1;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = keep1 * m[i] + take1 * gv[i];
  if (need_v) {
    auto v = next.v->values();
    const double keep2 = hp.beta2, take2 = 1.0 - hp.beta2;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = keep2 * v[i] + take2 * (gv[i] * gv[i]);
  }
  next.t = state.t + 1;
  return next;
}

/// O^mom = M, or O^rms = M / (sqrt(V) + eps) elementwise.
inline DenseMatrix make_input(const OptimizerState& state, InputKind kind, const HyperParams& hp) {
  if (state.t == 0) throw PreconditionError("make_input: state has not been stepped");
  if (kind == InputKind::Momentum) return state.m;
  if (!state.v) throw PreconditionError("make_input: RMS input needs a second-moment buffer");
  DenseMatrix out = state.m;
  auto o = out.values();
  auto v = state.v->values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] / (std::sqrt(v[i]) + hp.eps);
  return out;
}

/// Multiplier applied to the spectral update of a (rows x cols) parameter.
inline double fan_scale(std::size_t rows, std::size_t cols, SpectralExponent p,
                        const HyperParams& hp) {
  if (!hp.fan_scaling || p == SpectralExponent::One) return 1.0;
  if (p != SpectralExponent::Zero && !hp.fan_scaling_all_spectral) return 1.0;
  return std::sqrt(static_cast<double>(rows) / static_cast<double>(cols));
}

struct MatrixStep {
  DenseMatrix w;
  OptimizerState state;
  std::optional<KernelDiagnostics> diagnostics;  // absent for p = 1
};

struct VectorStep {
  DenseMatrix w;
  OptimizerState state;
};

inline bool is_vector_shape(const DenseMatrix& w) { return w.rows() == 1 || w.cols() == 1; }

/// W' = W - lr_mat * scale * Psi_p(O), O from the updated moments.
inline MatrixStep step_matrix_param(const DenseMatrix& w, const DenseMatrix& g,
                                   const OptimizerState& state, const OptimizerKind& kind,
                                   const HyperParams& hp,
                                   std::string_view param_name = "parameter") {
  if (is_vector_shape(w)) {
    throw RoutingError("'" + std::string(param_name) + "' has shape " + w.shape() +
                       "; vector parameters go through step_vector_param");
  }
  if (g.rows() != w.rows() || g.cols() != w.cols()) {
    throw ShapeError("step_matrix_param(" + std::string(param_name) + "): gradient " + g.shape() +
                     " vs parameter " + w.shape());
  }
  OptimizerState next = update_moments(state, g, hp, kind.needs_second_moment(), param_name);
  DenseMatrix input = make_input(next, kind.base, hp);

  std::optional<KernelDiagnostics> diagnostics;
  DenseMatrix direction = [&] {
    if (kind.exponent == SpectralExponent::One) return std::move(input);
    try {
      auto r = spectral_transform(input, kind.exponent, hp.transform_options());
      diagnostics = std::move(r.diagnostics);
      return std::move(r.value);
    } catch (const KernelDivergenceError& e) {
      throw KernelDivergenceError("'" + std::string(param_name) + "': " + e.what(),
                                  e.diagnostics());
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError("'" + std::string(param_name) + "': " + e.what());
    }
  }();

  const double coef = hp.lr_mat * fan_scale(w.rows(), w.cols(), kind.exponent, hp);
  DenseMatrix out = w;
  auto dst = out.values();
  auto dir = direction.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] - coef * dir[i];
  return {std::move(out), std::move(next), std::move(diagnostics)};
}

/// Plain Adam (no bias correction) with lr_vec for 1 x n / n x 1 parameters.
inline VectorStep step_vector_param(const DenseMatrix& w, const DenseMatrix& g,
                                   const OptimizerState& state, const HyperParams& hp,
                                   std::string_view param_name = "parameter") {
  if (!is_vector_shape(w)) {
    throw RoutingError("'" + std::string(param_name) + "' has shape " + w.shape() +
                       "; matrix parameters go through step_matrix_param");
  }
  if (g.rows() != w.rows() || g.cols() != w.cols()) {
    throw ShapeError("step_vector_param(" + std::string(param_name) + "): gradient " + g.shape() +
                     " vs parameter " + w.shape());
  }
  OptimizerState next = update_moments(state, g, hp, true, param_name);
  DenseMatrix direction = make_input(next, InputKind::RmsNormalized, hp);
  DenseMatrix out = w;
  auto dst = out.values();
  auto dir = direction.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] - hp.lr_vec * dir[i];
  return {std::move(out), std::move(next)};
}

/// Bound on |M_t / sqrt(V_t)| over arbitrary gradient histories (eps = 0),
/// from Cauchy-Schwarz on the two EMA sums: (1-b1) / sqrt((1-b2)(1-b1^2/b2)).
/// Requires b1^2 < b2.
inline double rms_input_bound(double beta1, double beta2) {
  return (1.0 - beta1) / std::sqrt((1.0 - beta2) * (1.0 - beta1 * beta1 / beta2));
}

}  // namespace spectral
