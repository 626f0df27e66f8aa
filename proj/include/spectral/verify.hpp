// SPDX-License-Identifier: Apache-2.0
//
// Self-check suites runnable from the command line: kernel accuracy against
// the oracle, oracle spectral laws, optimizer reductions, and task gradient
// checks. Each check reports its measured value next to its tolerance.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "spectral/calibration.hpp"
#include "spectral/errors.hpp"
#include "spectral/matrix_roots.hpp"
#include "spectral/optim.hpp"
#include "spectral/oracle.hpp"
#include "spectral/random.hpp"
#include "spectral/tasks.hpp"

namespace spectral {

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// Replaces every kernel iteration count (polar and root) when set.
  std::optional<int> forced_iters;
};

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> suites{"kernels", "oracle", "optim", "gradients"};
  return suites;
}

inline std::string verify_usage() {
  std::string s = "suites: all";
  for (const auto& n : verify_suites()) s += ", " + n;
  return s;
}

// ---------------------------------------------------------------------------

namespace detail {

inline double rel_distance(const DenseMatrix& a, const DenseMatrix& ref) {
  return frobenius_distance(a, ref) / frobenius_norm(ref);
}

/// Records max(measure()) <= tol; a thrown kernel error counts as a failure.
inline void check_max(VerifyReport& out, const std::string& suite, const std::string& name, double tol,
                      const std::function<double()>& measure) {
  CheckResult r{suite, name, false, 0.0, tol, {}};
  try {
    r.measured = measure();
    r.passed = std::isfinite(r.measured) && r.measured <= tol;
  } catch (const Error& e) {
    r.measured = std::nan("");
    r.detail = e.what();
  }
  out.checks.push_back(std::move(r));
}

inline DenseMatrix random_kernel_input(Rng& rng) {
  const std::size_t rows = 2 + rng.below(31), cols = 2 + rng.below(23);
  const double kappa = std::pow(10.0, rng.uniform(0.0, 2.0));
  const double magnitude = std::pow(10.0, rng.uniform(-3.0, 3.0));
  return scale(random_conditioned(rows, cols, kappa, rng), magnitude);
}

inline DenseMatrix fig1_fixture() { return diagonal({9.0, 4.0, 1.0, 0.01, 0.0001}); }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace detail

/// Largest relative error between hand-derived and central-difference
/// gradients over `coords` sampled entries of every parameter.
inline double gradient_check_worst(const Task& task, ParamSet params, std::span<const std::size_t> batch,
                                   std::size_t coords, Rng& rng) {
  GradSet grad;
  task.loss_and_grad(params, batch, grad);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    DenseMatrix& w = params[pi].value;
    const std::size_t n = std::min(coords, w.size());
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t idx = n == w.size() ? c : static_cast<std::size_t>(rng.below(w.size()));
      const double orig = w.values()[idx];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      w.values()[idx] = orig + h;
      const double up = task.loss(params, batch);
      w.values()[idx] = orig - h;
      const double down = task.loss(params, batch);
      w.values()[idx] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = grad[pi].values()[idx];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
    }
  }
  return worst;
}

inline void verify_kernels(VerifyReport& out, const VerifyOptions& opt) {
  const std::string suite = "kernels";
  const int root_k = opt.forced_iters.value_or(kDefaultRootIters);
  const int quintic_k = opt.forced_iters.value_or(kDefaultPolarIters);
  const int cubic_k = opt.forced_iters.value_or(calibration::kCubicPolarIters);
  TransformOptions topt;
  topt.root_iters = root_k;

  auto vs_oracle = [&](SpectralExponent p, std::uint64_t stream) {
    return [&, p, stream] {
      Rng rng(derive_seed(opt.seed, stream));
      double worst = 0.0;
      for (int t = 0; t < 25; ++t) {
        const DenseMatrix o = detail::random_kernel_input(rng);
        const DenseMatrix got = spectral_transform(o, p, topt).value;
        worst = std::max(worst, detail::rel_distance(got, oracle::psi_exact(o, exponent_value(p))));
      }
      return worst;
    };
  };
  detail::check_max(out, suite, "coupled NS p=1/2 vs oracle (K=" + std::to_string(root_k) + ")",
                    calibration::kHalfPowerRelTol, vs_oracle(SpectralExponent::Half, 1));
  detail::check_max(out, suite, "composed p=1/4 vs oracle (K=" + std::to_string(root_k) + ")",
                    calibration::kQuarterPowerRelTol, vs_oracle(SpectralExponent::Quarter, 2));

  detail::check_max(out, suite, "cubic polar vs oracle (K=" + std::to_string(cubic_k) + ")",
                    calibration::kCubicPolarRelTol, [&] {
                      Rng rng(derive_seed(opt.seed, 3));
                      double worst = 0.0;
                      for (int t = 0; t < 25; ++t) {
                        const DenseMatrix o = detail::random_kernel_input(rng);
                        worst = std::max(worst, detail::rel_distance(polar_cubic(o, cubic_k).value,
                                                                     oracle::psi_exact(o, 0.0)));
                      }
                      return worst;
                    });

  // Band check reported as the distance outside [low, high] (0 inside).
  detail::check_max(out, suite, "quintic polar singular values in band (K=" + std::to_string(quintic_k) + ")",
                    0.0, [&] {
                      Rng rng(derive_seed(opt.seed, 4));
                      double outside = 0.0;
                      for (int t = 0; t < 25; ++t) {
                        const DenseMatrix o = detail::random_kernel_input(rng);
                        for (double s : oracle::singular_values(polar_quintic(o, quintic_k).value, 0.0)) {
                          outside = std::max(outside, calibration::kQuinticBandLow - s);
                          outside = std::max(outside, s - calibration::kQuinticBandHigh);
                        }
                      }
                      return outside;
                    });

  auto spd_inputs = [&](std::uint64_t stream) {
    Rng rng(derive_seed(opt.seed, stream));
    std::vector<DenseMatrix> xs;
    for (int t = 0; t < 15; ++t) xs.push_back(random_spd(2 + rng.below(47), rng));
    return xs;
  };
  detail::check_max(out, suite, "sqrt reconstruction |R^2 - X| / |X|", calibration::kReconstructionRelTol, [&] {
    double worst = 0.0;
    for (const auto& x : spd_inputs(5)) {
      const auto r = coupled_ns_sqrt(x, root_k).value;
      worst = std::max(worst, detail::rel_distance(matmul(r.root, r.root), x));
    }
    return worst;
  });
  detail::check_max(out, suite, "sqrt inverse pairing |R R^-1 - I|", calibration::kReconstructionRelTol, [&] {
    double worst = 0.0;
    for (const auto& x : spd_inputs(6)) {
      const auto r = coupled_ns_sqrt(x, root_k).value;
      worst = std::max(worst, distance_to_identity(matmul(r.root, r.inverse_root)));
    }
    return worst;
  });
  detail::check_max(out, suite, "quarter reconstruction |Q^4 - X| / |X|", calibration::kReconstructionRelTol, [&] {
    double worst = 0.0;
    for (const auto& x : spd_inputs(7)) {
      const auto r = coupled_ns_quarter(x, root_k).value;
      const DenseMatrix sq = matmul(r.root, r.root);
      worst = std::max(worst, detail::rel_distance(matmul(sq, sq), x));
    }
    return worst;
  });
}

inline void verify_oracle(VerifyReport& out, const VerifyOptions& opt) {
  const std::string suite = "oracle";
  const DenseMatrix fix = detail::fig1_fixture();
  const std::vector<std::pair<double, std::vector<double>>> laws{
      {0.5, {3.0, 2.0, 1.0, 0.1, 0.01}},
      {0.25, {std::sqrt(3.0), std::sqrt(2.0), 1.0, std::sqrt(0.1), std::sqrt(0.01)}},
      {0.0, {1.0, 1.0, 1.0, 1.0, 1.0}}};
  for (const auto& [p, expected] : laws) {
    detail::check_max(out, suite, "diag(9,4,1,0.01,1e-4) spectrum at p=" + format_shortest(p), 1e-12, [&] {
      return detail::max_abs_diff(oracle::singular_values(oracle::psi_exact(fix, p)), expected);
    });
  }
  detail::check_max(out, suite, "fixture condition numbers 90000 / 300 / 1", 1e-9, [&] {
    const double k1 = oracle::cond_number(fix);
    const double kh = oracle::cond_number(oracle::psi_exact(fix, 0.5));
    const double k0 = oracle::cond_number(oracle::psi_exact(fix, 0.0));
    return std::max({std::abs(k1 / 90000.0 - 1.0), std::abs(kh / 300.0 - 1.0), std::abs(k0 - 1.0)});
  });
  detail::check_max(out, suite, "cond(Psi_p(O)) = cond(O)^p on random inputs", 1e-9, [&] {
    Rng rng(derive_seed(opt.seed, 11));
    double worst = 0.0;
    for (int t = 0; t < 30; ++t) {
      const std::size_t rows = 2 + rng.below(23), cols = 2 + rng.below(17);
      const double kappa = std::pow(10.0, rng.uniform(0.0, 4.0));
      const DenseMatrix o = random_conditioned(rows, cols, kappa, rng);
      const double k = oracle::cond_number(o);
      for (double p : {0.5, 0.25, 0.0}) {
        const double kp = oracle::cond_number(oracle::psi_exact(o, p));
        worst = std::max(worst, std::abs(kp / std::pow(k, p) - 1.0));
      }
    }
    return worst;
  });
  detail::check_max(out, suite, "SVD reconstruction |U S V^T - O| / |O|", 1e-12, [&] {
    Rng rng(derive_seed(opt.seed, 12));
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const DenseMatrix o = random_normal(2 + rng.below(30), 2 + rng.below(30), rng);
      worst = std::max(worst, detail::rel_distance(oracle::psi_exact(o, 1.0), o));
    }
    return worst;
  });
  detail::check_max(out, suite, "composition Psi_1/2(Psi_1/2(O)) = Psi_1/4(O)", 1e-10, [&] {
    Rng rng(derive_seed(opt.seed, 13));
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const DenseMatrix o = random_conditioned(3 + rng.below(20), 3 + rng.below(20), 50.0, rng);
      const DenseMatrix twice = oracle::psi_exact(oracle::psi_exact(o, 0.5), 0.5);
      worst = std::max(worst, detail::rel_distance(twice, oracle::psi_exact(o, 0.25)));
    }
    return worst;
  });
}

inline void verify_optim(VerifyReport& out, const VerifyOptions& opt) {
  const std::string suite = "optim";
  detail::check_max(out, suite, "t=1 RMS input magnitude (1-b1)/sqrt(1-b2)", 1e-15, [&] {
    HyperParams hp;
    hp.eps = 0.0;
    Rng rng(derive_seed(opt.seed, 21));
    const DenseMatrix g = random_normal(6, 4, rng);
    const auto state = update_moments(OptimizerState::zeros(6, 4, true), g, hp, true, "probe");
    const DenseMatrix in = make_input(state, InputKind::RmsNormalized, hp);
    const double expected = (1.0 - hp.beta1) / std::sqrt(1.0 - hp.beta2);
    double worst = 0.0;
    for (double v : in.values()) worst = std::max(worst, std::abs(std::abs(v) - expected));
    return worst;
  });

  auto reduction = [&](InputKind kind, std::uint64_t stream) {
    return [&, kind, stream] {
      HyperParams hp;
      hp.lr_mat = 1e-2;
      Rng rng(derive_seed(opt.seed, stream));
      DenseMatrix w = random_normal(7, 5, rng);
      DenseMatrix ref = w;
      DenseMatrix m(7, 5), v(7, 5);
      const bool rms = kind == InputKind::RmsNormalized;
      OptimizerState state = OptimizerState::zeros_like(w, rms);
      const OptimizerKind k{kind, SpectralExponent::One};
      double worst = 0.0;
      for (int step = 0; step < 500; ++step) {
        const DenseMatrix g = random_normal(7, 5, rng);
        auto r = step_matrix_param(w, g, state, k, hp, "w");
        w = std::move(r.w);
        state = std::move(r.state);
        for (std::size_t i = 0; i < ref.size(); ++i) {
          const double gi = g.values()[i];
          double& mi = m.values()[i];
          double& vi = v.values()[i];
          mi = hp.beta1 * mi + (1.0 - hp.beta1) * gi;
          vi = hp.beta2 * vi + (1.0 - hp.beta2) * gi * gi;
          ref.values()[i] -= hp.lr_mat * (rms ? mi / (std::sqrt(vi) + hp.eps) : mi);
        }
        worst = std::max(worst, frobenius_distance(w, ref));
      }
      return worst;
    };
  };
  detail::check_max(out, suite, "(mSGD, One) matches reference over 500 steps", 1e-12,
                    reduction(InputKind::Momentum, 22));
  detail::check_max(out, suite, "(Adam, One) matches reference over 500 steps", 1e-12,
                    reduction(InputKind::RmsNormalized, 23));

  // Reported as the excess over the bound (0 when respected).
  detail::check_max(out, suite, "RMS input entries bounded by (1-b1)/sqrt((1-b2)(1-b1^2/b2))", 1e-12, [&] {
    HyperParams hp;
    hp.eps = 0.0;
    const double bound = rms_input_bound(hp.beta1, hp.beta2);
    Rng rng(derive_seed(opt.seed, 24));
    OptimizerState state = OptimizerState::zeros(8, 8, true);
    double excess = 0.0;
    for (int step = 0; step < 400; ++step) {
      DenseMatrix g = random_normal(8, 8, rng);
      // Heavy tails: occasional spikes.
      for (double& x : g.values())
        if (rng.uniform() < 0.02) x *= 1e4;
      state = update_moments(state, g, hp, true, "probe");
      const DenseMatrix in = make_input(state, InputKind::RmsNormalized, hp);
      for (double x : in.values()) excess = std::max(excess, std::abs(x) - bound);
    }
    return std::max(0.0, excess);
  });
}

inline void verify_gradients(VerifyReport& out, const VerifyOptions& opt) {
  const std::string suite = "gradients";
  detail::check_max(out, suite, "MatrixRegression finite differences", 1e-4, [&] {
    const MatrixRegression task(opt.seed);
    Rng rng(derive_seed(opt.seed, 31));
    ParamSet p{{"w", random_normal(task.dims().in, task.dims().hidden, rng, 0.3)}};
    const std::vector<std::size_t> batch{0, 3, 77, 150, 255};
    return gradient_check_worst(task, p, batch, 200, rng);
  });
  detail::check_max(out, suite, "CharMlpLm finite differences", 1e-4, [&] {
    const CharMlpLm task(opt.seed, kBundledCorpus);
    Rng rng(derive_seed(opt.seed, 32));
    ParamSet p = task.initial_params();
    p[CharMlpLm::kB1].value = random_normal(1, p[CharMlpLm::kB1].value.cols(), rng, 0.1);
    p[CharMlpLm::kB2].value = random_normal(1, p[CharMlpLm::kB2].value.cols(), rng, 0.1);
    const std::vector<std::size_t> batch{1, 40, 900, 3000, 6000};
    return gradient_check_worst(task, p, batch, 110, rng);
  });
}

/// Runs one suite or "all"; unknown names raise ConfigError.
inline VerifyReport run_verify(std::string_view suite, const VerifyOptions& opt = {}) {
  if (opt.forced_iters && *opt.forced_iters < 1) throw ConfigError("--iters must be >= 1");
  VerifyReport out;
  const bool all = suite == "all";
  bool matched = all;
  auto run = [&](std::string_view name, void (*fn)(VerifyReport&, const VerifyOptions&)) {
    if (all || suite == name) {
      matched = true;
      fn(out, opt);
    }
  };
  run("kernels", verify_kernels);
  run("oracle", verify_oracle);
  run("optim", verify_optim);
  run("gradients", verify_gradients);
  if (!matched) throw ConfigError("unknown verify suite '" + std::string(suite) + "'; " + verify_usage());
  return out;
}

inline void print_verify_table(std::ostream& os, const VerifyReport& report) {
  std::size_t width = 0;
  for (const auto& c : report.checks) width = std::max(width, c.suite.size() + c.name.size() + 3);
  for (const auto& c : report.checks) {
    const std::string label = "[" + c.suite + "] " + c.name;
    os << (c.passed ? "PASS  " : "FAIL  ") << label << std::string(width - label.size() + 2, ' ')
       << "measured " << format_shortest(c.measured) << "  tol " << format_shortest(c.tolerance);
    if (!c.detail.empty()) os << "  (" << c.detail << ")";
    os << "\n";
  }
  std::size_t passed = 0;
  for (const auto& c : report.checks) passed += c.passed ? 1 : 0;
  os << passed << "/" << report.checks.size() << " checks passed\n";
}

}  // namespace spectral
