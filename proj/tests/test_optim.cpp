// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "spectral/calibration.hpp"
#include "spectral/optim.hpp"
#include "spectral/oracle.hpp"
#include "spectral/random.hpp"

using namespace spectral;

namespace {

constexpr OptimizerKind kMsgd{InputKind::Momentum, SpectralExponent::One};
constexpr OptimizerKind kAdam{InputKind::RmsNormalized, SpectralExponent::One};
constexpr OptimizerKind kMuon{InputKind::Momentum, SpectralExponent::Zero};

// Textbook references on flat arrays, written without the library types.
struct ReferenceMomentumSgd {
  std::vector<double> m;
  double beta, lr;
  void step(std::vector<double>& w, const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta * m[i] + (1 - beta) * g[i];
      w[i] -= lr * m[i];
    }
  }
};

struct ReferenceAdam {
  std::vector<double> m, v;
  double b1, b2, eps, lr;
  void step(std::vector<double>& w, const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
};

std::vector<double> flat(const DenseMatrix& a) { return {a.values().begin(), a.values().end()}; }

double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

// ---------------------------------------------------------------- naming

TEST(OptimizerKind, DisplayNames) {
  std::vector<std::string> names;
  for (const auto& k : kAllOptimizers) names.push_back(k.display_name());
  EXPECT_EQ(names, (std::vector<std::string>{"mSGD", "mSGDS", "mSGDQ", "mSGDZ", "Adam", "AdamS",
                                             "AdamQ", "AdamZ"}));
  EXPECT_EQ(kMuon.report_name(), "mSGDZ/Muon");
  EXPECT_EQ(kAdam.report_name(), "Adam");
}

TEST(OptimizerKind, NamingIsInjectiveAndRoundTrips) {
  std::set<std::string> seen;
  for (const auto& k : kAllOptimizers) {
    EXPECT_TRUE(seen.insert(k.token()).second);
    EXPECT_EQ(parse_optimizer(k.token()), k);
    EXPECT_EQ(parse_optimizer(k.display_name()), k);
  }
}

TEST(OptimizerKind, MuonAliasAndErrors) {
  EXPECT_EQ(parse_optimizer("muon"), kMuon);
  EXPECT_EQ(parse_optimizer("MUON"), kMuon);
  EXPECT_FALSE(parse_optimizer("adamw").has_value());
  EXPECT_FALSE(parse_optimizer("msgdx").has_value());
  EXPECT_FALSE(parse_optimizer("").has_value());
  EXPECT_EQ(valid_optimizer_tokens(), "msgd, msgds, msgdq, msgdz, adam, adams, adamq, adamz, muon");
}

TEST(HyperParams, Defaults) {
  const HyperParams hp;
  EXPECT_EQ(hp.beta1, 0.9);
  EXPECT_EQ(hp.beta2, 0.95);
  EXPECT_EQ(hp.lr_vec, 3e-4);
  EXPECT_EQ(hp.eps, 1e-8);
  EXPECT_TRUE(hp.fan_scaling);
  EXPECT_FALSE(hp.fan_scaling_all_spectral);
}

// ---------------------------------------------------------------- moments

TEST(UpdateMoments, FirstStepFromZero) {
  const HyperParams hp;
  const DenseMatrix g{{1, -2}, {3, 0.5}};
  const auto s = update_moments(OptimizerState::zeros(2, 2, true), g, hp, true);
  EXPECT_EQ(s.t, 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(s.m.values()[i], 0.1 * g.values()[i]);
    const double g2 = g.values()[i] * g.values()[i];
    EXPECT_NEAR(s.v->values()[i], 0.05 * g2, 1e-15 * g2);
  }
}

TEST(UpdateMoments, ZeroGradientDecaysGeometrically) {
  const HyperParams hp;
  OptimizerState s = OptimizerState::zeros(1, 3, false);
  s = update_moments(s, DenseMatrix{{1, 2, 3}}, hp, false);
  const DenseMatrix m1 = s.m;
  for (int k = 1; k <= 20; ++k) {
    s = update_moments(s, DenseMatrix(1, 3), hp, false);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(s.m.values()[i], m1.values()[i] * std::pow(0.9, k), 1e-15);
    }
  }
  EXPECT_EQ(s.t, 21u);
}

TEST(UpdateMoments, ConstantGradientFixedPoints) {
  const HyperParams hp;
  const DenseMatrix g{{0.5, -4}};
  OptimizerState s = OptimizerState::zeros(1, 2, true);
  for (int k = 0; k < 2000; ++k) s = update_moments(s, g, hp, true);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(s.m.values()[i], g.values()[i], 1e-12);
    EXPECT_NEAR(s.v->values()[i], g.values()[i] * g.values()[i], 1e-12);
  }
}

TEST(UpdateMoments, SecondMomentNonNegative) {
  const HyperParams hp;
  Rng rng(4);
  OptimizerState s = OptimizerState::zeros(3, 3, true);
  for (int k = 0; k < 100; ++k) {
    s = update_moments(s, random_normal(3, 3, rng, 10.0), hp, true);
    for (double v : s.v->values()) EXPECT_GE(v, 0.0);
  }
}

TEST(UpdateMoments, PoisonedGradientNamesParameter) {
  const HyperParams hp;
  DenseMatrix g(2, 2);
  g(1, 0) = std::nan("");
  try {
    update_moments(OptimizerState::zeros(2, 2, false), g, hp, false, "mlp.w1");
    FAIL();
  } catch (const PoisonedGradientError& e) {
    EXPECT_NE(std::string(e.what()).find("mlp.w1"), std::string::npos);
  }
  EXPECT_THROW(update_moments(OptimizerState::zeros(2, 2, false), DenseMatrix(2, 3), hp, false),
               ShapeError);
}

// ---------------------------------------------------------------- input

TEST(MakeInput, FirstStepRmsMagnitude) {
  HyperParams hp;
  hp.eps = 0.0;
  const double expected = (1 - hp.beta1) / std::sqrt(1 - hp.beta2);
  EXPECT_NEAR(expected, 0.4472135954999579, 1e-15);
  Rng rng(5);
  const DenseMatrix g = random_normal(4, 3, rng, 100.0);
  const auto s = update_moments(OptimizerState::zeros(4, 3, true), g, hp, true);
  const DenseMatrix o = make_input(s, InputKind::RmsNormalized, hp);
  for (std::size_t i = 0; i < o.size(); ++i) {
    EXPECT_NEAR(o.values()[i], std::copysign(expected, g.values()[i]), 1e-15);
  }
}

TEST(MakeInput, MomentumVerbatimAndEpsGuard) {
  const HyperParams hp;
  OptimizerState s = OptimizerState::zeros(2, 2, true);
  s.m = DenseMatrix{{1, 2}, {3, 4}};
  s.t = 1;
  EXPECT_EQ(make_input(s, InputKind::Momentum, hp), s.m);
  const DenseMatrix o = make_input(s, InputKind::RmsNormalized, hp);
  EXPECT_TRUE(o.all_finite());
  EXPECT_DOUBLE_EQ(o(1, 1), 4.0 / 1e-8);
  EXPECT_THROW(make_input(OptimizerState::zeros(2, 2, true), InputKind::Momentum, hp),
               PreconditionError);
}

TEST(MakeInput, BoundednessProbe) {
  HyperParams hp;
  hp.eps = 0.0;
  const double bound = rms_input_bound(hp.beta1, hp.beta2);
  EXPECT_NEAR(bound, 1.1649647450214353, 1e-12);

  // Brute force over every +-1 history of length <= 12; the first
  // coordinate is the probe, the sign pattern is the history.
  double brute = 0.0;
  for (int len = 1; len <= 12; ++len) {
    for (unsigned mask = 0; mask < (1u << len); ++mask) {
      double m = 0, v = 0;
      for (int k = 0; k < len; ++k) {
        const double g = (mask >> k) & 1u ? 1.0 : -1.0;
        m = hp.beta1 * m + (1 - hp.beta1) * g;
        v = hp.beta2 * v + (1 - hp.beta2) * g * g;
      }
      brute = std::max(brute, std::abs(m) / std::sqrt(v));
    }
  }
  EXPECT_LT(brute, bound);

  // Magnitudes proportional to the Cauchy-Schwarz extremal ratio approach
  // the bound from below.
  double m = 0, v = 0;
  const int len = 400;
  for (int k = 0; k < len; ++k) {
    const double g = std::pow(hp.beta1 / hp.beta2, len - 1 - k);
    m = hp.beta1 * m + (1 - hp.beta1) * g;
    v = hp.beta2 * v + (1 - hp.beta2) * g * g;
  }
  EXPECT_LE(m / std::sqrt(v), bound * (1 + 1e-12));
  EXPECT_GT(m / std::sqrt(v), bound * (1 - 1e-9));

  // Library trajectory on random heavy-tailed gradients.
  Rng rng(6);
  OptimizerState s = OptimizerState::zeros(8, 8, true);
  double observed = 0;
  for (int t = 0; t < 500; ++t) {
    DenseMatrix g = random_normal(8, 8, rng);
    for (double& x : g.values()) x *= std::exp(3 * rng.normal());
    s = update_moments(s, g, hp, true);
    const DenseMatrix input = make_input(s, InputKind::RmsNormalized, hp);
    for (double x : input.values()) {
      observed = std::max(observed, std::abs(x));
    }
  }
  EXPECT_LT(observed, bound);
}

// ---------------------------------------------------------------- steps

TEST(StepMatrix, MomentumSgdIsPlainUpdate) {
  HyperParams hp;
  hp.lr_mat = 0.05;
  Rng rng(7);
  const DenseMatrix w = random_normal(4, 3, rng), g = random_normal(4, 3, rng);
  const auto out = step_matrix_param(w, g, OptimizerState::zeros_like(w, false), kMsgd, hp);
  EXPECT_FALSE(out.state.v.has_value());
  EXPECT_FALSE(out.diagnostics.has_value());
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(out.w.values()[i], w.values()[i] - 0.05 * out.state.m.values()[i]);
  }
}

TEST(StepMatrix, AdamIsRmsUpdate) {
  HyperParams hp;
  hp.lr_mat = 0.01;
  Rng rng(8);
  const DenseMatrix w = random_normal(3, 5, rng), g = random_normal(3, 5, rng);
  const auto out = step_matrix_param(w, g, OptimizerState::zeros_like(w, true), kAdam, hp);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double m = out.state.m.values()[i], v = out.state.v->values()[i];
    EXPECT_EQ(out.w.values()[i], w.values()[i] - 0.01 * (m / (std::sqrt(v) + hp.eps)));
  }
}

TEST(StepMatrix, FanScaling) {
  HyperParams hp;
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::Zero, hp), 2.0);
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::Half, hp), 1.0);
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::One, hp), 1.0);
  hp.fan_scaling_all_spectral = true;
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::Quarter, hp), 2.0);
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::One, hp), 1.0);
  hp.fan_scaling = false;
  EXPECT_DOUBLE_EQ(fan_scale(64, 16, SpectralExponent::Zero, hp), 1.0);

  // Applied to the actual update of a 64x16 parameter.
  HyperParams on, off;
  off.fan_scaling = false;
  Rng rng(9);
  const DenseMatrix w = random_normal(64, 16, rng), g = random_normal(64, 16, rng);
  const auto a = step_matrix_param(w, g, OptimizerState::zeros_like(w, false), kMuon, on);
  const auto b = step_matrix_param(w, g, OptimizerState::zeros_like(w, false), kMuon, off);
  const DenseMatrix da = subtract(w, a.w), db = subtract(w, b.w);
  EXPECT_LE(frobenius_distance(da, scale(db, 2.0)), 1e-15 * frobenius_norm(w));
  ASSERT_TRUE(a.diagnostics.has_value());
  EXPECT_EQ(a.diagnostics->iterations_run, on.polar_iters);
}

TEST(StepMatrix, RoutingAndShapeErrors) {
  const HyperParams hp;
  EXPECT_THROW(step_matrix_param(DenseMatrix(1, 4), DenseMatrix(1, 4),
                                 OptimizerState::zeros(1, 4, false), kMsgd, hp),
               RoutingError);
  EXPECT_THROW(step_matrix_param(DenseMatrix(3, 3), DenseMatrix(3, 2),
                                 OptimizerState::zeros(3, 3, false), kMsgd, hp),
               ShapeError);
  EXPECT_THROW(step_vector_param(DenseMatrix(3, 3), DenseMatrix(3, 3),
                                 OptimizerState::zeros(3, 3, true), hp),
               RoutingError);
}

TEST(StepMatrix, KernelErrorsCarryParameterName) {
  const HyperParams hp;
  try {
    step_matrix_param(DenseMatrix(3, 3), DenseMatrix(3, 3), OptimizerState::zeros(3, 3, false),
                      kMuon, hp, "embed");
    FAIL();
  } catch (const DegenerateInputError& e) {
    EXPECT_NE(std::string(e.what()).find("'embed'"), std::string::npos) << e.what();
  }
}

TEST(StepMatrix, NoWeightDecay) {
  // Zero gradient from zero state: nothing moves for any optimizer with
  // p = 1, since there is no decay term pulling weights toward zero.
  const HyperParams hp;
  Rng rng(10);
  const DenseMatrix w = random_normal(5, 4, rng);
  for (const auto& kind : {kMsgd, kAdam}) {
    auto s = OptimizerState::zeros_like(w, kind.needs_second_moment());
    DenseMatrix cur = w;
    for (int t = 0; t < 10; ++t) {
      auto r = step_matrix_param(cur, DenseMatrix(5, 4), s, kind, hp);
      cur = r.w;
      s = r.state;
    }
    EXPECT_EQ(cur, w);
  }
}

TEST(StepVector, FirstStepIsSignTimesConstant) {
  HyperParams hp;
  hp.eps = 0.0;
  const DenseMatrix w{{1, 2, 3, 4}};
  const DenseMatrix g{{0.3, -7, 1e-3, -0.2}};
  const auto r = step_vector_param(w, g, OptimizerState::zeros_like(w, true), hp);
  const double c = (1 - hp.beta1) / std::sqrt(1 - hp.beta2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(r.w.values()[i], w.values()[i] - hp.lr_vec * std::copysign(c, g.values()[i]),
                1e-15);
  }
}

TEST(StepVector, ZeroGradientLeavesWeightsAlone) {
  const HyperParams hp;
  const DenseMatrix w{{1}, {-2}, {3}};
  auto s = OptimizerState::zeros_like(w, true);
  DenseMatrix cur = w;
  for (int t = 0; t < 50; ++t) {
    auto r = step_vector_param(cur, DenseMatrix(3, 1), s, hp);
    cur = r.w;
    s = r.state;
  }
  EXPECT_EQ(cur, w);
}

TEST(StepVector, MatchesMatrixAdamPathOnReshapedParameter) {
  // The same 12 numbers stepped as a 1x12 vector and as a 3x4 matrix with
  // (Adam, One) and lr_mat = lr_vec.
  HyperParams hp;
  hp.lr_mat = hp.lr_vec;
  Rng rng(11);
  std::vector<double> init = flat(random_normal(1, 12, rng));
  DenseMatrix wv(1, 12, init), wm(3, 4, init);
  auto sv = OptimizerState::zeros_like(wv, true);
  auto sm = OptimizerState::zeros_like(wm, true);
  for (int t = 0; t < 50; ++t) {
    const std::vector<double> g = flat(random_normal(1, 12, rng));
    auto rv = step_vector_param(wv, DenseMatrix(1, 12, g), sv, hp);
    auto rm = step_matrix_param(wm, DenseMatrix(3, 4, g), sm, kAdam, hp);
    wv = rv.w;
    sv = rv.state;
    wm = rm.w;
    sm = rm.state;
  }
  EXPECT_TRUE(std::equal(wv.values().begin(), wv.values().end(), wm.values().begin()));
}

TEST(Reduction, MomentumSgdMatchesReference500Steps) {
  HyperParams hp;
  hp.lr_mat = 0.03;
  Rng rng(12);
  DenseMatrix w = random_normal(6, 5, rng);
  std::vector<double> ref_w = flat(w);
  ReferenceMomentumSgd ref{std::vector<double>(30, 0.0), hp.beta1, hp.lr_mat};
  auto s = OptimizerState::zeros_like(w, false);
  for (int t = 0; t < 500; ++t) {
    const DenseMatrix g = random_normal(6, 5, rng);
    auto r = step_matrix_param(w, g, s, kMsgd, hp);
    w = r.w;
    s = r.state;
    ref.step(ref_w, flat(g));
    ASSERT_LE(max_abs_diff(ref_w, w.values()), 1e-12) << "step " << t + 1;
  }
}

TEST(Reduction, AdamMatchesReference500Steps) {
  HyperParams hp;
  hp.lr_mat = 0.002;
  Rng rng(13);
  DenseMatrix w = random_normal(5, 7, rng);
  std::vector<double> ref_w = flat(w);
  ReferenceAdam ref{std::vector<double>(35, 0.0), std::vector<double>(35, 0.0), hp.beta1, hp.beta2,
                    hp.eps, hp.lr_mat};
  auto s = OptimizerState::zeros_like(w, true);
  for (int t = 0; t < 500; ++t) {
    const DenseMatrix g = random_normal(5, 7, rng);
    auto r = step_matrix_param(w, g, s, kAdam, hp);
    w = r.w;
    s = r.state;
    ref.step(ref_w, flat(g));
    ASSERT_LE(max_abs_diff(ref_w, w.values()), 1e-12) << "step " << t + 1;
  }
}

TEST(Invariance, MuonDirectionIgnoresGradientScale) {
  HyperParams hp;
  hp.lr_mat = 0.01;
  Rng rng(14);
  std::vector<DenseMatrix> grads;
  for (int t = 0; t < 30; ++t) grads.push_back(random_normal(8, 6, rng));
  const DenseMatrix w0 = random_normal(8, 6, rng);
  auto run = [&](double c) {
    DenseMatrix w = w0;
    auto s = OptimizerState::zeros_like(w, false);
    for (const auto& g : grads) {
      auto r = step_matrix_param(w, scale(g, c), s, kMuon, hp);
      w = r.w;
      s = r.state;
    }
    return w;
  };
  const DenseMatrix base = run(1.0);
  for (double c : {1e-4, 0.3, 50.0}) {
    EXPECT_LE(frobenius_distance(run(c), base), 1e-12 * frobenius_norm(base)) << "c=" << c;
  }
}

TEST(Purity, ReplayIsBitIdentical) {
  HyperParams hp;
  hp.lr_mat = 0.02;
  Rng rng(15);
  std::vector<DenseMatrix> grads;
  for (int t = 0; t < 20; ++t) grads.push_back(random_normal(6, 4, rng));
  const DenseMatrix w0 = random_normal(6, 4, rng);
  for (const auto& kind : kAllOptimizers) {
    auto run = [&] {
      DenseMatrix w = w0;
      auto s = OptimizerState::zeros_like(w, kind.needs_second_moment());
      for (const auto& g : grads) {
        auto r = step_matrix_param(w, g, s, kind, hp);
        w = r.w;
        s = r.state;
      }
      return w;
    };
    EXPECT_EQ(run(), run()) << kind.display_name();
  }
}

TEST(AllOptimizers, StepProducesFiniteUpdateOfExpectedSize) {
  HyperParams hp;
  hp.lr_mat = 1.0;
  Rng rng(16);
  const DenseMatrix w(10, 6), g = random_normal(10, 6, rng);
  for (const auto& kind : kAllOptimizers) {
    const auto r = step_matrix_param(w, g, OptimizerState::zeros_like(w, kind.needs_second_moment()),
                                     kind, hp);
    EXPECT_TRUE(r.w.all_finite());
    EXPECT_EQ(r.diagnostics.has_value(), kind.exponent != SpectralExponent::One);
    // Psi_p of the input has singular values sigma^p, so for the p = 0
    // family every singular value is in the quintic band (times fan scale).
    if (kind.exponent == SpectralExponent::Zero) {
      const double fan = std::sqrt(10.0 / 6.0);
      for (double s : oracle::singular_values(scale(r.w, -1.0 / fan))) {
        EXPECT_GE(s, calibration::kQuinticBandLow);
        EXPECT_LE(s, calibration::kQuinticBandHigh);
      }
    }
  }
}
