// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams and random-matrix generators.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The distributions below are written out by hand because the
// standard library's distributions are implementation-defined; this keeps
// every seeded experiment reproducible across toolchains.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "spectral/dense.hpp"

namespace spectral {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; one cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Seed for an independent child stream (splitmix64 finaliser).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline DenseMatrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  DenseMatrix out(rows, cols);
  for (double& v : out.values()) v = stddev * rng.normal();
  return out;
}

/// rows x cols (rows >= cols) with orthonormal columns: modified Gram-Schmidt
/// on a Gaussian matrix, run twice for full working precision.
inline DenseMatrix random_orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows < cols) throw ShapeError("random_orthonormal_columns: need rows >= cols");
  DenseMatrix q = random_normal(rows, cols, rng);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < rows; ++i) dot += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < rows; ++i) q(i, j) -= dot * q(i, k);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < rows; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < rows; ++i) q(i, j) /= norm;
    }
  }
  return q;
}

/// A matrix with prescribed singular values: U diag(sigma) V^T with Haar-like
/// random U (rows x r) and V (cols x r), r = sigma.size() <= min(rows, cols).
inline DenseMatrix random_with_singular_values(std::size_t rows, std::size_t cols,
                                               const std::vector<double>& sigma, Rng& rng) {
  const std::size_t r = sigma.size();
  DenseMatrix u = random_orthonormal_columns(rows, r, rng);
  DenseMatrix v = random_orthonormal_columns(cols, r, rng);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < r; ++k) u(i, k) *= sigma[k];
  return matmul(u, transpose(v));
}

/// Full-rank matrix with condition number exactly `kappa` (up to rounding):
/// singular values log-spaced from 1 down to 1/kappa.
inline DenseMatrix random_conditioned(std::size_t rows, std::size_t cols, double kappa, Rng& rng) {
  const std::size_t r = std::min(rows, cols);
  std::vector<double> sigma(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double t = r == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(r - 1);
    sigma[i] = std::pow(kappa, -t);
  }
  return random_with_singular_values(rows, cols, sigma, rng);
}

/// Symmetric positive definite test matrix G^T G / n + shift * I.
inline DenseMatrix random_spd(std::size_t n, Rng& rng, double shift = 0.1) {
  DenseMatrix g = random_normal(n, n, rng);
  DenseMatrix x = scale(matmul_tn(g, g), 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) x(i, i) += shift;
  return symmetrize(x);
}

}  // namespace spectral
