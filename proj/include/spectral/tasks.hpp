// SPDX-License-Identifier: Apache-2.0
//
// Two small differentiable training problems with hand-written gradients.
//
// MatrixRegression
//   W (32 x 24), fixed A (rows x 32) and B (24 x 32), targets
//   C = A W* B + noise. Per-example loss 1/2 ||a_r W B - c_r||^2, averaged
//   over the batch; gradient A_R^T (A_R W B - C_R) B^T / |R|.
//
// CharMlpLm
//   Next-byte model over a 96-symbol vocabulary (0 = any byte outside the
//   printable ASCII range, 1..95 = bytes 32..126). Eight context symbols are
//   embedded (E, 96 x 16), concatenated to 128 features and fed through
//       h = gelu(x W1^T + b1),  logits = h W2^T + b2
//   with W1 (128 x 128), W2 (96 x 128). Loss is mean cross-entropy in nats.
//
// Parameters are stored (fan_out x fan_in); biases are 1 x n vectors.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spectral/corpus_text.hpp"
#include "spectral/dense.hpp"
#include "spectral/errors.hpp"
#include "spectral/random.hpp"

namespace spectral {

struct Param {
  std::string name;
  DenseMatrix value;
};

using ParamSet = std::vector<Param>;
/// Gradients aligned index-for-index with a ParamSet.
using GradSet = std::vector<DenseMatrix>;

enum class TaskKind { MatrixRegression, CharMlpLm };

inline std::string_view task_token(TaskKind k) {
  return k == TaskKind::MatrixRegression ? "regression" : "charlm";
}

inline std::optional<TaskKind> parse_task(std::string_view s) {
  if (s == "regression") return TaskKind::MatrixRegression;
  if (s == "charlm") return TaskKind::CharMlpLm;
  return std::nullopt;
}

struct TaskSpec {
  TaskKind kind = TaskKind::MatrixRegression;
  /// CharMlpLm only; empty selects the bundled corpus.
  std::string corpus_path;
};

class Task {
 public:
  virtual ~Task() = default;

  virtual ParamSet initial_params() const = 0;
  virtual std::size_t train_size() const = 0;
  virtual double loss(const ParamSet& params, std::span<const std::size_t> batch) const = 0;
  /// Fills `grad` (resized to match params) and returns the batch loss.
  virtual double loss_and_grad(const ParamSet& params, std::span<const std::size_t> batch,
                               GradSet& grad) const = 0;
  /// Loss on the held-out split.
  virtual double eval_loss(const ParamSet& params) const = 0;
};

namespace detail {

inline DenseMatrix gather_rows(const DenseMatrix& src, std::span<const std::size_t> rows) {
  DenseMatrix out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= src.rows()) throw PreconditionError("batch index out of range");
    auto s = src.row(rows[i]);
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = begin + i;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct RegressionDims {
  std::size_t in = 32;       // rows of W
  std::size_t hidden = 24;   // cols of W
  std::size_t out = 32;      // cols of B
  std::size_t train_rows = 256;
  std::size_t eval_rows = 64;
  double noise = 0.1;
};

class MatrixRegression final : public Task {
 public:
  explicit MatrixRegression(std::uint64_t seed, RegressionDims dims = {})
      : dims_(dims),
        a_(dims.train_rows + dims.eval_rows, dims.in),
        b_(dims.hidden, dims.out),
        w_star_(dims.in, dims.hidden),
        c_(dims.train_rows + dims.eval_rows, dims.out) {
    Rng rng(derive_seed(seed, 0x5245));
    a_ = random_normal(a_.rows(), a_.cols(), rng);
    w_star_ = random_normal(dims.in, dims.hidden, rng, 1.0 / std::sqrt(double(dims.in)));
    b_ = random_normal(dims.hidden, dims.out, rng, 1.0 / std::sqrt(double(dims.hidden)));
    c_ = matmul(matmul(a_, w_star_), b_);
    for (double& v : c_.values()) v += dims.noise * rng.normal();
  }

  ParamSet initial_params() const override { return {{"w", DenseMatrix(dims_.in, dims_.hidden)}}; }
  std::size_t train_size() const override { return dims_.train_rows; }

  double loss(const ParamSet& p, std::span<const std::size_t> batch) const override {
    return half_mse(residual(p, batch));
  }

  double loss_and_grad(const ParamSet& p, std::span<const std::size_t> batch,
                       GradSet& grad) const override {
    const DenseMatrix r = residual(p, batch);
    const DenseMatrix ar = detail::gather_rows(a_, batch);
    DenseMatrix g = matmul(matmul_tn(ar, r), transpose(b_));
    grad.assign(1, scale(g, 1.0 / static_cast<double>(batch.size())));
    return half_mse(r);
  }

  double eval_loss(const ParamSet& p) const override {
    const auto idx = detail::iota_indices(dims_.train_rows, dims_.train_rows + dims_.eval_rows);
    return half_mse(residual(p, idx));
  }

  const DenseMatrix& a() const { return a_; }
  const DenseMatrix& b() const { return b_; }
  const DenseMatrix& c() const { return c_; }
  const DenseMatrix& planted() const { return w_star_; }
  const RegressionDims& dims() const { return dims_; }

 private:
  DenseMatrix residual(const ParamSet& p, std::span<const std::size_t> rows) const {
    const DenseMatrix& w = p.at(0).value;
    const DenseMatrix ar = detail::gather_rows(a_, rows);
    return subtract(matmul(matmul(ar, w), b_), detail::gather_rows(c_, rows));
  }

  static double half_mse(const DenseMatrix& r) {
    double s = 0.0;
    for (double v : r.values()) s += v * v;
    return 0.5 * s / static_cast<double>(r.rows());
  }

  RegressionDims dims_;
  DenseMatrix a_, b_, w_star_, c_;
};

// ---------------------------------------------------------------------------

inline constexpr std::size_t kVocabSize = 96;

/// Byte -> symbol: printable ASCII 32..126 maps to 1..95, anything else to 0.
inline std::uint8_t encode_byte(unsigned char c) {
  return c >= 32 && c <= 126 ? static_cast<std::uint8_t>(c - 31) : 0;
}

inline std::vector<std::uint8_t> encode_text(std::string_view text) {
  std::vector<std::uint8_t> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) out[i] = encode_byte(static_cast<unsigned char>(text[i]));
  return out;
}

inline std::string load_corpus(const std::string& path) {
  if (path.empty()) return std::string(kBundledCorpus);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CharMlpDims {
  std::size_t context = 8;
  std::size_t embed = 16;
  std::size_t hidden = 128;
  double train_fraction = 0.9;
};

inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double k = 0.7978845608028654;
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
}

class CharMlpLm final : public Task {
 public:
  enum Slot : std::size_t { kEmbed = 0, kW1 = 1, kB1 = 2, kW2 = 3, kB2 = 4 };

  CharMlpLm(std::uint64_t seed, std::string_view text, CharMlpDims dims = {})
      : dims_(dims), seed_(seed), symbols_(encode_text(text)) {
    if (symbols_.size() < dims_.context + 20) {
      throw ConfigError("corpus too short: need at least " + std::to_string(dims_.context + 20) +
                        " bytes");
    }
    const std::size_t examples = symbols_.size() - dims_.context;
    train_count_ = static_cast<std::size_t>(static_cast<double>(examples) * dims_.train_fraction);
    eval_indices_ = detail::iota_indices(train_count_, examples);
  }

  std::size_t input_width() const { return dims_.context * dims_.embed; }
  const CharMlpDims& dims() const { return dims_; }

  ParamSet initial_params() const override {
    Rng rng(derive_seed(seed_, 0x4C4D));
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(input_width()));
    const double hid_scale = 1.0 / std::sqrt(static_cast<double>(dims_.hidden));
    ParamSet p;
    p.push_back({"embed", random_normal(kVocabSize, dims_.embed, rng)});
    p.push_back({"w1", random_normal(dims_.hidden, input_width(), rng, in_scale)});
    p.push_back({"b1", DenseMatrix(1, dims_.hidden)});
    p.push_back({"w2", random_normal(kVocabSize, dims_.hidden, rng, hid_scale)});
    p.push_back({"b2", DenseMatrix(1, kVocabSize)});
    return p;
  }

  std::size_t train_size() const override { return train_count_; }

  double loss(const ParamSet& p, std::span<const std::size_t> batch) const override {
    return forward(p, batch).loss;
  }

  double loss_and_grad(const ParamSet& p, std::span<const std::size_t> batch,
                       GradSet& grad) const override {
    Activations act = forward(p, batch);
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    // d logits = (softmax - onehot) / n, overwriting the probabilities.
    DenseMatrix& dlogits = act.probs;
    for (std::size_t i = 0; i < n; ++i) dlogits(i, target(batch[i])) -= 1.0;
    for (double& v : dlogits.values()) v *= inv_n;

    grad.assign(5, DenseMatrix(1, 1));
    grad[kW2] = matmul_tn(dlogits, act.h);
    grad[kB2] = column_sums(dlogits);

    DenseMatrix dpre = matmul(dlogits, p[kW2].value);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre.values()[i] *= gelu_derivative(act.pre.values()[i]);
    grad[kW1] = matmul_tn(dpre, act.x);
    grad[kB1] = column_sums(dpre);

    const DenseMatrix dx = matmul(dpre, p[kW1].value);
    DenseMatrix de(kVocabSize, dims_.embed);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dims_.context; ++j) {
        const std::size_t sym = symbols_[batch[i] + j];
        for (std::size_t d = 0; d < dims_.embed; ++d) de(sym, d) += dx(i, j * dims_.embed + d);
      }
    }
    grad[kEmbed] = std::move(de);
    return act.loss;
  }

  double eval_loss(const ParamSet& p) const override { return forward(p, eval_indices_).loss; }

 private:
  struct Activations {
    DenseMatrix x, pre, h, probs;
    double loss;
  };

  std::size_t target(std::size_t example) const { return symbols_[example + dims_.context]; }

  static DenseMatrix column_sums(const DenseMatrix& a) {
    DenseMatrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    return out;
  }

  Activations forward(const ParamSet& p, std::span<const std::size_t> batch) const {
    const std::size_t n = batch.size();
    if (n == 0) throw PreconditionError("CharMlpLm: empty batch");
    const DenseMatrix& e = p[kEmbed].value;
    DenseMatrix x(n, input_width());
    for (std::size_t i = 0; i < n; ++i) {
      if (batch[i] + dims_.context >= symbols_.size()) throw PreconditionError("example out of range");
      for (std::size_t j = 0; j < dims_.context; ++j) {
        const std::size_t sym = symbols_[batch[i] + j];
        for (std::size_t d = 0; d < dims_.embed; ++d) x(i, j * dims_.embed + d) = e(sym, d);
      }
    }
    DenseMatrix pre = matmul(x, transpose(p[kW1].value));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pre.cols(); ++j) pre(i, j) += p[kB1].value(0, j);
    DenseMatrix h = pre;
    for (double& v : h.values()) v = gelu(v);
    DenseMatrix probs = matmul(h, transpose(p[kW2].value));

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = probs.row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] += p[kB2].value(0, j);
        mx = std::max(mx, row[j]);
      }
      const double shifted_target = row[target(batch[i])] - mx;
      double z = 0.0;
      for (double& v : row) {
        v = std::exp(v - mx);
        z += v;
      }
      total += std::log(z) - shifted_target;
      for (double& v : row) v /= z;
    }
    return {std::move(x), std::move(pre), std::move(h), std::move(probs),
            total / static_cast<double>(n)};
  }

  CharMlpDims dims_;
  std::uint64_t seed_;
  std::vector<std::uint8_t> symbols_;
  std::size_t train_count_ = 0;
  std::vector<std::size_t> eval_indices_;
};

inline std::unique_ptr<Task> make_task(const TaskSpec& spec, std::uint64_t seed) {
  if (spec.kind == TaskKind::MatrixRegression) return std::make_unique<MatrixRegression>(seed);
  return std::make_unique<CharMlpLm>(seed, load_corpus(spec.corpus_path));
}

}  // namespace spectral
