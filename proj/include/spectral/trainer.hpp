// SPDX-License-Identifier: Apache-2.0
//
// Deterministic single-run training loop.
//
// Schedule: linear warmup to the peak rates over warmup_steps, then cosine
// decay to 10% of peak at total_steps. Matrix parameters (both dims > 1) go
// through the selected spectral optimizer with lr_mat; vectors through Adam
// with lr_vec. Both rates follow the same multiplier.
//
// Batches are drawn without replacement from a seeded shuffle of the
// training split, reshuffled on exhaustion. A run is declared diverged as
// soon as a batch or eval loss is non-finite or above the threshold
// (default 10x the initial eval loss), or a kernel fails inside a step.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spectral/errors.hpp"
#include "spectral/optim.hpp"
#include "spectral/random.hpp"
#include "spectral/tasks.hpp"

#ifndef SPECTRAL_VERSION
#define SPECTRAL_VERSION "0.0.0"
#endif

namespace spectral {

inline constexpr std::string_view kToolkitName = "spectral-toolkit";
inline constexpr std::string_view kToolkitVersion = SPECTRAL_VERSION;

struct TrainConfig {
  TaskSpec task;
  OptimizerKind optimizer;
  /// Only affects how the optimizer is echoed ("msgdz (muon)").
  bool optimizer_given_as_muon = false;
  HyperParams hp;
  int total_steps = 2000;
  int warmup_steps = 100;
  int batch_size = 32;
  int eval_every = 100;
  std::uint64_t seed = 0;
  /// <= 0 selects 10x the initial eval loss.
  double divergence_threshold = 0.0;
};

inline std::string optimizer_echo(const TrainConfig& cfg) {
  return cfg.optimizer_given_as_muon ? cfg.optimizer.token() + " (muon)" : cfg.optimizer.token();
}

inline void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (cfg.total_steps <= 0) fail("total_steps must be positive");
  if (cfg.warmup_steps <= 0) fail("warmup_steps must be positive");
  if (cfg.warmup_steps >= cfg.total_steps) fail("warmup_steps must be below total_steps");
  if (cfg.batch_size <= 0) fail("batch_size must be positive");
  if (cfg.eval_every <= 0) fail("eval_every must be positive");
  const HyperParams& hp = cfg.hp;
  if (!(hp.beta1 >= 0.0 && hp.beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(hp.beta2 >= 0.0 && hp.beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(hp.eps >= 0.0) || !std::isfinite(hp.eps)) fail("eps must be finite and >= 0");
  if (!(hp.lr_mat >= 0.0) || !std::isfinite(hp.lr_mat)) fail("lr_mat must be finite and >= 0");
  if (!(hp.lr_vec >= 0.0) || !std::isfinite(hp.lr_vec)) fail("lr_vec must be finite and >= 0");
  if (hp.polar_iters < 1) fail("polar_iters must be >= 1");
  if (hp.root_iters < 1) fail("root_iters must be >= 1");
  if (!std::isfinite(cfg.divergence_threshold)) fail("divergence_threshold must be finite");
}

/// Multiplier on the peak learning rates at 1-based `step`.
inline double lr_multiplier(int step, int warmup_steps, int total_steps) {
  if (step <= warmup_steps) return static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Seeded epoch-wise shuffling of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(derive_seed(seed, 0xBA7C)), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t batch_size) {
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    while (out.size() < batch_size) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct EvalRow {
  int step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double lr_mat_effective = 0.0;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

enum class Outcome { Completed, Diverged };

struct RunRecord {
  std::string config_digest;
  std::vector<EvalRow> rows;
  Outcome outcome = Outcome::Completed;
  int diverged_step = 0;
  std::string divergence_reason;
  double initial_loss = 0.0;
  double threshold = 0.0;
  /// Not part of any artifact; runs are compared without it.
  double wall_time_seconds = 0.0;

  bool completed() const { return outcome == Outcome::Completed; }
  double final_eval_loss() const { return rows.empty() ? std::nan("") : rows.back().eval_loss; }
  double final_train_loss() const { return rows.empty() ? std::nan("") : rows.back().train_loss; }

  /// Equality of everything except wall time.
  bool same_result(const RunRecord& o) const {
    auto bits_equal = [](double a, double b) {
      return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
    };
    if (rows.size() != o.rows.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto &a = rows[i], &b = o.rows[i];
      if (a.step != b.step || !bits_equal(a.train_loss, b.train_loss) ||
          !bits_equal(a.eval_loss, b.eval_loss) || !bits_equal(a.lr_mat_effective, b.lr_mat_effective))
        return false;
    }
    return config_digest == o.config_digest && outcome == o.outcome &&
           diverged_step == o.diverged_step && divergence_reason == o.divergence_reason &&
           bits_equal(initial_loss, o.initial_loss) && bits_equal(threshold, o.threshold);
  }
};

// ---------------------------------------------------------------------------
// Canonical text and digest

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return out;
}

inline std::string bool_token(bool b) { return b ? "true" : "false"; }

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Every setting that influences a training run, in a fixed order.
inline KeyValues canonical_settings(const TrainConfig& cfg) {
  const HyperParams& hp = cfg.hp;
  return {
      {"task", std::string(task_token(cfg.task.kind))},
      {"corpus", cfg.task.corpus_path},
      {"optimizer", cfg.optimizer_given_as_muon ? "muon" : cfg.optimizer.token()},
      {"lr_mat", format_shortest(hp.lr_mat)},
      {"lr_vec", format_shortest(hp.lr_vec)},
      {"beta1", format_shortest(hp.beta1)},
      {"beta2", format_shortest(hp.beta2)},
      {"eps", format_shortest(hp.eps)},
      {"polar_iters", std::to_string(hp.polar_iters)},
      {"root_iters", std::to_string(hp.root_iters)},
      {"polar_method", std::string(polar_method_token(hp.polar_method))},
      {"fan_scaling", bool_token(hp.fan_scaling)},
      {"fan_scaling_all", bool_token(hp.fan_scaling_all_spectral)},
      {"total_steps", std::to_string(cfg.total_steps)},
      {"warmup_steps", std::to_string(cfg.warmup_steps)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"eval_every", std::to_string(cfg.eval_every)},
      {"seed", std::to_string(cfg.seed)},
      {"divergence_threshold", format_shortest(cfg.divergence_threshold)},
  };
}

inline std::string render_settings(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += v.empty() ? k + " =\n" : k + " = " + v + "\n";
  return out;
}

inline std::string digest_of(const KeyValues& kv) { return hex64(fnv1a64(render_settings(kv))); }

inline std::string config_digest(const TrainConfig& cfg) {
  return digest_of(canonical_settings(cfg));
}

// ---------------------------------------------------------------------------

/// Called after every completed optimizer step with the updated parameters.
using StepObserver = std::function<void(int step, const ParamSet& params)>;

namespace detail {

inline double mean_loss(const Task& task, const ParamSet& params) {
  const auto idx = iota_indices(0, task.train_size());
  return task.loss(params, idx);
}

}  // namespace detail

inline RunRecord run_training(const TrainConfig& cfg, const StepObserver& observer = {}) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config_digest = config_digest(cfg);

  const auto task = make_task(cfg.task, cfg.seed);
  ParamSet params = task->initial_params();
  std::vector<OptimizerState> states;
  for (const auto& p : params) {
    const bool vec = is_vector_shape(p.value);
    states.push_back(OptimizerState::zeros_like(p.value, vec || cfg.optimizer.needs_second_moment()));
  }
  BatchSampler sampler(task->train_size(), cfg.seed);

  rec.initial_loss = task->eval_loss(params);
  rec.threshold = cfg.divergence_threshold > 0.0 ? cfg.divergence_threshold : 10.0 * rec.initial_loss;
  rec.rows.push_back({0, detail::mean_loss(*task, params), rec.initial_loss, 0.0});

  auto exceeded = [&](double loss) { return !std::isfinite(loss) || loss > rec.threshold; };
  auto diverge = [&](int step, std::string reason) {
    rec.outcome = Outcome::Diverged;
    rec.diverged_step = step;
    rec.divergence_reason = std::move(reason);
  };

  GradSet grads;
  double window_sum = 0.0;
  int window_count = 0;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const double mult = lr_multiplier(step, cfg.warmup_steps, cfg.total_steps);
    HyperParams hp = cfg.hp;
    hp.lr_mat *= mult;
    hp.lr_vec *= mult;

    const auto batch = sampler.next(static_cast<std::size_t>(cfg.batch_size));
    const double loss = task->loss_and_grad(params, batch, grads);
    window_sum += loss;
    ++window_count;
    if (exceeded(loss)) {
      rec.rows.push_back({step, loss, task->eval_loss(params), hp.lr_mat});
      diverge(step, "batch loss " + format_shortest(loss) + " past threshold " +
                        format_shortest(rec.threshold));
      break;
    }

    try {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = params[i];
        if (is_vector_shape(p.value)) {
          auto r = step_vector_param(p.value, grads[i], states[i], hp, p.name);
          p.value = std::move(r.w);
          states[i] = std::move(r.state);
        } else {
          auto r = step_matrix_param(p.value, grads[i], states[i], cfg.optimizer, hp, p.name);
          p.value = std::move(r.w);
          states[i] = std::move(r.state);
        }
      }
    } catch (const Error& e) {
      // No valid update exists for this step; the row is marked with a NaN
      // train loss.
      rec.rows.push_back({step, std::nan(""), task->eval_loss(params), hp.lr_mat});
      diverge(step, e.what());
      break;
    }
    if (observer) observer(step, params);

    if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
      const double eval = task->eval_loss(params);
      rec.rows.push_back({step, window_sum / window_count, eval, hp.lr_mat});
      window_sum = 0.0;
      window_count = 0;
      if (exceeded(eval)) {
        diverge(step, "eval loss " + format_shortest(eval) + " past threshold " +
                          format_shortest(rec.threshold));
        break;
      }
    }
  }
  rec.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---------------------------------------------------------------------------
// CSV export

inline std::string artifact_banner(const std::string& digest) {
  return std::string(kToolkitName) + " " + std::string(kToolkitVersion) + " digest=" + digest;
}

inline void write_run_csv(std::ostream& os, const RunRecord& rec, const TrainConfig& cfg) {
  os << "# " << artifact_banner(rec.config_digest) << " optimizer=" << optimizer_echo(cfg)
     << " task=" << task_token(cfg.task.kind) << "\n";
  os << "step,train_loss,eval_loss,lr_mat_effective\n";
  for (const auto& r : rec.rows) {
    os << r.step << ',' << format_double(r.train_loss) << ',' << format_double(r.eval_loss) << ','
       << format_double(r.lr_mat_effective) << '\n';
  }
  os << "# outcome=" << (rec.completed() ? "completed" : "diverged");
  if (!rec.completed()) os << " step=" << rec.diverged_step;
  os << " threshold=" << format_double(rec.threshold) << "\n";
}

inline std::string run_csv(const RunRecord& rec, const TrainConfig& cfg) {
  std::ostringstream os;
  write_run_csv(os, rec, cfg);
  return os.str();
}

}  // namespace spectral
