// SPDX-License-Identifier: Apache-2.0
//
// Two-stage learning-rate sweep over lr_mat.
//
// Stage one runs every point of a coarse logarithmic grid. Stage two
// repeatedly multiplies the incumbent (best completed run so far) by a set
// of local factors and runs the candidates not yet evaluated. Refinement
// stops when the incumbent is strictly better than both of its immediate
// neighbours among the evaluated rates, when no new candidate remains, or
// after max_fine_rounds rounds. At least one round runs when
// max_fine_rounds > 0, since a coarse-grid winner beating its neighbours
// says nothing about the finer scale.
//
// Every trial shares the base config, seed included, so trials of one
// optimizer differ only in lr_mat. Trials inside a stage run concurrently;
// results are stored by trial index, so reports do not depend on timing.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "spectral/errors.hpp"
#include "spectral/trainer.hpp"

namespace spectral {

struct SweepPlan {
  std::vector<double> coarse_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> refine_factors{0.31622776601683794, 0.56234132519034907, 1.7782794100389228,
                                     3.1622776601683795};
  int max_fine_rounds = 8;
  /// 0 selects the hardware concurrency.
  int threads = 0;
};

inline void validate(const SweepPlan& plan) {
  if (plan.coarse_grid.empty()) throw ConfigError("coarse_grid must not be empty");
  if (plan.refine_factors.empty()) throw ConfigError("refine_factors must not be empty");
  for (std::size_t i = 0; i < plan.coarse_grid.size(); ++i) {
    const double lr = plan.coarse_grid[i];
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("coarse_grid values must be finite and > 0");
    if (i > 0 && !(lr > plan.coarse_grid[i - 1]))
      throw ConfigError("coarse_grid must be strictly ascending");
  }
  for (double f : plan.refine_factors) {
    if (!(f > 0.0) || !std::isfinite(f) || f == 1.0)
      throw ConfigError("refine_factors must be finite, > 0 and != 1");
  }
  if (plan.max_fine_rounds < 0) throw ConfigError("max_fine_rounds must be >= 0");
  if (plan.threads < 0) throw ConfigError("threads must be >= 0");
}

struct Trial {
  OptimizerKind optimizer;
  double lr_mat = 0.0;
  int round = 0;  // 0 = coarse, k = k-th fine round
  RunRecord record;
};

enum class StabilityLabel { Stable, Diverged };

struct StabilityProfile {
  std::vector<std::pair<double, StabilityLabel>> labels;  // ascending lr
  /// Contiguous completed region containing the best run.
  std::optional<std::pair<double, double>> best_region;
  /// Widest contiguous completed region.
  std::optional<std::pair<double, double>> widest_region;

  static double decades(const std::optional<std::pair<double, double>>& r) {
    return r ? std::log10(r->second / r->first) : 0.0;
  }
  double best_region_decades() const { return decades(best_region); }
  double widest_span_decades() const { return decades(widest_region); }
};

enum class StopReason { Neighbours, NoCandidates, MaxRounds, AllDiverged, NoFineRounds };

inline std::string_view stop_reason_token(StopReason r) {
  switch (r) {
    case StopReason::Neighbours: return "beats_neighbours";
    case StopReason::NoCandidates: return "no_new_candidates";
    case StopReason::MaxRounds: return "max_fine_rounds";
    case StopReason::AllDiverged: return "all_diverged";
    case StopReason::NoFineRounds: return "no_fine_rounds";
  }
  return "?";
}

struct OptimizerSweep {
  OptimizerKind optimizer;
  std::vector<std::size_t> trials;  // indices into SweepReport::trials
  std::optional<std::size_t> best;  // index into SweepReport::trials
  int fine_rounds = 0;
  StopReason stop = StopReason::NoFineRounds;
  StabilityProfile stability;
};

struct SweepReport {
  std::vector<Trial> trials;  // in execution order
  std::vector<OptimizerSweep> per_optimizer;
  /// Best trial per optimizer that completed, ascending eval loss.
  std::vector<std::size_t> ranking;

  bool all_diverged() const { return ranking.empty(); }
  const Trial* best() const { return ranking.empty() ? nullptr : &trials[ranking.front()]; }
};

// ---------------------------------------------------------------------------

/// Orders trials: completed before diverged, completed by final eval loss,
/// ties and diverged runs by lr.
inline bool trial_better(const Trial& a, const Trial& b) {
  const bool ca = a.record.completed(), cb = b.record.completed();
  if (ca != cb) return ca;
  if (ca) {
    const double la = a.record.final_eval_loss(), lb = b.record.final_eval_loss();
    if (la != lb) return la < lb;
  }
  return a.lr_mat < b.lr_mat;
}

inline bool same_rate(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(a, b); }

/// Labels and stable regions; `records` need not be sorted.
inline StabilityProfile classify_stability(const std::vector<const Trial*>& records) {
  if (records.size() < 2) throw PreconditionError("classify_stability needs at least 2 records");
  std::vector<const Trial*> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const Trial* a, const Trial* b) { return a->lr_mat < b->lr_mat; });
  StabilityProfile out;
  const Trial* best = nullptr;
  for (const Trial* t : sorted) {
    out.labels.emplace_back(t->lr_mat, t->record.completed() ? StabilityLabel::Stable
                                                             : StabilityLabel::Diverged);
    if (t->record.completed() && (!best || trial_better(*t, *best))) best = t;
  }
  std::size_t i = 0;
  while (i < sorted.size()) {
    if (!sorted[i]->record.completed()) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1]->record.completed()) ++j;
    const std::pair<double, double> region{sorted[i]->lr_mat, sorted[j]->lr_mat};
    if (!out.widest_region ||
        region.second / region.first > out.widest_region->second / out.widest_region->first)
      out.widest_region = region;
    for (std::size_t k = i; k <= j; ++k)
      if (sorted[k] == best) out.best_region = region;
    i = j + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

inline int resolve_threads(int requested, std::size_t jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  n = std::max(1, n);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), jobs));
}

/// Runs fn(i) for i in [0, n) on `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = resolve_threads(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

using TrialRunner = std::function<RunRecord(const TrainConfig&)>;

inline RunRecord default_trial_runner(const TrainConfig& cfg) { return run_training(cfg); }

inline SweepReport run_sweep(const TrainConfig& base, const SweepPlan& plan,
                             const std::vector<OptimizerKind>& optimizers,
                             const TrialRunner& runner = default_trial_runner) {
  validate(plan);
  if (optimizers.empty()) throw ConfigError("sweep needs at least one optimizer");
  TrainConfig probe = base;
  probe.hp.lr_mat = plan.coarse_grid.front();
  validate(probe);

  SweepReport report;
  struct Job {
    std::size_t opt;
    double lr;
    int round;
  };
  auto run_jobs = [&](const std::vector<Job>& jobs) {
    std::vector<RunRecord> records(jobs.size());
    detail::parallel_for(jobs.size(), plan.threads, [&](std::size_t i) {
      TrainConfig cfg = base;
      cfg.optimizer = optimizers[jobs[i].opt];
      cfg.optimizer_given_as_muon = false;
      cfg.hp.lr_mat = jobs[i].lr;
      records[i] = runner(cfg);
    });
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      report.per_optimizer[jobs[i].opt].trials.push_back(report.trials.size());
      report.trials.push_back({optimizers[jobs[i].opt], jobs[i].lr, jobs[i].round, std::move(records[i])});
    }
  };
  auto best_of = [&](const OptimizerSweep& s) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t idx : s.trials) {
      if (!report.trials[idx].record.completed()) continue;
      if (!best || trial_better(report.trials[idx], report.trials[*best])) best = idx;
    }
    return best;
  };
  auto beats_neighbours = [&](const OptimizerSweep& s, std::size_t inc) {
    const double lr = report.trials[inc].lr_mat;
    const Trial *below = nullptr, *above = nullptr;
    for (std::size_t idx : s.trials) {
      const Trial& t = report.trials[idx];
      if (t.lr_mat < lr && !same_rate(t.lr_mat, lr) && (!below || t.lr_mat > below->lr_mat)) below = &t;
      if (t.lr_mat > lr && !same_rate(t.lr_mat, lr) && (!above || t.lr_mat < above->lr_mat)) above = &t;
    }
    return below && above && trial_better(report.trials[inc], *below) &&
           trial_better(report.trials[inc], *above);
  };

  for (const auto& k : optimizers) report.per_optimizer.push_back({k, {}, std::nullopt, 0, {}, {}});

  std::vector<Job> coarse;
  for (std::size_t o = 0; o < optimizers.size(); ++o)
    for (double lr : plan.coarse_grid) coarse.push_back({o, lr, 0});
  run_jobs(coarse);

  std::vector<bool> active(optimizers.size(), false);
  for (std::size_t o = 0; o < optimizers.size(); ++o) {
    OptimizerSweep& s = report.per_optimizer[o];
    s.best = best_of(s);
    if (!s.best) s.stop = StopReason::AllDiverged;
    else if (plan.max_fine_rounds == 0) s.stop = StopReason::NoFineRounds;
    else active[o] = true;
  }

  for (int round = 1; round <= plan.max_fine_rounds; ++round) {
    std::vector<Job> jobs;
    for (std::size_t o = 0; o < optimizers.size(); ++o) {
      if (!active[o]) continue;
      OptimizerSweep& s = report.per_optimizer[o];
      if (round > 1 && beats_neighbours(s, *s.best)) {
        s.stop = StopReason::Neighbours;
        active[o] = false;
        continue;
      }
      const double inc = report.trials[*s.best].lr_mat;
      std::vector<double> fresh;
      for (double f : plan.refine_factors) {
        const double lr = inc * f;
        const bool seen =
            std::any_of(s.trials.begin(), s.trials.end(),
                        [&](std::size_t idx) { return same_rate(report.trials[idx].lr_mat, lr); }) ||
            std::any_of(fresh.begin(), fresh.end(), [&](double x) { return same_rate(x, lr); });
        if (!seen) fresh.push_back(lr);
      }
      if (fresh.empty()) {
        s.stop = StopReason::NoCandidates;
        active[o] = false;
        continue;
      }
      std::sort(fresh.begin(), fresh.end());
      for (double lr : fresh) jobs.push_back({o, lr, round});
      s.fine_rounds = round;
    }
    if (jobs.empty()) break;
    run_jobs(jobs);
    for (std::size_t o = 0; o < optimizers.size(); ++o)
      if (active[o]) report.per_optimizer[o].best = best_of(report.per_optimizer[o]);
  }
  for (std::size_t o = 0; o < optimizers.size(); ++o) {
    if (!active[o]) continue;
    OptimizerSweep& s = report.per_optimizer[o];
    s.stop = beats_neighbours(s, *s.best) ? StopReason::Neighbours : StopReason::MaxRounds;
  }

  for (auto& s : report.per_optimizer) {
    std::vector<const Trial*> recs;
    for (std::size_t idx : s.trials) recs.push_back(&report.trials[idx]);
    if (recs.size() >= 2) s.stability = classify_stability(recs);
    if (s.best) report.ranking.push_back(*s.best);
  }
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a, std::size_t b) {
    return trial_better(report.trials[a], report.trials[b]);
  });
  return report;
}

// ---------------------------------------------------------------------------
// JSON export. Non-finite numbers become null.

namespace detail {

inline nlohmann::ordered_json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json region_json(const std::optional<std::pair<double, double>>& r) {
  if (!r) return nullptr;
  return nlohmann::ordered_json::array({r->first, r->second});
}

}  // namespace detail

inline nlohmann::ordered_json trial_json(std::size_t index, const Trial& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : t.record.rows) {
    rows.push_back({r.step, detail::finite_or_null(r.train_loss), detail::finite_or_null(r.eval_loss),
                    r.lr_mat_effective});
  }
  nlohmann::ordered_json j;
  j["trial"] = index;
  j["optimizer"] = t.optimizer.token();
  j["lr_mat"] = t.lr_mat;
  j["stage"] = t.round == 0 ? "coarse" : "fine";
  j["round"] = t.round;
  j["config_digest"] = t.record.config_digest;
  j["outcome"] = t.record.completed() ? "completed" : "diverged";
  j["diverged_step"] = t.record.completed() ? nlohmann::ordered_json(nullptr)
                                            : nlohmann::ordered_json(t.record.diverged_step);
  j["initial_loss"] = detail::finite_or_null(t.record.initial_loss);
  j["final_eval_loss"] = detail::finite_or_null(t.record.final_eval_loss());
  j["row_columns"] = {"step", "train_loss", "eval_loss", "lr_mat_effective"};
  j["rows"] = std::move(rows);
  return j;
}

inline std::string trials_jsonl(const SweepReport& report) {
  std::string out;
  for (std::size_t i = 0; i < report.trials.size(); ++i) out += trial_json(i, report.trials[i]).dump() + "\n";
  return out;
}

inline nlohmann::ordered_json summary_json(const SweepReport& report, const std::string& digest) {
  auto entry = [&](std::size_t idx) {
    const Trial& t = report.trials[idx];
    nlohmann::ordered_json e;
    e["optimizer"] = t.optimizer.token();
    e["lr_mat"] = t.lr_mat;
    e["eval_loss"] = detail::finite_or_null(t.record.final_eval_loss());
    e["trial"] = idx;
    return e;
  };
  nlohmann::ordered_json j;
  j["tool"] = std::string(kToolkitName);
  j["version"] = std::string(kToolkitVersion);
  j["config_digest"] = digest;
  j["trials"] = report.trials.size();
  j["all_diverged"] = report.all_diverged();
  j["best"] = report.best() ? entry(report.ranking.front()) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
  for (std::size_t idx : report.ranking) ranking.push_back(entry(idx));
  j["ranking"] = std::move(ranking);
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& s : report.per_optimizer) {
    nlohmann::ordered_json o;
    o["optimizer"] = s.optimizer.token();
    o["best"] = s.best ? entry(*s.best) : nlohmann::ordered_json(nullptr);
    o["fine_rounds"] = s.fine_rounds;
    o["stop"] = std::string(stop_reason_token(s.stop));
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (const auto& [lr, label] : s.stability.labels)
      labels.push_back({lr, label == StabilityLabel::Stable ? "stable" : "diverged"});
    o["stability"] = {{"labels", std::move(labels)},
                      {"best_region", detail::region_json(s.stability.best_region)},
                      {"best_region_decades", s.stability.best_region_decades()},
                      {"widest_region", detail::region_json(s.stability.widest_region)},
                      {"widest_span_decades", s.stability.widest_span_decades()}};
    per.push_back(std::move(o));
  }
  j["optimizers"] = std::move(per);
  return j;
}

}  // namespace spectral
