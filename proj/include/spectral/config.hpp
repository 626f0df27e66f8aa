// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment, blank lines are ignored. Keys are flat. Unknown keys, keys that
// do not apply to the command, and repeated keys are errors. Values given
// on the command line replace file values.

#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spectral/errors.hpp"
#include "spectral/sweep.hpp"
#include "spectral/trainer.hpp"

namespace spectral {

/// Keys shared by train and sweep.
inline const std::vector<std::string>& common_config_keys() {
  static const std::vector<std::string> keys{
      "task",        "corpus",     "lr_vec",       "beta1",       "beta2",
      "eps",         "polar_iters", "root_iters",  "polar_method", "fan_scaling",
      "fan_scaling_all", "total_steps", "warmup_steps", "batch_size", "eval_every",
      "seed",        "divergence_threshold"};
  return keys;
}

inline std::vector<std::string> train_config_keys() {
  auto keys = common_config_keys();
  keys.insert(keys.end(), {"optimizer", "lr_mat"});
  return keys;
}

inline std::vector<std::string> sweep_config_keys() {
  auto keys = common_config_keys();
  keys.insert(keys.end(), {"optimizers", "coarse_grid", "refine_factors", "max_fine_rounds", "threads"});
  return keys;
}

struct ConfigEntry {
  std::string value;
  std::string origin;  // "file:line" or "command line"
};

/// Ordered key -> value map with provenance for error messages.
class RawConfig {
 public:
  void set(const std::string& key, std::string value, std::string origin) {
    entries_[key] = {std::move(value), std::move(origin)};
  }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const ConfigEntry* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, ConfigEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ConfigEntry> entries_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline RawConfig parse_config_text(std::string_view text, const std::string& source) {
  RawConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (cfg.has(key)) throw ConfigError(where + ": key '" + key + "' repeated");
    cfg.set(key, value, where);
  }
  return cfg;
}

inline RawConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Applies a `key=value` override from the command line.
inline void apply_override(RawConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' must look like key=value");
  cfg.set(std::string(detail::trim(assignment.substr(0, eq))),
          std::string(detail::trim(assignment.substr(eq + 1))), "command line");
}

inline void check_keys(const RawConfig& cfg, const std::vector<std::string>& allowed,
                       std::string_view command) {
  const std::set<std::string> all_known = [] {
    std::set<std::string> s;
    for (const auto& k : train_config_keys()) s.insert(k);
    for (const auto& k : sweep_config_keys()) s.insert(k);
    return s;
  }();
  for (const auto& [key, entry] : cfg.entries()) {
    if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
    if (all_known.count(key))
      throw ConfigError(entry.origin + ": key '" + key + "' does not apply to '" + std::string(command) + "'");
    throw ConfigError(entry.origin + ": unknown key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// Value parsing

namespace detail {

inline std::string where(const ConfigEntry& e, const std::string& key) {
  return e.origin + ": " + key;
}

inline double parse_real(const ConfigEntry& e, const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(where(e, key) + ": '" + std::string(text) + "' is not a number");
  return v;
}

template <typename Int>
Int parse_int(const ConfigEntry& e, const std::string& key) {
  Int v{};
  const std::string& t = e.value;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(where(e, key) + ": '" + t + "' is not an integer in range");
  return v;
}

inline bool parse_bool(const ConfigEntry& e, const std::string& key) {
  if (e.value == "true") return true;
  if (e.value == "false") return false;
  throw ConfigError(where(e, key) + ": expected true or false, got '" + e.value + "'");
}

inline std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = text.find(',', pos);
    out.push_back(trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::vector<double> parse_real_list(const ConfigEntry& e, const std::string& key) {
  std::vector<double> out;
  for (auto item : split_list(e.value)) out.push_back(parse_real(e, key, item));
  return out;
}

inline std::string render_real_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_shortest(v[i]);
  return out;
}

inline OptimizerKind parse_optimizer_token(const ConfigEntry& e, const std::string& key,
                                           std::string_view token, bool& was_muon) {
  const auto kind = parse_optimizer(token);
  if (!kind)
    throw ConfigError(where(e, key) + ": unknown optimizer '" + std::string(token) +
                      "'; valid names: " + valid_optimizer_tokens());
  std::string lower(token);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  was_muon = lower == "muon";
  return *kind;
}

inline void read_common(const RawConfig& raw, TrainConfig& cfg) {
  auto with = [&](const std::string& key, auto&& fn) {
    if (const ConfigEntry* e = raw.find(key)) fn(*e, key);
  };
  with("task", [&](const ConfigEntry& e, const std::string& k) {
    const auto kind = parse_task(e.value);
    if (!kind) throw ConfigError(where(e, k) + ": unknown task '" + e.value + "'; valid: regression, charlm");
    cfg.task.kind = *kind;
  });
  with("corpus", [&](const ConfigEntry& e, const std::string&) { cfg.task.corpus_path = e.value; });
  with("lr_vec", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.lr_vec = parse_real(e, k, e.value); });
  with("beta1", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.beta1 = parse_real(e, k, e.value); });
  with("beta2", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.beta2 = parse_real(e, k, e.value); });
  with("eps", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.eps = parse_real(e, k, e.value); });
  with("polar_iters", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.polar_iters = parse_int<int>(e, k); });
  with("root_iters", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.root_iters = parse_int<int>(e, k); });
  with("polar_method", [&](const ConfigEntry& e, const std::string& k) {
    if (e.value == "quintic") cfg.hp.polar_method = PolarMethod::Quintic;
    else if (e.value == "cubic") cfg.hp.polar_method = PolarMethod::Cubic;
    else throw ConfigError(where(e, k) + ": expected quintic or cubic, got '" + e.value + "'");
  });
  with("fan_scaling", [&](const ConfigEntry& e, const std::string& k) { cfg.hp.fan_scaling = parse_bool(e, k); });
  with("fan_scaling_all", [&](const ConfigEntry& e, const std::string& k) {
    cfg.hp.fan_scaling_all_spectral = parse_bool(e, k);
  });
  with("total_steps", [&](const ConfigEntry& e, const std::string& k) { cfg.total_steps = parse_int<int>(e, k); });
  with("warmup_steps", [&](const ConfigEntry& e, const std::string& k) { cfg.warmup_steps = parse_int<int>(e, k); });
  with("batch_size", [&](const ConfigEntry& e, const std::string& k) { cfg.batch_size = parse_int<int>(e, k); });
  with("eval_every", [&](const ConfigEntry& e, const std::string& k) { cfg.eval_every = parse_int<int>(e, k); });
  with("seed", [&](const ConfigEntry& e, const std::string& k) { cfg.seed = parse_int<std::uint64_t>(e, k); });
  with("divergence_threshold", [&](const ConfigEntry& e, const std::string& k) {
    cfg.divergence_threshold = parse_real(e, k, e.value);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Resolution

inline TrainConfig resolve_train_config(const RawConfig& raw) {
  check_keys(raw, train_config_keys(), "train");
  TrainConfig cfg;
  detail::read_common(raw, cfg);
  if (const ConfigEntry* e = raw.find("optimizer")) {
    cfg.optimizer = detail::parse_optimizer_token(*e, "optimizer", e->value, cfg.optimizer_given_as_muon);
  } else {
    throw ConfigError("train: missing required key 'optimizer'; valid names: " + valid_optimizer_tokens());
  }
  if (const ConfigEntry* e = raw.find("lr_mat")) cfg.hp.lr_mat = detail::parse_real(*e, "lr_mat", e->value);
  validate(cfg);
  return cfg;
}

struct SweepJob {
  TrainConfig base;  // optimizer and lr_mat are set per trial
  SweepPlan plan;
  std::vector<OptimizerKind> optimizers;
  std::vector<std::string> optimizer_tokens;  // as given, for the resolved config
};

inline SweepJob resolve_sweep_config(const RawConfig& raw) {
  check_keys(raw, sweep_config_keys(), "sweep");
  SweepJob job;
  detail::read_common(raw, job.base);
  const ConfigEntry* opts = raw.find("optimizers");
  if (!opts)
    throw ConfigError("sweep: missing required key 'optimizers'; valid names: " + valid_optimizer_tokens());
  for (auto token : detail::split_list(opts->value)) {
    bool muon = false;
    const OptimizerKind k = detail::parse_optimizer_token(*opts, "optimizers", token, muon);
    if (std::find(job.optimizers.begin(), job.optimizers.end(), k) != job.optimizers.end())
      throw ConfigError(detail::where(*opts, "optimizers") + ": '" + std::string(token) + "' listed twice");
    job.optimizers.push_back(k);
    job.optimizer_tokens.push_back(muon ? "muon" : k.token());
  }
  if (const ConfigEntry* e = raw.find("coarse_grid")) job.plan.coarse_grid = detail::parse_real_list(*e, "coarse_grid");
  if (const ConfigEntry* e = raw.find("refine_factors"))
    job.plan.refine_factors = detail::parse_real_list(*e, "refine_factors");
  if (const ConfigEntry* e = raw.find("max_fine_rounds"))
    job.plan.max_fine_rounds = detail::parse_int<int>(*e, "max_fine_rounds");
  if (const ConfigEntry* e = raw.find("threads")) job.plan.threads = detail::parse_int<int>(*e, "threads");
  job.base.optimizer = job.optimizers.front();
  job.base.hp.lr_mat = job.plan.coarse_grid.empty() ? 0.0 : job.plan.coarse_grid.front();
  validate(job.plan);
  validate(job.base);
  return job;
}

// ---------------------------------------------------------------------------
// Canonical rendering. `threads` only affects speed and is left out.

inline KeyValues canonical_train_settings(const TrainConfig& cfg) { return canonical_settings(cfg); }

inline KeyValues canonical_sweep_settings(const SweepJob& job) {
  KeyValues out;
  for (auto& kv : canonical_settings(job.base)) {
    if (kv.first == "optimizer" || kv.first == "lr_mat") continue;
    out.push_back(std::move(kv));
  }
  std::string tokens;
  for (std::size_t i = 0; i < job.optimizer_tokens.size(); ++i)
    tokens += (i ? ", " : "") + job.optimizer_tokens[i];
  out.emplace_back("optimizers", tokens);
  out.emplace_back("coarse_grid", detail::render_real_list(job.plan.coarse_grid));
  out.emplace_back("refine_factors", detail::render_real_list(job.plan.refine_factors));
  out.emplace_back("max_fine_rounds", std::to_string(job.plan.max_fine_rounds));
  return out;
}

/// Resolved config file contents: banner comment plus every setting.
inline std::string resolved_config_text(const KeyValues& kv, std::string_view command) {
  return "# " + artifact_banner(digest_of(kv)) + " command=" + std::string(command) + "\n" +
         render_settings(kv);
}

}  // namespace spectral
