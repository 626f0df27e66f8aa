// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: transform, verify, train, sweep.
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
// 3 numerical divergence.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spectral/calibration.hpp"
#include "spectral/config.hpp"
#include "spectral/dense.hpp"
#include "spectral/matrix_roots.hpp"
#include "spectral/oracle.hpp"
#include "spectral/sweep.hpp"
#include "spectral/trainer.hpp"
#include "spectral/verify.hpp"

namespace spectral::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  std::string config_path;
  std::vector<std::string> overrides;
};

struct TransformArgs {
  std::string input;
  std::string output;
  std::string p = "zero";
  std::string method = "ns";
  std::string polar = "quintic";
  std::optional<int> iters;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline std::filesystem::path make_run_dir(const std::string& out_dir, const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(out_dir) / name;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

inline RawConfig load_raw(const GlobalFlags& g, std::string_view command) {
  if (g.config_path.empty()) throw ConfigError(std::string(command) + ": --config is required");
  RawConfig raw = load_config_file(g.config_path);
  for (const auto& o : g.overrides) apply_override(raw, o);
  if (g.seed) raw.set("seed", std::to_string(*g.seed), "command line");
  return raw;
}

inline nlohmann::ordered_json diagnostics_json(const KernelDiagnostics& d) {
  nlohmann::ordered_json j;
  j["iterations"] = d.iterations_run;
  j["residuals"] = d.residual_per_iter;
  j["scale_alpha"] = d.scale_alpha;
  j["scale_beta"] = d.scale_beta ? nlohmann::ordered_json(*d.scale_beta) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_transform(const TransformArgs& a, std::ostream& out, std::ostream& err) {
  const auto p = parse_exponent(a.p);
  if (!p) {
    err << "error: unknown exponent '" << a.p << "'; valid: one, half, quarter, zero\n";
    return kExitUsage;
  }
  if (a.method != "ns" && a.method != "oracle") {
    err << "error: --method must be ns or oracle\n";
    return kExitUsage;
  }
  if (a.polar != "quintic" && a.polar != "cubic") {
    err << "error: --polar must be quintic or cubic\n";
    return kExitUsage;
  }
  const PolarMethod polar = a.polar == "cubic" ? PolarMethod::Cubic : PolarMethod::Quintic;
  if (a.iters && *a.iters < 1) {
    err << "error: --iters must be >= 1\n";
    return kExitUsage;
  }

  std::ifstream in(a.input, std::ios::binary);
  if (!in) {
    err << "error: cannot open input '" << a.input << "'\n";
    return kExitUsage;
  }
  std::optional<DenseMatrix> parsed;
  try {
    parsed = read_matrix(in);
  } catch (const Error& e) {
    err << "error: " << a.input << ": " << e.what() << "\n";
    return kExitUsage;
  }
  const DenseMatrix& o = *parsed;

  TransformOptions topt;
  topt.polar_method = polar;
  topt.polar_iters = a.iters.value_or(polar == PolarMethod::Cubic ? calibration::kCubicPolarIters
                                                                   : kDefaultPolarIters);
  topt.root_iters = a.iters.value_or(kDefaultRootIters);

  nlohmann::ordered_json diag;
  diag["tool"] = std::string(kToolkitName);
  diag["version"] = std::string(kToolkitVersion);
  diag["input"] = a.input;
  diag["shape"] = {o.rows(), o.cols()};
  diag["p"] = std::string(exponent_token(*p));
  diag["method"] = a.method;

  DenseMatrix result(1, 1);
  try {
    const double pv = exponent_value(*p);
    if (a.method == "oracle") {
      result = *p == SpectralExponent::One ? o : oracle::psi_exact(o, pv);
      diag["kernel"] = nullptr;
    } else {
      auto r = spectral_transform(o, *p, topt);
      result = std::move(r.value);
      diag["polar_method"] = std::string(polar_method_token(polar));
      diag["iters_per_pass"] = *p == SpectralExponent::Zero ? topt.polar_iters : topt.root_iters;
      diag["kernel"] = detail::diagnostics_json(r.diagnostics);
      const DenseMatrix exact = *p == SpectralExponent::One ? o : oracle::psi_exact(o, pv);
      const double ref = frobenius_norm(exact);
      const double rel = ref > 0.0 ? frobenius_distance(result, exact) / ref : frobenius_norm(result);
      const double tol = calibration::relative_tolerance(*p, polar);
      diag["oracle_relative_difference"] = rel;
      diag["calibrated_tolerance"] = tol;
      diag["within_tolerance"] = rel <= tol;
      diag["calibrated_kappa"] = calibration::kCalibratedKappa;
    }
  } catch (const KernelDivergenceError& e) {
    err << "error: " << e.what() << "\n"
        << "diagnostics: " << detail::diagnostics_json(e.diagnostics()).dump() << "\n";
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    detail::write_file(a.output, to_text(result));
    detail::write_file(a.output + ".diag.json", diag.dump(2) + "\n");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  out << "wrote " << a.output << " (" << result.rows() << "x" << result.cols() << ") and "
      << a.output << ".diag.json\n";
  if (diag.contains("oracle_relative_difference")) {
    out << "relative difference to oracle " << format_shortest(diag["oracle_relative_difference"].get<double>())
        << " (calibrated tolerance " << format_shortest(diag["calibrated_tolerance"].get<double>()) << ")\n";
  }
  return kExitOk;
}

inline int cmd_verify(const std::string& suite, std::optional<int> iters, const GlobalFlags& g,
                      std::ostream& out, std::ostream& err) {
  VerifyOptions opt;
  if (g.seed) opt.seed = *g.seed;
  opt.forced_iters = iters;
  VerifyReport report;
  try {
    report = run_verify(suite, opt);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n"
        << "usage: spectral_cli verify [SUITE] [--iters K] [--seed N]\n";
    return kExitUsage;
  }
  print_verify_table(out, report);
  return report.all_passed() ? kExitOk : kExitCheckFailed;
}

inline int cmd_train(const GlobalFlags& g, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  try {
    cfg = resolve_train_config(detail::load_raw(g, "train"));
    // Fail on an unreadable corpus before any output is written.
    if (cfg.task.kind == TaskKind::CharMlpLm) (void)load_corpus(cfg.task.corpus_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const KeyValues kv = canonical_train_settings(cfg);
  const std::string digest = digest_of(kv);
  RunRecord rec;
  std::filesystem::path dir;
  try {
    dir = detail::make_run_dir(g.out_dir, "train-" + digest);
    detail::write_file(dir / "config.resolved", resolved_config_text(kv, "train"));
    rec = run_training(cfg);
    detail::write_file(dir / "run.csv", run_csv(rec, cfg));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  out << artifact_banner(digest) << "\n"
      << "task " << task_token(cfg.task.kind) << ", optimizer " << optimizer_echo(cfg) << ", lr_mat "
      << format_shortest(cfg.hp.lr_mat) << ", " << cfg.total_steps << " steps\n";
  if (rec.completed()) {
    out << "completed: eval loss " << format_shortest(rec.initial_loss) << " -> "
        << format_shortest(rec.final_eval_loss()) << "\n";
  } else {
    out << "diverged at step " << rec.diverged_step << ": " << rec.divergence_reason << "\n";
  }
  out << "outputs in " << dir.string() << "\n";
  return rec.completed() ? kExitOk : kExitDiverged;
}

inline int cmd_sweep(const GlobalFlags& g, std::ostream& out, std::ostream& err) {
  SweepJob job;
  try {
    job = resolve_sweep_config(detail::load_raw(g, "sweep"));
    if (job.base.task.kind == TaskKind::CharMlpLm) (void)load_corpus(job.base.task.corpus_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const KeyValues kv = canonical_sweep_settings(job);
  const std::string digest = digest_of(kv);
  SweepReport report;
  std::filesystem::path dir;
  try {
    dir = detail::make_run_dir(g.out_dir, "sweep-" + digest);
    detail::write_file(dir / "config.resolved", resolved_config_text(kv, "sweep"));
    report = run_sweep(job.base, job.plan, job.optimizers);
    detail::write_file(dir / "trials.jsonl", trials_jsonl(report));
    detail::write_file(dir / "summary.json", summary_json(report, digest).dump(2) + "\n");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  out << artifact_banner(digest) << "\n" << report.trials.size() << " trials\n";
  for (std::size_t i = 0; i < job.optimizers.size(); ++i) {
    const auto& s = report.per_optimizer[i];
    out << "  " << job.optimizer_tokens[i] << ": ";
    if (!s.best) {
      out << "all runs diverged\n";
      continue;
    }
    const Trial& b = report.trials[*s.best];
    out << "best lr_mat " << format_shortest(b.lr_mat) << " eval loss "
        << format_shortest(b.record.final_eval_loss()) << ", stable span "
        << format_shortest(s.stability.widest_span_decades()) << " decades, stop "
        << stop_reason_token(s.stop) << "\n";
  }
  if (report.all_diverged()) out << "every trial diverged\n";
  out << "outputs in " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Spectral gradient transforms, optimizers and a desk-scale training harness",
               "spectral_cli"};
  app.set_version_flag("--version", std::string(kToolkitName) + " " + std::string(kToolkitVersion));
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  std::uint64_t seed_value = 0;
  app.add_option("--seed", seed_value, "Seed override");
  app.add_option("--out-dir", g.out_dir, "Directory for run outputs")->capture_default_str();
  app.add_option("--config", g.config_path, "Config file (key = value lines)");
  app.add_option("--set", g.overrides, "Override a config key: --set key=value (repeatable)");

  TransformArgs ta;
  int transform_iters = 0;
  auto* transform = app.add_subcommand("transform", "Apply Psi_p to a matrix file");
  transform->add_option("-i,--input", ta.input, "Input matrix file")->required();
  transform->add_option("-o,--output", ta.output, "Output matrix file")->required();
  transform->add_option("-p,--p", ta.p, "Exponent: one, half, quarter, zero")->capture_default_str();
  transform->add_option("--method", ta.method, "ns or oracle")->capture_default_str();
  transform->add_option("--polar", ta.polar, "Polar kernel for p = zero: quintic or cubic")
      ->capture_default_str();
  transform->add_option("--iters", transform_iters, "Iterations per kernel pass");

  std::string suite = "all";
  int verify_iters = 0;
  auto* verify = app.add_subcommand("verify", "Run self-check suites");
  verify->add_option("suite", suite, verify_usage())->capture_default_str();
  verify->add_option("--iters", verify_iters, "Force every kernel iteration count");

  auto* train = app.add_subcommand("train", "Run one training job from a config");
  auto* sweep = app.add_subcommand("sweep", "Run a learning-rate sweep from a config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  if (app.count("--seed")) g.seed = seed_value;

  try {
    if (*transform) {
      if (transform->count("--iters")) ta.iters = transform_iters;
      return cmd_transform(ta, out, err);
    }
    if (*verify) {
      std::optional<int> iters;
      if (verify->count("--iters")) iters = verify_iters;
      return cmd_verify(suite, iters, g, out, err);
    }
    if (*train) return cmd_train(g, out, err);
    if (*sweep) return cmd_sweep(g, out, err);
  } catch (const KernelDivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace spectral::cli
