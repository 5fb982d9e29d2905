// afw: generate problems, run and sweep experiments, verify invariants.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "afw/harness.hpp"

namespace fs = std::filesystem;
using namespace afw;
using namespace afw::harness;

namespace {

struct CommonFlags {
  std::string config;
  std::string out = "afw_out";
  std::optional<std::uint64_t> seed;
  bool live = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config) {
  auto* opt = cmd->add_option("--config", f.config, "experiment config (JSON) or a run manifest");
  if (needs_config) opt->required();
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "override the algorithm and backend seeds");
  cmd->add_flag("--live", f.live, "use the threaded executor instead of the simulator");
  cmd->add_flag("--quiet", f.quiet, "suppress progress output");
}

ExperimentConfig load(const CommonFlags& f) {
  auto raw = read_config_file(f.config);
  if (f.seed) apply_seed_override(raw, *f.seed);
  if (f.live) apply_live_override(raw);
  return parse_config(raw);
}

int cmd_generate(const CommonFlags& f) {
  const auto c = load(f);
  const auto p = make_problem(c.problem);
  save_problem(f.out, p);
  if (!f.quiet) std::cout << "problem written to " << f.out << "\n";
  return kOk;
}

int cmd_run(const CommonFlags& f) {
  const auto c = load(f);
  const auto prep = prepare(c);
  const auto o = execute(c, prep, f.quiet);
  write_run_outputs(f.out, c, o);
  if (!f.quiet) {
    const auto& t = o.result.trace;
    std::cout << to_string(c.algorithm.kind) << ": " << (t.empty() ? 0 : t.back().iteration) << " updates, "
              << o.result.abandoned << " abandoned, final relative error "
              << (t.empty() ? 0.0 : t.back().relative_error) << "\n";
    if (!o.result.completed) std::cout << "run incomplete: " << o.result.error << "\n";
  }
  return o.result.completed ? kOk : kVerificationFailed;
}

int cmd_sweep(const CommonFlags& f) {
  const auto c = load(f);
  const auto r = run_sweep(c, f.out, f.quiet);
  write_sweep_outputs(f.out, r);
  std::size_t failed = 0;
  for (const auto& p : r.points) failed += p.ok ? 0 : 1;
  if (!f.quiet) std::cout << r.points.size() << " points, " << failed << " failed; tables in " << f.out << "\n";
  return failed == 0 ? kOk : kVerificationFailed;
}

int cmd_speedup(const CommonFlags& f, std::optional<double> target) {
  const auto tables = speedup_from_directory(f.out, target);
  if (!f.quiet) {
    for (const auto& [label, rows] : tables)
      for (const auto& row : rows)
        std::cout << label << " W=" << row.workers << " speedup "
                  << (row.speedup ? std::to_string(*row.speedup) : std::string("unreachable")) << "\n";
  }
  return kOk;
}

int cmd_verify(const CommonFlags& f, const std::string& suite) {
  const auto& suites = verification_suites();
  bool ok = true;
  for (const auto& [name, run] : suites) {
    if (suite != "all" && suite != name) continue;
    const auto report = run();
    for (const auto& c : report.checks) {
      if (!f.quiet || !c.passed)
        std::cout << (c.passed ? "PASS " : "FAIL ") << name << ": " << c.name << " (" << c.detail << ")\n";
    }
    ok = ok && report.passed();
  }
  return ok ? kOk : kVerificationFailed;
}

int cmd_replay_check(const CommonFlags& f) {
  const auto r = replay_check(f.out);
  const bool ok = r.max_difference < 1e-10 && r.delays_within_tau && r.final_nuclear_norm <= r.theta + 1e-6;
  if (!f.quiet || !ok)
    std::cout << (ok ? "PASS" : "FAIL") << " replay of " << r.entries << " updates: max difference "
              << r.max_difference << ", max delay " << r.max_delay << ", final nuclear norm "
              << r.final_nuclear_norm << "\n";
  return ok ? kOk : kVerificationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frank-Wolfe experiments over the nuclear-norm ball"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string suite = "all";
  std::optional<double> target;

  auto* generate = app.add_subcommand("generate", "write a problem directory");
  add_common(generate, flags, true);
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, flags, true);
  auto* sweep = app.add_subcommand("sweep", "run a sweep over workers, p, tau or c");
  add_common(sweep, flags, true);
  auto* speedup = app.add_subcommand("speedup", "rebuild the speedup table of a workers sweep in --out");
  add_common(speedup, flags, false);
  speedup->add_option("--target", target, "relative error target (default: the sweep's)");
  auto* verify = app.add_subcommand("verify", "run verification suites");
  add_common(verify, flags, false);
  verify->add_option("suite", suite, "gradients | lmo | replay | rates | variance | all")
      ->check(CLI::IsMember({"gradients", "lmo", "replay", "rates", "variance", "all"}));
  auto* replay = app.add_subcommand("replay-check", "replay the update log in --out against its final iterate");
  add_common(replay, flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigInvalid;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags);
    if (run->parsed()) return cmd_run(flags);
    if (sweep->parsed()) return cmd_sweep(flags);
    if (speedup->parsed()) return cmd_speedup(flags, target);
    if (verify->parsed()) return cmd_verify(flags, suite);
    if (replay->parsed()) return cmd_replay_check(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigInvalid;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerificationFailed;
  }
  return kOk;
}
