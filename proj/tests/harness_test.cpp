#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "afw/harness.hpp"

using namespace afw;
using namespace afw::harness;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("afw_harness_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config() {
  return json::parse(R"({
    "problem": {"kind": "matrix_sensing", "d1": 8, "d2": 8, "rank": 2, "samples": 300, "noise_std": 0.0, "seed": 4},
    "algorithm": {"kind": "sfw_asyn", "schedule": {"name": "sfw_asyn", "tau": 2, "cap": 60},
                  "horizon": 60, "workers": 3, "seed": 2},
    "backend": {"kind": "simulator", "p": 0.3, "seed": 5},
    "reference": {"iterations": 200}
  })");
}

fs::path write_json(const fs::path& path, const json& j) {
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(AFW_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, RejectsUnknownKeysEverywhere) {
  for (const char* path : {"/bogus", "/problem/bogus", "/algorithm/bogus", "/algorithm/schedule/bogus",
                           "/backend/bogus", "/output/bogus"}) {
    auto j = small_config();
    j[json::json_pointer(path)] = 1;
    EXPECT_THROW(parse_config(j), ConfigError) << path;
  }
}

TEST(Config, RejectsBadValues) {
  auto bad = [](const char* path, json v) {
    auto j = small_config();
    j[json::json_pointer(path)] = v;
    EXPECT_THROW(parse_config(j), ConfigError) << path << " = " << v.dump();
  };
  bad("/algorithm/kind", "sgd");
  bad("/algorithm/workers", 0);
  bad("/algorithm/schedule/tau", -1);
  bad("/algorithm/schedule/tau", "forever");
  bad("/backend/p", 0.0);
  bad("/backend/kind", "cluster");
  bad("/problem/rank", 9);
  bad("/problem/theta", -1.0);
  bad("/algorithm/schedule/name", "svrf_asyn");  // SVRF schedule on a non-SVRF algorithm
}

TEST(Config, ParsesUnboundedTauAndDefaults) {
  auto j = small_config();
  j["algorithm"]["schedule"]["tau"] = "inf";
  const auto c = parse_config(j);
  EXPECT_EQ(c.algorithm.schedule.tau, kUnboundedDelay);
  EXPECT_FALSE(c.backend.live);
  EXPECT_EQ(c.output.target_relative_error, 0.002);
}

TEST(Config, SeedOverrideTouchesAlgorithmAndBackendOnly) {
  auto j = small_config();
  apply_seed_override(j, 77);
  const auto c = parse_config(j);
  EXPECT_EQ(c.algorithm.seed, 77u);
  EXPECT_EQ(c.backend.seed, 77u);
  EXPECT_EQ(c.problem.seed, 4u);
}

TEST(Run, OutputsReplayAndManifestRerunIsIdentical) {
  const auto dir = scratch("run");
  const auto c = parse_config(small_config());
  const auto prep = prepare(c);
  const auto o = execute(c, prep);
  write_run_outputs(dir / "a", c, o);
  for (const char* f : {"trace.csv", "delay_histogram.csv", "x0.afw", "x_final.afw", "log_u.afw", "log_v.afw",
                        "log_meta.csv", "config.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;

  const auto report = replay_check(dir / "a");
  EXPECT_EQ(report.entries, 60u);
  EXPECT_LT(report.max_difference, 1e-10);
  EXPECT_TRUE(report.delays_within_tau);

  const auto logs = load_update_logs(dir / "a");
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].entries.back().u, o.result.logs[0].entries.back().u);

  // Rerun from the manifest alone.
  const auto raw = read_config_file(dir / "a" / "manifest.json");
  const auto c2 = parse_config(raw);
  write_run_outputs(dir / "b", c2, execute(c2, prepare(c2)));
  for (const char* f : {"trace.csv", "x_final.afw", "log_meta.csv", "manifest.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Run, TamperedLogFailsReplay) {
  const auto dir = scratch("tamper");
  const auto c = parse_config(small_config());
  write_run_outputs(dir, c, execute(c, prepare(c)));
  auto xf = load_matrix(dir / "x_final.afw");
  xf(0, 0) += 1e-6;
  save_matrix(dir / "x_final.afw", xf);
  EXPECT_GT(replay_check(dir).max_difference, 1e-7);
}

TEST(Problems, GenerateAndLoadRoundTrip) {
  const auto dir = scratch("problem");
  auto j = small_config();
  const auto c = parse_config(j);
  const auto p = make_problem(c.problem);
  save_problem(dir, p);
  j["problem"] = {{"path", dir.string()}};
  const auto loaded = make_problem(parse_config(j).problem);
  const auto& a = std::get<MatrixSensingProblem>(p);
  const auto& b = std::get<MatrixSensingProblem>(loaded);
  EXPECT_EQ(a.sensing, b.sensing);
  EXPECT_EQ(a.responses, b.responses);
  EXPECT_EQ(a.theta, b.theta);
}

TEST(Sweep, RecordsFailuresAndContinues) {
  const auto dir = scratch("sweep");
  auto j = small_config();
  j["sweep"] = json::parse(R"({"axis": "workers", "values": [1, 2],
      "variants": [{"label": "asyn"}, {"label": "broken", "schedule": {"name": "fixed_batch", "batch": 0}}]})");
  j["algorithm"]["schedule"]["tau"] = 1;
  const auto r = run_sweep(parse_config(j), dir, true);
  ASSERT_EQ(r.points.size(), 4u);
  std::size_t ok = 0;
  for (const auto& p : r.points) ok += p.ok;
  EXPECT_EQ(ok, 2u);
  write_sweep_outputs(dir, r);
  EXPECT_TRUE(fs::exists(dir / "sweep.csv"));
  EXPECT_TRUE(fs::exists(dir / "speedup.csv"));
  const auto tables = speedup_from_directory(dir, 0.5);
  ASSERT_TRUE(tables.count("asyn"));
  EXPECT_EQ(*tables.at("asyn").front().speedup, 1.0);
}

TEST(Sweep, PlateauIsMeanOfLastFifth) {
  std::vector<TraceRecord> t(10);
  for (std::size_t i = 0; i < 10; ++i) t[i].objective = static_cast<double>(i);
  EXPECT_EQ(plateau_objective(t), 8.5);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const auto good = write_json(dir / "good.json", small_config());
  auto bad_json = small_config();
  bad_json["algorithm"]["mystery"] = true;
  const auto bad = write_json(dir / "bad.json", bad_json);
  std::ofstream(dir / "garbage.json") << "{ not json";

  EXPECT_EQ(cli("run --config " + bad.string() + " --out " + (dir / "x").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "garbage.json").string() + " --out " + (dir / "x").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("run --config " + good.string() + " --out " + (dir / "run").string() + " --quiet"), 0);
  EXPECT_EQ(cli("replay-check --out " + (dir / "run").string() + " --quiet"), 0);
  EXPECT_EQ(cli("run --config " + good.string() + " --out " + (dir / "seeded").string() + " --seed 9 --quiet"), 0);
  EXPECT_NE(slurp(dir / "run" / "trace.csv"), slurp(dir / "seeded" / "trace.csv"));
  EXPECT_EQ(cli("run --config " + good.string() + " --out " + (dir / "live").string() + " --live --quiet"), 0);
  EXPECT_EQ(cli("replay-check --out " + (dir / "live").string() + " --quiet"), 0);
  EXPECT_EQ(cli("generate --config " + good.string() + " --out " + (dir / "gen").string() + " --quiet"), 0);
  EXPECT_TRUE(fs::exists(dir / "gen" / "meta.json"));

  auto x = load_matrix(dir / "run" / "x_final.afw");
  x(1, 1) += 1e-3;
  save_matrix(dir / "run" / "x_final.afw", x);
  EXPECT_EQ(cli("replay-check --out " + (dir / "run").string() + " --quiet"), 1);
}

TEST(Cli, VerifyGradients) { EXPECT_EQ(cli("verify gradients --quiet"), 0); }
