#pragma once

// Experiment configuration, single runs, sweeps, verification suites and the
// on-disk artifacts they produce.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "afw/algorithms.hpp"
#include "afw/executor.hpp"
#include "afw/linalg.hpp"
#include "afw/matrix_io.hpp"
#include "afw/objectives.hpp"
#include "afw/problem_io.hpp"
#include "afw/schedules.hpp"
#include "afw/simulator.hpp"
#include "afw/trace.hpp"

namespace afw::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "afw 0.1.0";
inline constexpr int kManifestVersion = 1;

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kConfigInvalid = 2 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config

struct ProblemSpec {
  std::string kind = "matrix_sensing";  // matrix_sensing | pnn
  std::size_t d1 = 30, d2 = 30, rank = 3, dim = 28, samples = 900;
  double noise_std = 0.1;
  double theta = 1.0;
  std::uint64_t seed = 1;
  std::optional<std::string> path;  // load a generated problem directory instead
};

struct ScheduleSpec {
  std::string name = "sfw";  // sfw | sfw_asyn | constant_batch | svrf_asyn | fixed_batch | full_batch
  std::size_t tau = 0;
  std::optional<std::size_t> cap;
  std::optional<double> c;
  std::optional<std::size_t> batch;
};

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::Sfw;
  ScheduleSpec schedule;
  std::size_t horizon = 100;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  std::size_t record_every = 1;
  bool record_inexactness = false;
};

struct ConstantsSpec {
  std::size_t samples = 8;
  std::uint64_t seed = 3;
  std::optional<double> L, G;
};

struct BackendSpec {
  bool live = false;
  GeometricComputeModel model;
  std::uint64_t seed = 1;
  std::optional<InjectedDelay> delay;
  std::optional<std::chrono::milliseconds> wall_budget;
};

struct ReferenceSpec {
  std::optional<double> value;
  std::size_t iterations = 1500;
};

struct OutputSpec {
  double target_relative_error = 0.002;
  bool save_log = true;
};

struct SweepSpec {
  std::string axis;  // workers | p | tau | c
  std::vector<json> values;
  std::vector<json> variants;  // patches over "algorithm"; each may carry a "label"
};

struct ExperimentConfig {
  json raw;
  ProblemSpec problem;
  AlgorithmConfig algorithm;
  ConstantsSpec constants;
  BackendSpec backend;
  ReferenceSpec reference;
  OutputSpec output;
  std::optional<SweepSpec> sweep;
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::size_t get_count(const json& obj, const char* key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  return v.get<std::size_t>();
}

inline std::size_t parse_tau(const json& v, const std::string& where) {
  if (v.is_string() && v.get<std::string>() == "inf") return kUnboundedDelay;
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::size_t>();
  throw ConfigError(where + ": tau must be a nonnegative integer or \"inf\"");
}

inline json tau_to_json(std::size_t tau) { return tau == kUnboundedDelay ? json("inf") : json(tau); }

inline ScheduleSpec parse_schedule(const json& j) {
  const std::string where = "algorithm.schedule";
  check_keys(j, {"name", "tau", "cap", "c", "batch"}, where);
  ScheduleSpec s;
  s.name = get_or<std::string>(j, "name", s.name, where);
  static const std::set<std::string> names{"sfw", "sfw_asyn", "constant_batch", "svrf_asyn", "fixed_batch",
                                           "full_batch"};
  if (!names.count(s.name)) throw ConfigError(where + ": unknown schedule '" + s.name + "'");
  if (j.contains("tau")) s.tau = parse_tau(j.at("tau"), where + ".tau");
  if (j.contains("cap")) s.cap = get_count(j, "cap", 0, where);
  if (j.contains("c")) s.c = get_or<double>(j, "c", 0.0, where);
  if (j.contains("batch")) s.batch = get_count(j, "batch", 0, where);
  if (s.name == "constant_batch" && !s.c) throw ConfigError(where + ": constant_batch needs c");
  if (s.name == "fixed_batch" && !s.batch) throw ConfigError(where + ": fixed_batch needs batch");
  return s;
}

inline AlgorithmConfig parse_algorithm(const json& j) {
  const std::string where = "algorithm";
  check_keys(j, {"kind", "schedule", "horizon", "workers", "seed", "record_every", "record_inexactness"}, where);
  AlgorithmConfig a;
  const auto kind = get_or<std::string>(j, "kind", "sfw", where);
  const auto k = algorithm_from_string(kind);
  if (!k) throw ConfigError(where + ": unknown algorithm '" + kind + "'");
  a.kind = *k;
  a.schedule = parse_schedule(j.value("schedule", json::object()));
  a.horizon = get_count(j, "horizon", a.horizon, where);
  a.workers = get_count(j, "workers", a.workers, where);
  a.seed = get_or<std::uint64_t>(j, "seed", a.seed, where);
  a.record_every = get_count(j, "record_every", a.record_every, where);
  a.record_inexactness = get_or<bool>(j, "record_inexactness", false, where);
  if (a.workers < 1) throw ConfigError(where + ".workers must be >= 1");
  if (a.record_every < 1) throw ConfigError(where + ".record_every must be >= 1");
  if (is_svrf(a.kind) != (a.schedule.name == "svrf_asyn"))
    throw ConfigError(where + ": SVRF algorithms go with the svrf_asyn schedule and only those");
  return a;
}

inline ProblemSpec parse_problem(const json& j) {
  const std::string where = "problem";
  check_keys(j, {"kind", "d1", "d2", "rank", "dim", "samples", "noise_std", "theta", "seed", "path"}, where);
  ProblemSpec p;
  p.kind = get_or<std::string>(j, "kind", p.kind, where);
  if (p.kind != "matrix_sensing" && p.kind != "pnn") throw ConfigError(where + ": unknown kind '" + p.kind + "'");
  p.d1 = get_count(j, "d1", p.d1, where);
  p.d2 = get_count(j, "d2", p.d2, where);
  p.rank = get_count(j, "rank", p.rank, where);
  p.dim = get_count(j, "dim", p.dim, where);
  p.samples = get_count(j, "samples", p.samples, where);
  p.noise_std = get_or<double>(j, "noise_std", p.noise_std, where);
  p.theta = get_or<double>(j, "theta", p.theta, where);
  p.seed = get_or<std::uint64_t>(j, "seed", p.seed, where);
  if (j.contains("path")) p.path = get_or<std::string>(j, "path", "", where);
  if (!(p.theta > 0.0)) throw ConfigError(where + ".theta must be positive");
  if (!(p.noise_std >= 0.0)) throw ConfigError(where + ".noise_std must be nonnegative");
  if (p.samples < 1 || p.d1 < 1 || p.d2 < 1 || p.dim < 1) throw ConfigError(where + ": sizes must be positive");
  if (p.kind == "matrix_sensing" && (p.rank < 1 || p.rank > std::min(p.d1, p.d2)))
    throw ConfigError(where + ".rank must lie in [1, min(d1, d2)]");
  return p;
}

inline BackendSpec parse_backend(const json& j) {
  const std::string where = "backend";
  check_keys(j, {"kind", "p", "c_grad", "c_svd", "seed", "delay_p", "delay_unit_us", "wall_budget_ms"}, where);
  BackendSpec b;
  const auto kind = get_or<std::string>(j, "kind", "simulator", where);
  if (kind != "simulator" && kind != "live") throw ConfigError(where + ": kind must be simulator or live");
  b.live = kind == "live";
  b.model.p = get_or<double>(j, "p", 1.0, where);
  b.model.c_grad = get_or<double>(j, "c_grad", 1.0, where);
  b.model.c_svd = get_or<double>(j, "c_svd", 10.0, where);
  b.seed = get_or<std::uint64_t>(j, "seed", 1, where);
  try {
    b.model.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (j.contains("delay_p")) {
    InjectedDelay d;
    d.p = get_or<double>(j, "delay_p", d.p, where);
    d.unit = std::chrono::microseconds(get_count(j, "delay_unit_us", 200, where));
    if (!(d.p > 0.0 && d.p <= 1.0)) throw ConfigError(where + ".delay_p must lie in (0, 1]");
    b.delay = d;
  }
  if (j.contains("wall_budget_ms")) b.wall_budget = std::chrono::milliseconds(get_count(j, "wall_budget_ms", 0, where));
  return b;
}

}  // namespace detail

/// Validates and resolves a raw config. Unknown keys anywhere are rejected.
inline ExperimentConfig parse_config(const json& raw) {
  detail::check_keys(raw, {"problem", "algorithm", "constants", "backend", "reference", "output", "sweep"}, "config");
  ExperimentConfig c;
  c.raw = raw;
  c.problem = detail::parse_problem(raw.value("problem", json::object()));
  c.algorithm = detail::parse_algorithm(raw.value("algorithm", json::object()));
  {
    const auto j = raw.value("constants", json::object());
    detail::check_keys(j, {"samples", "seed", "L", "G"}, "constants");
    c.constants.samples = detail::get_count(j, "samples", c.constants.samples, "constants");
    c.constants.seed = detail::get_or<std::uint64_t>(j, "seed", c.constants.seed, "constants");
    if (j.contains("L")) c.constants.L = detail::get_or<double>(j, "L", 0.0, "constants");
    if (j.contains("G")) c.constants.G = detail::get_or<double>(j, "G", 0.0, "constants");
    if (c.constants.samples < 2) throw ConfigError("constants.samples must be >= 2");
  }
  c.backend = detail::parse_backend(raw.value("backend", json::object()));
  {
    const auto j = raw.value("reference", json::object());
    detail::check_keys(j, {"value", "iterations"}, "reference");
    if (j.contains("value")) c.reference.value = detail::get_or<double>(j, "value", 0.0, "reference");
    c.reference.iterations = detail::get_count(j, "iterations", c.reference.iterations, "reference");
  }
  {
    const auto j = raw.value("output", json::object());
    detail::check_keys(j, {"target_relative_error", "save_log"}, "output");
    c.output.target_relative_error = detail::get_or<double>(j, "target_relative_error", 0.002, "output");
    c.output.save_log = detail::get_or<bool>(j, "save_log", true, "output");
  }
  if (raw.contains("sweep")) {
    const auto& j = raw.at("sweep");
    detail::check_keys(j, {"axis", "values", "variants"}, "sweep");
    SweepSpec s;
    s.axis = detail::get_or<std::string>(j, "axis", "", "sweep");
    if (s.axis != "workers" && s.axis != "p" && s.axis != "tau" && s.axis != "c")
      throw ConfigError("sweep.axis must be one of workers, p, tau, c");
    if (!j.contains("values") || !j.at("values").is_array() || j.at("values").empty())
      throw ConfigError("sweep.values must be a nonempty array");
    for (const auto& v : j.at("values")) s.values.push_back(v);
    if (j.contains("variants")) {
      if (!j.at("variants").is_array()) throw ConfigError("sweep.variants must be an array");
      for (const auto& v : j.at("variants")) s.variants.push_back(v);
    }
    c.sweep = s;
  }
  return c;
}

inline json read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  // A manifest is accepted wherever a config is: rerun what it recorded.
  if (j.is_object() && j.contains("manifest_version")) {
    if (!j.contains("config")) throw ConfigError(path.string() + ": manifest without config");
    return j.at("config");
  }
  return j;
}

/// --seed N replaces the algorithm and simulator seeds; the problem is left
/// alone so the override changes the run, not the instance.
inline void apply_seed_override(json& raw, std::uint64_t seed) {
  raw["algorithm"]["seed"] = seed;
  raw["backend"]["seed"] = seed;
}

inline void apply_live_override(json& raw) { raw["backend"]["kind"] = "live"; }

/// 64-bit FNV-1a over the compact dump.
inline std::uint64_t config_hash(const json& raw) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : raw.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Preparation

inline Problem make_problem(const ProblemSpec& s) {
  if (s.path) return load_problem(*s.path);
  if (s.kind == "pnn") return generate_pnn(s.dim, s.samples, s.seed, s.theta);
  return generate_matrix_sensing(s.d1, s.d2, s.rank, s.samples, s.noise_std, s.seed, s.theta);
}

inline ProblemConstants resolve_constants(const Problem& p, const ConstantsSpec& s) {
  ProblemConstants c = std::visit([&](const auto& q) { return estimate_constants(q, s.samples, s.seed); }, p);
  if (s.L) c.L = *s.L;
  if (s.G) c.G = *s.G;
  return c;
}

inline std::size_t sample_count(const Problem& p) {
  return std::visit([](const auto& q) { return q.sample_count(); }, p);
}

inline Schedule build_schedule(const ScheduleSpec& s, const ProblemConstants& c, std::size_t samples) {
  try {
    if (s.name == "sfw") return sfw_schedule(c, s.cap);
    if (s.name == "sfw_asyn") return sfw_asyn_schedule(c, s.tau, s.cap);
    if (s.name == "constant_batch") return constant_batch_schedule(c, *s.c, s.tau);
    if (s.name == "svrf_asyn") return svrf_asyn_schedule(s.tau, s.cap);
    if (s.name == "fixed_batch") return fixed_batch_schedule(*s.batch, s.tau);
    return full_batch_schedule(samples, s.tau);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("algorithm.schedule: ") + e.what());
  }
}

struct Prepared {
  Problem problem;
  ProblemConstants constants;
  double reference_objective = 0.0;
};

inline Prepared prepare(const ExperimentConfig& c) {
  Prepared p{make_problem(c.problem), {}, 0.0};
  p.constants = resolve_constants(p.problem, c.constants);
  p.reference_objective = c.reference.value
                              ? *c.reference.value
                              : reference_objective(p.problem, ReferenceOptions{c.reference.iterations, 1.0});
  return p;
}

// ---------------------------------------------------------------------------
// Single run

struct RunOutcome {
  RunResult result;
  Schedule schedule;
  ProblemConstants constants;
  double reference_objective = 0.0;
  std::size_t sample_count = 0;
  double elapsed_seconds = 0.0;
};

inline RunOutcome execute(const ExperimentConfig& c, const Prepared& prep, bool quiet = true) {
  RunOutcome out;
  out.constants = prep.constants;
  out.reference_objective = prep.reference_objective;
  out.sample_count = sample_count(prep.problem);
  out.schedule = build_schedule(c.algorithm.schedule, prep.constants, out.sample_count);
  AlgorithmSpec spec{c.algorithm.kind, out.schedule, c.algorithm.horizon, c.algorithm.workers};
  RunOptions opts;
  opts.seed = c.algorithm.seed;
  opts.reference_objective = prep.reference_objective;
  opts.record_every = c.algorithm.record_every;
  opts.record_inexactness = c.algorithm.record_inexactness;

  const std::size_t tau = out.schedule.tau;
  if (!quiet && !is_sequential(c.algorithm.kind) && !is_svrf(c.algorithm.kind) && tau != kUnboundedDelay &&
      2 * tau >= c.algorithm.horizon)
    std::cerr << "warning: tau >= T/2; the convergence guarantee assumes tau < T/2\n";

  const auto start = std::chrono::steady_clock::now();
  out.result = std::visit(
      [&](const auto& problem) -> RunResult {
        if (c.backend.live) {
          LiveOptions live;
          live.delay = c.backend.delay;
          live.wall_budget = c.backend.wall_budget;
          live.seed = c.backend.seed;
          return run_live(problem, spec, live, opts);
        }
        return simulate(problem, spec, c.backend.model, c.backend.seed, opts);
      },
      prep.problem);
  out.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

/// Update logs as three files per run: log_u.afw and log_v.afw (one entry per
/// row, epochs concatenated) and log_meta.csv.
inline void save_update_logs(const fs::path& dir, const std::vector<UpdateLog>& logs) {
  std::vector<double> us, vs;
  std::size_t d1 = 0, d2 = 0, n = 0;
  std::ostringstream meta;
  meta << "# afw-update-log v1\nepoch,index,origin,delay,scale\n";
  for (std::size_t e = 0; e < logs.size(); ++e) {
    for (std::size_t k = 1; k <= logs[e].size(); ++k) {
      const auto& u = logs[e].at(k);
      d1 = u.u.size();
      d2 = u.v.size();
      us.insert(us.end(), u.u.begin(), u.u.end());
      vs.insert(vs.end(), u.v.begin(), u.v.end());
      meta << e << ',' << k << ',' << u.origin << ',' << u.delay << ',' << afw::detail::format_double(u.scale)
           << '\n';
      ++n;
    }
  }
  write_text(dir / "log_meta.csv", meta.str());
  if (n > 0) {
    save_matrix(dir / "log_u.afw", DenseMatrix(n, d1, std::move(us)));
    save_matrix(dir / "log_v.afw", DenseMatrix(n, d2, std::move(vs)));
  }
}

inline std::vector<UpdateLog> load_update_logs(const fs::path& dir) {
  std::ifstream is(dir / "log_meta.csv");
  if (!is) throw FormatError("missing log_meta.csv in " + dir.string());
  std::vector<UpdateLog> logs;
  std::string line;
  bool header = false;
  std::optional<DenseMatrix> u, v;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    if (!u) {
      u = load_matrix(dir / "log_u.afw");
      v = load_matrix(dir / "log_v.afw");
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError("log_meta.csv: wrong column count");
    const std::size_t epoch = std::stoull(cells[0]);
    if (row >= u->rows() || row >= v->rows()) throw FormatError("log files shorter than log_meta.csv");
    while (logs.size() <= epoch) logs.emplace_back();
    RankOneUpdate r;
    r.u.assign(u->row(row).begin(), u->row(row).end());
    r.v.assign(v->row(row).begin(), v->row(row).end());
    r.epoch = epoch;
    r.origin = std::stoull(cells[2]);
    r.delay = std::stoull(cells[3]);
    r.scale = std::stod(cells[4]);
    if (std::stoull(cells[1]) != logs[epoch].size() + 1) throw FormatError("log_meta.csv: entries out of order");
    logs[epoch].append(std::move(r));
    ++row;
  }
  if (logs.empty()) logs.emplace_back();
  return logs;
}

inline json constants_json(const ProblemConstants& c) { return json{{"L", c.L}, {"G", c.G}, {"D", c.D}}; }

/// Writes trace.csv, delay_histogram.csv, config.json, manifest.json, the
/// start and final iterates, the update log and (if recorded) inexactness.csv.
inline void write_run_outputs(const fs::path& dir, const ExperimentConfig& c, const RunOutcome& o) {
  fs::create_directories(dir);
  {
    std::ostringstream ss;
    write_trace_csv(ss, o.result.trace, c.backend.live);
    write_text(dir / "trace.csv", ss.str());
  }
  {
    std::ostringstream ss;
    write_delay_histogram_csv(ss, o.result.delay_histogram);
    write_text(dir / "delay_histogram.csv", ss.str());
  }
  save_matrix(dir / "x0.afw", o.result.initial);
  save_matrix(dir / "x_final.afw", o.result.final_iterate);
  if (c.output.save_log) save_update_logs(dir, o.result.logs);
  if (c.algorithm.record_inexactness) {
    const auto pts = gradient_inexactness_probe(o.result, o.schedule, o.constants);
    std::ostringstream ss;
    ss << "# afw-inexactness v1\niteration,probe,bound\n";
    for (const auto& p : pts)
      ss << p.iteration << ',' << afw::detail::format_double(p.probe) << ',' << afw::detail::format_double(p.bound)
         << '\n';
    write_text(dir / "inexactness.csv", ss.str());
  }
  write_text(dir / "config.json", c.raw.dump(2) + "\n");

  json manifest{{"manifest_version", kManifestVersion},
                {"code_version", kVersion},
                {"config_hash", hex64(config_hash(c.raw))},
                {"config", c.raw},
                {"seeds",
                 {{"problem", c.problem.seed},
                  {"algorithm", c.algorithm.seed},
                  {"backend", c.backend.seed},
                  {"constants", c.constants.seed}}},
                {"backend", c.backend.live ? "live" : "simulator"},
                {"constants", constants_json(o.constants)},
                {"sample_count", o.sample_count},
                {"reference_objective", o.reference_objective},
                {"completed", o.result.completed},
                {"accepted_updates", o.result.trace.empty() ? 0 : o.result.trace.back().iteration},
                {"abandoned", o.result.abandoned}};
  if (!o.result.error.empty()) manifest["error"] = o.result.error;
  // Wall-clock figures would break byte-identical reruns of simulator runs.
  if (c.backend.live) manifest["elapsed_seconds"] = o.elapsed_seconds;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Replay check

struct ReplayReport {
  double max_difference = 0.0;
  std::size_t entries = 0;
  std::size_t max_delay = 0;
  bool delays_within_tau = true;
  double final_nuclear_norm = 0.0;
  double theta = 0.0;
};

inline ReplayReport replay_check(const fs::path& dir) {
  const auto raw = read_config_file(dir / "config.json");
  const auto c = parse_config(raw);
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw FormatError("missing manifest.json in " + dir.string());
  const auto manifest = json::parse(ms);
  ProblemConstants k;
  k.L = manifest.at("constants").at("L").get<double>();
  k.G = manifest.at("constants").at("G").get<double>();
  k.D = manifest.at("constants").at("D").get<double>();
  const Schedule schedule = build_schedule(c.algorithm.schedule, k, manifest.at("sample_count").get<std::size_t>());
  const auto x0 = load_matrix(dir / "x0.afw");
  const auto xf = load_matrix(dir / "x_final.afw");
  const auto logs = load_update_logs(dir);
  ReplayReport r;
  const auto replayed = replay_epochs(x0, logs, schedule);
  r.max_difference = max_abs_difference(replayed, xf);
  for (const auto& log : logs) {
    r.entries += log.size();
    for (const auto& e : log.entries) {
      r.max_delay = std::max(r.max_delay, e.delay);
      if (schedule.tau != kUnboundedDelay && e.delay > schedule.tau) r.delays_within_tau = false;
    }
  }
  r.final_nuclear_norm = nuclear_norm(xf);
  r.theta = c.problem.theta;
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  std::string variant;
  json value;
  std::string directory;
  bool ok = false;
  std::string error;
  std::size_t workers = 1;
  std::vector<TraceRecord> trace;
  std::size_t abandoned = 0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double target = 0.0;
  std::string axis;
};

/// Mean objective over the final 20% of a trace.
inline double plateau_objective(const std::vector<TraceRecord>& trace) {
  if (trace.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = trace.size();
  const std::size_t first = n - std::max<std::size_t>(1, n / 5);
  double s = 0.0;
  for (std::size_t i = first; i < n; ++i) s += trace[i].objective;
  return s / static_cast<double>(n - first);
}

namespace detail {

inline std::string value_label(const json& v) {
  if (v.is_number_float()) return afw::detail::format_double(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline void apply_axis(json& raw, const std::string& axis, const json& value) {
  if (axis == "workers") raw["algorithm"]["workers"] = value;
  else if (axis == "p") raw["backend"]["p"] = value;
  else if (axis == "tau") raw["algorithm"]["schedule"]["tau"] = value;
  else raw["algorithm"]["schedule"]["c"] = value;
}

inline std::string optional_cell(const std::optional<double>& v) {
  return v ? afw::detail::format_double(*v) : std::string("unreachable");
}

}  // namespace detail

/// Runs every variant at every axis value. Problem, constants and F_ref are
/// computed once. A failing point is recorded and the sweep moves on.
inline SweepResult run_sweep(const ExperimentConfig& base, const fs::path& out, bool quiet) {
  if (!base.sweep) throw ConfigError("config has no sweep section");
  const auto& sw = *base.sweep;
  fs::create_directories(out);
  const Prepared prep = prepare(base);
  std::vector<json> variants = sw.variants;
  if (variants.empty()) variants.push_back(json::object());

  SweepResult result;
  result.target = base.output.target_relative_error;
  result.axis = sw.axis;
  for (const auto& variant : variants) {
    json patch = variant;
    std::string label = to_string(base.algorithm.kind).data();
    if (patch.contains("label")) {
      label = patch.at("label").get<std::string>();
      patch.erase("label");
    } else if (patch.contains("kind")) {
      label = patch.at("kind").get<std::string>();
    }
    for (const auto& value : sw.values) {
      SweepPoint pt;
      pt.variant = label;
      pt.value = value;
      pt.directory = label + "_" + sw.axis + "_" + detail::value_label(value);
      try {
        json raw = base.raw;
        raw.erase("sweep");
        raw["algorithm"].merge_patch(patch);
        detail::apply_axis(raw, sw.axis, value);
        const auto cfg = parse_config(raw);
        pt.workers = cfg.algorithm.workers;
        const auto o = execute(cfg, prep, quiet);
        write_run_outputs(out / pt.directory, cfg, o);
        pt.trace = o.result.trace;
        pt.abandoned = o.result.abandoned;
        pt.ok = o.result.completed;
        if (!pt.ok) pt.error = o.result.error;
      } catch (const std::exception& e) {
        pt.ok = false;
        pt.error = e.what();
      }
      if (!quiet)
        std::cerr << "sweep " << label << " " << sw.axis << "=" << detail::value_label(value) << ": "
                  << (pt.ok ? "ok" : "failed " + pt.error) << "\n";
      result.points.push_back(std::move(pt));
    }
  }
  return result;
}

/// Per-variant speedup tables from a workers sweep.
inline std::map<std::string, std::vector<SpeedupRow>> sweep_speedups(const SweepResult& r) {
  std::map<std::string, std::vector<std::pair<std::size_t, std::vector<TraceRecord>>>> by_variant;
  for (const auto& p : r.points)
    if (p.ok) by_variant[p.variant].emplace_back(p.workers, p.trace);
  std::map<std::string, std::vector<SpeedupRow>> out;
  for (auto& [label, traces] : by_variant) {
    try {
      out[label] = speedup_report(traces, r.target);
    } catch (const ParameterError&) {
      // No single-worker point for this variant; nothing to compare against.
    }
  }
  return out;
}

inline void write_speedup_table(const fs::path& path, const std::map<std::string, std::vector<SpeedupRow>>& tables,
                                double target) {
  std::ostringstream ss;
  ss << "# afw-speedup v1 target_relative_error=" << afw::detail::format_double(target) << '\n';
  ss << "variant,workers,time_to_target,speedup\n";
  for (const auto& [label, rows] : tables)
    for (const auto& row : rows)
      ss << label << ',' << row.workers << ',' << detail::optional_cell(row.time_to_target) << ','
         << detail::optional_cell(row.speedup) << '\n';
  write_text(path, ss.str());
}

/// sweep.csv (one row per point), sweep.json (index for the speedup command)
/// and, for a workers axis, speedup.csv.
inline void write_sweep_outputs(const fs::path& out, const SweepResult& r) {
  std::ostringstream ss;
  ss << "# afw-sweep v1 axis=" << r.axis << '\n';
  ss << "variant,value,status,accepted,abandoned,final_relative_error,best_relative_error,plateau_objective,"
        "time_to_target,bytes_in,bytes_out\n";
  json index{{"axis", r.axis}, {"target_relative_error", r.target}, {"points", json::array()}};
  for (const auto& p : r.points) {
    ss << p.variant << ',' << detail::value_label(p.value) << ',' << (p.ok ? "ok" : "failed");
    if (p.ok && !p.trace.empty()) {
      const auto& last = p.trace.back();
      double best = last.relative_error;
      for (const auto& t : p.trace) best = std::min(best, t.relative_error);
      ss << ',' << last.iteration << ',' << p.abandoned << ',' << afw::detail::format_double(last.relative_error)
         << ',' << afw::detail::format_double(best) << ',' << afw::detail::format_double(plateau_objective(p.trace))
         << ',' << detail::optional_cell(time_to_target(p.trace, r.target)) << ',' << last.bytes_in << ','
         << last.bytes_out;
    } else {
      ss << ",,,,,,,,";
    }
    ss << '\n';
    index["points"].push_back({{"variant", p.variant},
                               {"value", p.value},
                               {"workers", p.workers},
                               {"directory", p.directory},
                               {"status", p.ok ? "ok" : "failed"},
                               {"error", p.error}});
  }
  write_text(out / "sweep.csv", ss.str());
  write_text(out / "sweep.json", index.dump(2) + "\n");
  if (r.axis == "workers") write_speedup_table(out / "speedup.csv", sweep_speedups(r), r.target);
}

/// Rebuilds speedup.csv from a finished workers sweep directory.
inline std::map<std::string, std::vector<SpeedupRow>> speedup_from_directory(const fs::path& dir,
                                                                            std::optional<double> target) {
  std::ifstream is(dir / "sweep.json");
  if (!is) throw ConfigError("no sweep.json in " + dir.string());
  const auto index = json::parse(is);
  if (index.at("axis").get<std::string>() != "workers") throw ConfigError("speedup needs a workers sweep");
  SweepResult r;
  r.axis = "workers";
  r.target = target.value_or(index.at("target_relative_error").get<double>());
  for (const auto& p : index.at("points")) {
    SweepPoint pt;
    pt.variant = p.at("variant").get<std::string>();
    pt.workers = p.at("workers").get<std::size_t>();
    pt.ok = p.at("status").get<std::string>() == "ok";
    if (pt.ok) {
      std::ifstream ts(dir / p.at("directory").get<std::string>() / "trace.csv");
      if (!ts) throw FormatError("missing trace for " + p.at("directory").get<std::string>());
      pt.trace = read_trace_csv(ts);
    }
    r.points.push_back(std::move(pt));
  }
  auto tables = sweep_speedups(r);
  write_speedup_table(dir / "speedup.csv", tables, r.target);
  return tables;
}

// ---------------------------------------------------------------------------
// Verification suites

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
};

namespace detail {

inline std::string fmt(const char* format, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

template <Objective P>
double worst_finite_difference_error(const P& p, const DenseMatrix& x, double h) {
  const DenseMatrix g = full_gradient(p, x);
  double worst = 0.0;
  const double scale = std::max(frobenius_norm(g), 1e-12);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      DenseMatrix plus = x, minus = x;
      plus(i, j) += h;
      minus(i, j) -= h;
      const double fd = (p.loss(plus) - p.loss(minus)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g(i, j)) / std::max(std::abs(g(i, j)), 1e-3 * scale));
    }
  return worst;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

inline SuiteReport verify_gradients() {
  SuiteReport r{"gradients", {}};
  Rng rng(17);
  const auto sensing = generate_matrix_sensing(6, 5, 2, 40, 0.1, 3);
  const auto pnn = generate_pnn(5, 40, 4);
  double worst_sensing = 0.0, worst_pnn = 0.0, worst_full = 0.0;
  for (int t = 0; t < 5; ++t) {
    const auto xs = random_feasible_point(6, 5, 1.0, rng);
    const auto xp = random_feasible_point(5, 5, 1.0, rng);
    worst_sensing = std::max(worst_sensing, detail::worst_finite_difference_error(sensing, xs, 1e-6));
    worst_pnn = std::max(worst_pnn, detail::worst_finite_difference_error(pnn, xp, 1e-6));
    DenseMatrix manual(6, 5);
    for (std::size_t i = 0; i < sensing.sample_count(); ++i) sensing.accumulate_gradient(xs, i, 1.0, manual);
    manual *= 1.0 / static_cast<double>(sensing.sample_count());
    worst_full = std::max(worst_full, max_abs_difference(manual, full_gradient(sensing, xs)));
  }
  r.checks.push_back({"sensing finite differences", worst_sensing < 1e-4,
                      detail::fmt("worst relative error %.3g", worst_sensing)});
  r.checks.push_back(
      {"pnn finite differences", worst_pnn < 1e-4, detail::fmt("worst relative error %.3g", worst_pnn)});
  r.checks.push_back({"full index set equals full gradient", worst_full < 1e-12,
                      detail::fmt("max difference %.3g", worst_full)});
  return r;
}

inline SuiteReport verify_lmo() {
  SuiteReport r{"lmo", {}};
  Rng rng(23);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_gap = 0.0, worst_sigma = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t d1 = 3 + t % 7, d2 = 2 + (t * 3) % 9;
    DenseMatrix g(d1, d2);
    for (double& e : g.data()) e = normal(rng);
    const double theta = 0.5 + (t % 4);
    const auto lmo = lmo_nuclear(g, theta, kDefaultPowerTol, static_cast<std::uint64_t>(t));
    const auto ref = full_svd_reference(g);
    const double value = frobenius_inner(g, lmo.direction());
    worst_gap = std::max(worst_gap, (value + theta * ref.singular_values[0]) / (theta * frobenius_norm(g)));
    const auto triple = power_iteration_1svd(g, static_cast<std::uint64_t>(t));
    worst_sigma = std::max(worst_sigma, triple.sigma - ref.singular_values[0]);
  }
  r.checks.push_back({"optimality gap vs full SVD", worst_gap < 1e-6,
                      detail::fmt("worst gap / (theta ||g||) %.3g", worst_gap)});
  r.checks.push_back({"power sigma never exceeds sigma_max", worst_sigma <= 1e-8,
                      detail::fmt("worst excess %.3g", worst_sigma)});
  return r;
}

inline SuiteReport verify_replay() {
  SuiteReport r{"replay", {}};
  const auto p = generate_matrix_sensing(10, 10, 2, 300, 0.0, 5);
  const auto c = estimate_constants(p, 4, 2);
  RunOptions opts;
  opts.seed = 3;
  const GeometricComputeModel model{0.1, 1.0, 10.0};
  AlgorithmSpec spec{AlgorithmKind::SfwAsynNaive, sfw_asyn_schedule(c, 4, 100), 300, 4};
  const auto naive = simulate(p, spec, model, 7, opts);
  spec.kind = AlgorithmKind::SfwAsyn;
  const auto eff = simulate(p, spec, model, 7, opts);
  DenseMatrix diff = naive.final_iterate - eff.final_iterate;
  const double d = frobenius_norm(diff);
  r.checks.push_back({"naive vs efficient SFW-asyn", d < 1e-9, detail::fmt("||X_naive - X_eff||_F = %.3g", d)});
  const double replay = max_abs_difference(replay_epochs(eff.initial, eff.logs, spec.schedule), eff.final_iterate);
  r.checks.push_back({"log replay reproduces master iterate", replay < 1e-10, detail::fmt("max difference %.3g", replay)});

  AlgorithmSpec svrf{AlgorithmKind::SvrfAsynNaive, svrf_asyn_schedule(4, 100), 2, 4};
  const auto sn = simulate(p, svrf, model, 7, opts);
  svrf.kind = AlgorithmKind::SvrfAsyn;
  const auto se = simulate(p, svrf, model, 7, opts);
  DenseMatrix sd = sn.final_iterate - se.final_iterate;
  const double ds = frobenius_norm(sd);
  r.checks.push_back({"naive vs efficient SVRF-asyn", ds < 1e-9, detail::fmt("||X_naive - X_eff||_F = %.3g", ds)});
  return r;
}

inline SuiteReport verify_rates() {
  SuiteReport r{"rates", {}};
  const auto p = generate_matrix_sensing(10, 10, 2, 900, 0.0, 7);
  const auto c = estimate_constants(p, 8, 3);
  RunOptions opts;
  opts.seed = 5;
  const auto run = run_sfw(p, sfw_schedule(c, 200), 400, opts);
  const auto best = best_so_far(run.trace);
  std::vector<double> ks, hs;
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    const auto k = run.trace[i].iteration;
    if (k >= 20 && k <= 400 && best[i] > 0.0) {
      ks.push_back(static_cast<double>(k));
      hs.push_back(best[i]);
    }
  }
  const double slope = detail::loglog_slope(ks, hs);
  r.checks.push_back({"SFW log-log slope in [-1.4, -0.6]", slope >= -1.4 && slope <= -0.6,
                      detail::fmt("slope %.3f", slope)});
  return r;
}

inline SuiteReport verify_variance() {
  SuiteReport r{"variance", {}};
  const auto p = generate_matrix_sensing(10, 10, 2, 900, 0.0, 7);
  Rng rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix dir(10, 10);
  for (double& e : dir.data()) e = normal(rng);
  dir *= 1.0 / frobenius_norm(dir);
  std::vector<double> probes;
  for (double dist : {0.5, 0.25, 0.125}) {
    DenseMatrix x = p.ground_truth;
    add_scaled(x, dist, dir);
    probes.push_back(gradient_variance_probe(p, x, 200, 10, 41));
  }
  const bool ok = probes[1] <= 1.1 * probes[0] && probes[2] <= 1.1 * probes[1];
  r.checks.push_back({"variance nonincreasing toward X*", ok,
                      detail::fmt("probe at 0.5: %.4g, at 0.125: %.4g", probes[0], probes[2])});
  const double at_opt = gradient_variance_probe(p, p.ground_truth, 20, 10, 41);
  r.checks.push_back({"variance vanishes at X*", at_opt < 1e-20, detail::fmt("probe %.3g", at_opt)});
  return r;
}

inline const std::map<std::string, std::function<SuiteReport()>>& verification_suites() {
  static const std::map<std::string, std::function<SuiteReport()>> suites{{"gradients", verify_gradients},
                                                                         {"lmo", verify_lmo},
                                                                         {"replay", verify_replay},
                                                                         {"rates", verify_rates},
                                                                         {"variance", verify_variance}};
  return suites;
}

}  // namespace afw::harness
