#pragma once

// Per-update trace records, their CSV form, and the reference objective used to
// turn objectives into relative errors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "afw/linalg.hpp"
#include "afw/objectives.hpp"

namespace afw {

inline constexpr std::uint64_t kBytesPerUnit = sizeof(double);

struct TraceRecord {
  std::size_t iteration = 0;      // accepted updates so far (master t_m, summed over epochs)
  std::size_t accepted_time = 0;  // master logical clock: messages handled when this update was accepted
  double simulated_time = 0.0;
  double wall_time = 0.0;  // seconds; live executor only
  double objective = 0.0;
  double relative_error = 0.0;
  std::size_t delay = 0;
  std::size_t abandoned_total = 0;
  std::size_t grad_evals_total = 0;
  std::size_t linops_total = 0;
  std::uint64_t bytes_in = 0;   // cumulative, master inbound
  std::uint64_t bytes_out = 0;  // cumulative, master outbound
};

inline double relative_error(double objective, double initial_objective, double reference) {
  const double denom = std::max(initial_objective - reference, 1e-300);
  return (objective - reference) / denom;
}

inline constexpr const char* kTraceSchemaLine = "# afw-trace v1";

namespace detail {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

/// Writes the versioned header comment, the column header and one row per
/// record. The wall_time column is present only when `with_wall_time` is set.
inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace, bool with_wall_time) {
  os << kTraceSchemaLine << '\n';
  os << "iteration,accepted_time,simulated_time,";
  if (with_wall_time) os << "wall_time,";
  os << "objective,relative_error,delay,abandoned_total,grad_evals_total,linops_total,bytes_in,bytes_out\n";
  for (const auto& r : trace) {
    os << r.iteration << ',' << r.accepted_time << ',' << detail::format_double(r.simulated_time) << ',';
    if (with_wall_time) os << detail::format_double(r.wall_time) << ',';
    os << detail::format_double(r.objective) << ',' << detail::format_double(r.relative_error) << ','
       << r.delay << ',' << r.abandoned_total << ',' << r.grad_evals_total << ',' << r.linops_total << ','
       << r.bytes_in << ',' << r.bytes_out << '\n';
  }
}

/// Parses what write_trace_csv produces (with or without wall_time).
inline std::vector<TraceRecord> read_trace_csv(std::istream& is) {
  std::vector<TraceRecord> out;
  std::string line;
  bool header_seen = false;
  bool wall = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      wall = line.find("wall_time") != std::string::npos;
      continue;
    }
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const std::size_t expected = wall ? 12 : 11;
    if (cells.size() != expected) throw std::runtime_error("trace CSV: wrong column count");
    std::size_t c = 0;
    TraceRecord r;
    r.iteration = std::stoull(cells[c++]);
    r.accepted_time = std::stoull(cells[c++]);
    r.simulated_time = std::stod(cells[c++]);
    if (wall) r.wall_time = std::stod(cells[c++]);
    r.objective = std::stod(cells[c++]);
    r.relative_error = std::stod(cells[c++]);
    r.delay = std::stoull(cells[c++]);
    r.abandoned_total = std::stoull(cells[c++]);
    r.grad_evals_total = std::stoull(cells[c++]);
    r.linops_total = std::stoull(cells[c++]);
    r.bytes_in = std::stoull(cells[c++]);
    r.bytes_out = std::stoull(cells[c++]);
    out.push_back(r);
  }
  return out;
}

inline void write_delay_histogram_csv(std::ostream& os, const std::vector<std::size_t>& histogram) {
  os << "# afw-delay-histogram v1\n";
  os << "delay,count\n";
  for (std::size_t d = 0; d < histogram.size(); ++d) os << d << ',' << histogram[d] << '\n';
}

/// Best-so-far objective along a trace.
inline std::vector<double> best_so_far(const std::vector<TraceRecord>& trace) {
  std::vector<double> out;
  out.reserve(trace.size());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : trace) {
    best = std::min(best, r.objective);
    out.push_back(best);
  }
  return out;
}

/// First simulated time at which relative error drops to the target, if ever.
inline std::optional<double> time_to_target(const std::vector<TraceRecord>& trace, double target) {
  for (const auto& r : trace)
    if (r.relative_error <= target) return r.simulated_time;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reference objective

struct ReferenceOptions {
  std::size_t iterations = 1500;
  double initial_step = 1.0;
};

/// Accelerated projected gradient (FISTA with backtracking) over the nuclear
/// ball; returns the best objective seen. Only used to pin F_ref for relative
/// errors on problems whose optimum is not known in closed form.
template <Objective P>
double accelerated_projected_gradient(const P& p, const DenseMatrix& start, ReferenceOptions opts = {}) {
  const double theta = p.radius();
  DenseMatrix x = project_nuclear_ball(start, theta);
  DenseMatrix y = x;
  double t = 1.0;
  double step = opts.initial_step;
  double best = p.loss(x);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    const double fy = p.loss(y);
    const DenseMatrix gy = full_gradient(p, y);
    DenseMatrix next;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      DenseMatrix trial = y;
      add_scaled(trial, -step, gy);
      next = project_nuclear_ball(trial, theta);
      DenseMatrix diff = next - y;
      const double quad = fy + frobenius_inner(gy, diff) + 0.5 / step * frobenius_inner(diff, diff);
      if (p.loss(next) <= quad + 1e-15 * std::abs(fy)) break;
      step *= 0.5;
    }
    const double fn = p.loss(next);
    best = std::min(best, fn);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    DenseMatrix momentum = next - x;
    y = next;
    add_scaled(y, (t - 1.0) / t_next, momentum);
    // Restart the momentum when the objective goes up.
    if (fn > p.loss(x)) {
      y = next;
      t = 1.0;
    } else {
      t = t_next;
    }
    x = std::move(next);
  }
  return best;
}

/// F_ref: F(X*) for noiseless matrix sensing, otherwise a long reference run.
inline double reference_objective(const MatrixSensingProblem& p, ReferenceOptions opts = {}) {
  if (p.noiseless() && p.theta >= 1.0) return p.loss(p.ground_truth);
  const double best = accelerated_projected_gradient(p, p.ground_truth * std::min(1.0, p.theta), opts);
  return std::min(best, p.loss(p.ground_truth * std::min(1.0, p.theta)));
}

inline double reference_objective(const PnnProblem& p, ReferenceOptions opts = {}) {
  return accelerated_projected_gradient(p, DenseMatrix(p.dim, p.dim), opts);
}

inline double reference_objective(const Problem& p, ReferenceOptions opts = {}) {
  return std::visit([&](const auto& q) { return reference_objective(q, opts); }, p);
}

}  // namespace afw
