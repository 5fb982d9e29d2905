#pragma once

// Step-size, batch-size, delay-tolerance and epoch-length schedules.
//
// Iterations are 1-based: the first update uses eta(1) = 1, so X_1 is the first
// LMO output whatever X_0 was.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "afw/linalg.hpp"
#include "afw/objectives.hpp"

namespace afw {

/// τ = ∞: the master never abandons an update.
inline constexpr std::size_t kUnboundedDelay = std::numeric_limits<std::size_t>::max();

struct Schedule {
  std::string name;
  std::function<double(std::size_t)> eta;
  std::function<std::size_t(std::size_t)> batch;
  std::size_t tau = 0;
  std::optional<std::size_t> batch_cap;
  std::function<std::size_t(std::size_t)> svrf_epochs;  // empty unless an SVRF schedule
  std::optional<double> c;                               // constant-batch parameter, when used
  // Use every sample, in index order, instead of a sampled minibatch.
  bool full_batch = false;
};

namespace detail {

inline double harmonic_step(std::size_t k) { return 2.0 / (static_cast<double>(k) + 1.0); }

inline std::size_t clamp_batch(double value, std::optional<std::size_t> cap) {
  // Absorb rounding noise so an exact integer is not bumped to the next one.
  double b = std::ceil(value * (1.0 - 1e-12));
  if (!(b >= 1.0)) b = 1.0;
  if (cap && b > static_cast<double>(*cap)) return *cap;
  // Anything beyond this is not a usable batch size anyway.
  if (b > 1e15) b = 1e15;
  return static_cast<std::size_t>(b);
}

inline void check_constants(const ProblemConstants& c) {
  if (!(c.G > 0.0) || !(c.L > 0.0) || !(c.D > 0.0))
    throw ParameterError("schedule: constants G, L, D must be positive");
}

inline void check_cap(std::optional<std::size_t> cap) {
  if (cap && *cap < 1) throw ParameterError("schedule: batch cap must be >= 1");
}

}  // namespace detail

/// η_k = 2/(k+1), m_k = ⌈G²(k+1)²/(L²D²)⌉ clamped to [1, cap].
inline Schedule sfw_schedule(const ProblemConstants& c, std::optional<std::size_t> cap = std::nullopt) {
  detail::check_constants(c);
  detail::check_cap(cap);
  const double factor = (c.G * c.G) / (c.L * c.L * c.D * c.D);
  Schedule s;
  s.name = "sfw";
  s.eta = detail::harmonic_step;
  s.batch = [factor, cap](std::size_t k) {
    const double k1 = static_cast<double>(k) + 1.0;
    return detail::clamp_batch(factor * k1 * k1, cap);
  };
  s.tau = 0;
  s.batch_cap = cap;
  return s;
}

/// η_k = 2/(k+1), m_k = ⌈G²(k+1)²/(τ²L²D²)⌉ clamped to [1, cap]. τ = 0 is the
/// synchronous case and returns the SFW schedule.
inline Schedule sfw_asyn_schedule(const ProblemConstants& c, std::size_t tau,
                                  std::optional<std::size_t> cap = std::nullopt) {
  if (tau == 0) return sfw_schedule(c, cap);
  detail::check_constants(c);
  detail::check_cap(cap);
  const double t = tau == kUnboundedDelay ? 1.0 : static_cast<double>(tau);
  const double factor = (c.G * c.G) / (t * t * c.L * c.L * c.D * c.D);
  Schedule s;
  s.name = "sfw_asyn";
  s.eta = detail::harmonic_step;
  s.batch = [factor, cap](std::size_t k) {
    const double k1 = static_cast<double>(k) + 1.0;
    return detail::clamp_batch(factor * k1 * k1, cap);
  };
  s.tau = tau;
  s.batch_cap = cap;
  return s;
}

/// Fixed batch m = ⌈G²c²/(max(τ,1)²L²D²)⌉. With τ ≤ 1 this is the synchronous
/// form G²c²/(L²D²).
inline Schedule constant_batch_schedule(const ProblemConstants& consts, double c, std::size_t tau) {
  detail::check_constants(consts);
  if (!(c > 0.0)) throw ParameterError("constant_batch_schedule: c must be positive");
  const double t = (tau == kUnboundedDelay || tau < 1) ? 1.0 : static_cast<double>(tau);
  const std::size_t m =
      detail::clamp_batch((consts.G * consts.G * c * c) / (t * t * consts.L * consts.L * consts.D * consts.D),
                          std::nullopt);
  Schedule s;
  s.name = "constant_batch";
  s.eta = detail::harmonic_step;
  s.batch = [m](std::size_t) { return m; };
  s.tau = tau;
  s.c = c;
  return s;
}

/// Inner batch m_k = ⌈96(k+1)/τ⌉, epoch lengths N_t = 2^{t+3} − 2.
inline Schedule svrf_asyn_schedule(std::size_t tau, std::optional<std::size_t> cap = std::nullopt) {
  if (tau < 1) throw ParameterError("svrf_asyn_schedule: tau must be >= 1");
  detail::check_cap(cap);
  const double t = tau == kUnboundedDelay ? 1.0 : static_cast<double>(tau);
  Schedule s;
  s.name = "svrf_asyn";
  s.eta = detail::harmonic_step;
  s.batch = [t, cap](std::size_t k) { return detail::clamp_batch(96.0 * (static_cast<double>(k) + 1.0) / t, cap); };
  s.svrf_epochs = [](std::size_t epoch) -> std::size_t {
    if (epoch > 60) throw ParameterError("svrf epoch index too large");
    return (std::size_t{1} << (epoch + 3)) - 2;
  };
  s.tau = tau;
  s.batch_cap = cap;
  return s;
}

/// A plain fixed batch with the usual step size; handy for experiments.
inline Schedule fixed_batch_schedule(std::size_t batch, std::size_t tau = 0) {
  if (batch < 1) throw ParameterError("fixed_batch_schedule: batch must be >= 1");
  Schedule s;
  s.name = "fixed_batch";
  s.eta = detail::harmonic_step;
  s.batch = [batch](std::size_t) { return batch; };
  s.tau = tau;
  return s;
}

/// Every sample every iteration: deterministic Frank-Wolfe.
inline Schedule full_batch_schedule(std::size_t sample_count, std::size_t tau = 0) {
  Schedule s = fixed_batch_schedule(sample_count, tau);
  s.name = "full_batch";
  s.full_batch = true;
  return s;
}

// ---------------------------------------------------------------------------
// Fixed-batch complexity

struct ComplexityEstimate {
  double grad_evals = 0.0;
  double lin_opts = 0.0;
};

/// Closed-form operation counts to reach F − F* ≤ ε with the constant-batch
/// schedule, with ε measured in units of LD² (ε̂ = ε/(LD²)):
///   SFW-asyn: lin-opts τ/(ε̂ − τ/c), grad-evals c²/(τε̂ − τ²/c) · G²/(L²D²)
///   SFW:      the same with τ = 1.
/// The G²/(L²D²) factor is the batch-size constant, so grad_evals equals
/// lin_opts times the per-iteration batch. Throws when ε ≤ τLD²/c, where the
/// residual floor already exceeds the target.
inline ComplexityEstimate complexity_estimate(double c, std::size_t tau, double epsilon,
                                              const ProblemConstants& k) {
  detail::check_constants(k);
  if (!(c > 0.0)) throw ParameterError("complexity_estimate: c must be positive");
  if (!(epsilon > 0.0)) throw ParameterError("complexity_estimate: epsilon must be positive");
  const double t = (tau == kUnboundedDelay || tau < 1) ? 1.0 : static_cast<double>(tau);
  const double eps = epsilon / (k.L * k.D * k.D);
  const double gap = eps - t / c;
  if (!(gap > 0.0))
    throw ParameterError("complexity_estimate: target below the residual floor tau*L*D^2/c");
  ComplexityEstimate out;
  out.lin_opts = t / gap;
  out.grad_evals = (c * c) / (t * eps - t * t / c) * (k.G * k.G) / (k.L * k.L * k.D * k.D);
  return out;
}

/// Uses the schedule's τ and c (constant-batch schedules only).
inline ComplexityEstimate complexity_estimate(const Schedule& s, double epsilon, const ProblemConstants& k) {
  if (!s.c) throw ParameterError("complexity_estimate: schedule has no constant-batch parameter c");
  return complexity_estimate(*s.c, s.tau, epsilon, k);
}

/// The SFW row of the comparison (τ = 1).
inline ComplexityEstimate complexity_estimate_sfw(double c, double epsilon, const ProblemConstants& k) {
  return complexity_estimate(c, 1, epsilon, k);
}

}  // namespace afw
