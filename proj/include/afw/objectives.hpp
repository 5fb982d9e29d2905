#pragma once

// Finite-sum objectives F(X) = (1/N) Σ f_i(X) over the nuclear-norm ball:
// matrix sensing and a two-layer quadratic-activation network with the smooth
// hinge loss.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "afw/linalg.hpp"
#include "afw/rng.hpp"

namespace afw {

/// What the optimizers need from a problem. `accumulate_gradient` adds
/// weight·∇f_i(X) into `acc`.
template <class P>
concept Objective = requires(const P& p, const DenseMatrix& x, std::size_t i, double w, DenseMatrix& acc) {
  { p.sample_count() } -> std::convertible_to<std::size_t>;
  { p.rows() } -> std::convertible_to<std::size_t>;
  { p.cols() } -> std::convertible_to<std::size_t>;
  { p.radius() } -> std::convertible_to<double>;
  { p.loss(x) } -> std::convertible_to<double>;
  { p.accumulate_gradient(x, i, w, acc) };
};

// ---------------------------------------------------------------------------
// Matrix sensing

struct MatrixSensingProblem {
  std::size_t d1 = 0;
  std::size_t d2 = 0;
  std::vector<double> sensing;  // N blocks of d1*d2, each row-major
  Vector responses;
  DenseMatrix ground_truth;
  double theta = 1.0;
  double noise_std = 0.0;
  std::size_t rank = 0;
  std::uint64_t seed = 0;

  std::size_t sample_count() const noexcept { return responses.size(); }
  std::size_t rows() const noexcept { return d1; }
  std::size_t cols() const noexcept { return d2; }
  double radius() const noexcept { return theta; }
  bool noiseless() const noexcept { return noise_std == 0.0; }

  std::span<const double> sensing_matrix(std::size_t i) const {
    return {sensing.data() + i * d1 * d2, d1 * d2};
  }

  double residual(const DenseMatrix& x, std::size_t i) const {
    return dot(sensing_matrix(i), x.data()) - responses[i];
  }

  double loss(const DenseMatrix& x) const {
    check_shape(x);
    double s = 0.0;
    for (std::size_t i = 0; i < sample_count(); ++i) {
      const double r = residual(x, i);
      s += r * r;
    }
    return s / static_cast<double>(sample_count());
  }

  // ∇f_i(X) = 2(⟨A_i, X⟩ − y_i) A_i
  void accumulate_gradient(const DenseMatrix& x, std::size_t i, double weight, DenseMatrix& acc) const {
    const double c = weight * 2.0 * residual(x, i);
    const auto a = sensing_matrix(i);
    auto out = acc.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += c * a[k];
  }

  void check_shape(const DenseMatrix& x) const {
    if (x.rows() != d1 || x.cols() != d2) throw DimensionError("matrix sensing: iterate shape mismatch");
  }
};

inline MatrixSensingProblem generate_matrix_sensing(std::size_t d1, std::size_t d2, std::size_t rank,
                                                    std::size_t n, double noise_std, std::uint64_t seed,
                                                    double theta = 1.0) {
  if (d1 == 0 || d2 == 0) throw ParameterError("generate_matrix_sensing: dimensions must be positive");
  if (rank == 0 || rank > std::min(d1, d2))
    throw ParameterError("generate_matrix_sensing: rank must lie in [1, min(d1, d2)]");
  if (n < 1) throw ParameterError("generate_matrix_sensing: need at least one sample");
  if (noise_std < 0.0) throw ParameterError("generate_matrix_sensing: noise_std must be nonnegative");
  if (!(theta > 0.0)) throw ParameterError("generate_matrix_sensing: theta must be positive");

  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  DenseMatrix u(d1, rank), v(d2, rank);
  for (double& x : u.data()) x = uniform(rng);
  for (double& x : v.data()) x = uniform(rng);
  DenseMatrix xstar(d1, d2);
  for (std::size_t i = 0; i < d1; ++i)
    for (std::size_t j = 0; j < d2; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += u(i, r) * v(j, r);
      xstar(i, j) = s;
    }
  xstar *= 1.0 / nuclear_norm(xstar);

  MatrixSensingProblem p;
  p.d1 = d1;
  p.d2 = d2;
  p.rank = rank;
  p.theta = theta;
  p.noise_std = noise_std;
  p.seed = seed;
  p.sensing.resize(n * d1 * d2);
  for (double& x : p.sensing) x = normal(rng);
  p.responses.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double eps = normal(rng);
    p.responses[i] = dot(p.sensing_matrix(i), xstar.data()) + noise_std * eps;
  }
  p.ground_truth = std::move(xstar);
  return p;
}

// ---------------------------------------------------------------------------
// Polynomial network, smooth hinge

/// s-hinge(y, t) as a function of z = t·y:
///   0.5 − z          for z ≤ 0
///   (0.5(1 − z))²    for 0 < z ≤ 1
///   0                otherwise
/// Note the value jumps from 0.5 to 0.25 across z = 0; the branches are
/// implemented exactly as stated, with z = 0 taking the first branch.
inline double smooth_hinge(double y, double t) noexcept {
  const double z = t * y;
  if (z <= 0.0) return 0.5 - z;
  if (z <= 1.0) {
    const double h = 0.5 * (1.0 - z);
    return h * h;
  }
  return 0.0;
}

/// ∂ s-hinge / ∂t, branch by branch.
inline double smooth_hinge_derivative(double y, double t) noexcept {
  const double z = t * y;
  if (z <= 0.0) return -y;
  if (z <= 1.0) return -0.5 * y * (1.0 - z);
  return 0.0;
}

struct PnnProblem {
  std::size_t dim = 0;
  std::vector<double> features;  // N rows of length dim, entries in [0, 1]
  Vector labels;                 // ±1
  double theta = 1.0;
  std::uint64_t seed = 0;

  std::size_t sample_count() const noexcept { return labels.size(); }
  std::size_t rows() const noexcept { return dim; }
  std::size_t cols() const noexcept { return dim; }
  double radius() const noexcept { return theta; }

  std::span<const double> feature(std::size_t i) const { return {features.data() + i * dim, dim}; }

  // t_i = a_iᵀ X a_i
  double response(const DenseMatrix& x, std::size_t i) const {
    const auto a = feature(i);
    double t = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
      const auto row = x.row(r);
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += row[c] * a[c];
      t += a[r] * s;
    }
    return t;
  }

  double loss(const DenseMatrix& x) const {
    check_shape(x);
    double s = 0.0;
    for (std::size_t i = 0; i < sample_count(); ++i) s += smooth_hinge(labels[i], response(x, i));
    return s / static_cast<double>(sample_count());
  }

  // ∇f_i(X) = g'(t_i) a_i a_iᵀ
  void accumulate_gradient(const DenseMatrix& x, std::size_t i, double weight, DenseMatrix& acc) const {
    const double g = smooth_hinge_derivative(labels[i], response(x, i));
    if (g == 0.0) return;
    const double c = weight * g;
    const auto a = feature(i);
    for (std::size_t r = 0; r < dim; ++r) {
      auto row = acc.row(r);
      const double cr = c * a[r];
      for (std::size_t q = 0; q < dim; ++q) row[q] += cr * a[q];
    }
  }

  void check_shape(const DenseMatrix& x) const {
    if (x.rows() != dim || x.cols() != dim) throw DimensionError("pnn: iterate must be dim x dim");
  }
};

/// Synthetic stand-in for image data: features uniform in [0, 1], labels from a
/// planted quadratic form thresholded at its median, so the classes are
/// balanced.
inline PnnProblem generate_pnn(std::size_t dim, std::size_t n, std::uint64_t seed, double theta = 1.0) {
  if (dim == 0) throw ParameterError("generate_pnn: dim must be positive");
  if (n < 2) throw ParameterError("generate_pnn: need at least two samples");
  if (!(theta > 0.0)) throw ParameterError("generate_pnn: theta must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  PnnProblem p;
  p.dim = dim;
  p.theta = theta;
  p.seed = seed;
  p.features.resize(n * dim);
  for (double& x : p.features) x = uniform(rng);
  Vector w(dim);
  for (double& x : w) x = normal(rng);

  Vector score(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = dot(p.feature(i), w);
    score[i] = s * s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  p.labels.assign(n, 1.0);
  for (std::size_t k = 0; k < n / 2; ++k) p.labels[order[k]] = -1.0;
  return p;
}

using Problem = std::variant<MatrixSensingProblem, PnnProblem>;

// ---------------------------------------------------------------------------
// Generic gradients

template <Objective P>
void check_indices(const P& p, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ParameterError("minibatch gradient: empty index set");
  for (auto i : indices)
    if (i >= p.sample_count()) throw ParameterError("minibatch gradient: index out of range");
}

/// acc += Σ_{i∈S} ∇f_i(X), in the order given.
template <Objective P>
void accumulate_gradient_sum(const P& p, const DenseMatrix& x, std::span<const std::size_t> indices,
                             DenseMatrix& acc) {
  for (auto i : indices) p.accumulate_gradient(x, i, 1.0, acc);
}

/// (1/|S|) Σ_{i∈S} ∇f_i(X). Duplicate indices count with multiplicity.
template <Objective P>
DenseMatrix minibatch_gradient(const P& p, const DenseMatrix& x, std::span<const std::size_t> indices) {
  check_indices(p, indices);
  DenseMatrix g(p.rows(), p.cols());
  accumulate_gradient_sum(p, x, indices, g);
  g *= 1.0 / static_cast<double>(indices.size());
  return g;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

template <Objective P>
DenseMatrix full_gradient(const P& p, const DenseMatrix& x) {
  return minibatch_gradient(p, x, all_indices(p.sample_count()));
}

inline double sensing_loss(const MatrixSensingProblem& p, const DenseMatrix& x) { return p.loss(x); }
inline DenseMatrix sensing_minibatch_gradient(const MatrixSensingProblem& p, const DenseMatrix& x,
                                              std::span<const std::size_t> indices) {
  p.check_shape(x);
  return minibatch_gradient(p, x, indices);
}
inline double pnn_loss(const PnnProblem& p, const DenseMatrix& x) { return p.loss(x); }
inline DenseMatrix pnn_minibatch_gradient(const PnnProblem& p, const DenseMatrix& x,
                                          std::span<const std::size_t> indices) {
  p.check_shape(x);
  return minibatch_gradient(p, x, indices);
}

/// m indices drawn uniformly with replacement.
inline std::vector<std::size_t> sample_with_replacement(Rng& rng, std::size_t n, std::size_t m) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(m);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

/// m distinct indices (m ≤ n) via a partial Fisher-Yates shuffle.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t m) {
  m = std::min(m, n);
  auto idx = all_indices(n);
  for (std::size_t k = 0; k < m; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(m);
  return idx;
}

// ---------------------------------------------------------------------------
// Feasible points

/// θ' u vᵀ with unit u, v drawn from N(0, I) and θ' = min(θ, 1).
inline DenseMatrix initial_point(std::size_t d1, std::size_t d2, double theta, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kStart}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector u(d1), v(d2);
  for (double& x : u) x = normal(rng);
  for (double& x : v) x = normal(rng);
  normalize(u);
  normalize(v);
  return outer(u, v, std::min(theta, 1.0));
}

/// Random rank-one point with nuclear norm uniform in (0, radius].
inline DenseMatrix random_feasible_point(std::size_t d1, std::size_t d2, double radius, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Vector u(d1), v(d2);
  for (double& x : u) x = normal(rng);
  for (double& x : v) x = normal(rng);
  normalize(u);
  normalize(v);
  return outer(u, v, radius * (1.0 - uniform(rng)));
}

// ---------------------------------------------------------------------------
// Problem constants

struct ProblemConstants {
  double L = 1.0;  // smoothness
  double G = 1.0;  // stochastic gradient deviation
  double D = 2.0;  // Frobenius diameter of the ball, 2θ
};

/// Empirical L and G for the schedules.
///
/// L: largest ratio ‖∇F(X) − ∇F(Y)‖_F / ‖X − Y‖_F over sampled feasible pairs.
/// Each pair's direction is refined by a few power steps (Δ ← ∇F(X+Δ) − ∇F(X)),
/// which drives the ratio toward the top curvature instead of an average one.
/// G: root mean square of ‖∇f_i(X) − ∇F(X)‖_F over sampled feasible X and
/// sampled indices (the standard deviation of the one-sample gradient).
template <Objective P>
ProblemConstants estimate_constants(const P& p, std::size_t sample_count, std::uint64_t seed) {
  if (sample_count < 2) throw ParameterError("estimate_constants: sample_count must be >= 2");
  constexpr std::size_t kRefineSteps = 4;
  const double theta = p.radius();
  const std::size_t d1 = p.rows(), d2 = p.cols();
  const double step_frobenius = 0.5 * theta / std::sqrt(static_cast<double>(std::min(d1, d2)));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ProblemConstants c;
  c.D = 2.0 * theta;

  double best_ratio = 0.0;
  for (std::size_t s = 0; s < sample_count; ++s) {
    const DenseMatrix x = random_feasible_point(d1, d2, 0.5 * theta, rng);
    const DenseMatrix gx = full_gradient(p, x);
    DenseMatrix delta(d1, d2);
    for (double& e : delta.data()) e = normal(rng);
    for (std::size_t r = 0; r <= kRefineSteps; ++r) {
      const double n = frobenius_norm(delta);
      if (n == 0.0) break;
      delta *= step_frobenius / n;
      DenseMatrix diff = full_gradient(p, x + delta);
      diff -= gx;
      best_ratio = std::max(best_ratio, frobenius_norm(diff) / frobenius_norm(delta));
      delta = std::move(diff);
    }
  }
  c.L = best_ratio > 0.0 ? best_ratio : 1e-12;

  double sum_sq = 0.0;
  std::size_t count = 0;
  std::uniform_int_distribution<std::size_t> pick(0, p.sample_count() - 1);
  for (std::size_t s = 0; s < sample_count; ++s) {
    const DenseMatrix x = random_feasible_point(d1, d2, theta, rng);
    const DenseMatrix gx = full_gradient(p, x);
    for (std::size_t t = 0; t < sample_count; ++t) {
      DenseMatrix gi(d1, d2);
      p.accumulate_gradient(x, pick(rng), 1.0, gi);
      gi -= gx;
      const double n = frobenius_norm(gi);
      sum_sq += n * n;
      ++count;
    }
  }
  c.G = std::sqrt(sum_sq / static_cast<double>(count - 1));
  if (!(c.G > 0.0)) c.G = 1e-12;
  return c;
}

/// Monte-Carlo estimate of E‖∇_S F(X) − ∇F(X)‖_F² for minibatches S of the
/// given size drawn without replacement (so batch = N gives exactly zero).
template <Objective P>
double gradient_variance_probe(const P& p, const DenseMatrix& x, std::size_t trials, std::size_t batch,
                               std::uint64_t seed) {
  if (trials < 1) throw ParameterError("gradient_variance_probe: trials must be >= 1");
  if (batch < 1) throw ParameterError("gradient_variance_probe: batch must be >= 1");
  const DenseMatrix full = full_gradient(p, x);
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto idx = sample_without_replacement(rng, p.sample_count(), batch);
    std::sort(idx.begin(), idx.end());
    DenseMatrix g = minibatch_gradient(p, x, idx);
    g -= full;
    const double n = frobenius_norm(g);
    total += n * n;
  }
  return total / static_cast<double>(trials);
}

}  // namespace afw
