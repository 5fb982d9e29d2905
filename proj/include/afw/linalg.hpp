#pragma once

// Dense kernels and the nuclear-norm-ball linear minimization oracle.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afw/rng.hpp"

namespace afw {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class FeasibilityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Vector = std::vector<double>;

/// Row-major real matrix. A default-constructed matrix is empty (0x0) and is
/// only useful as a placeholder; every other constructor requires positive
/// dimensions.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), entries_(checked_size(rows, cols), fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (entries_.size() != checked_size(rows, cols))
      throw DimensionError("DenseMatrix: entry count does not match rows*cols");
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> d) {
    DenseMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }
  static DenseMatrix diagonal(std::initializer_list<double> d) {
    return diagonal(std::span<const double>(d.begin(), d.size()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return entries_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return entries_[i * cols_ + j]; }

  std::span<double> data() noexcept { return entries_; }
  std::span<const double> data() const noexcept { return entries_; }
  std::span<double> row(std::size_t i) noexcept { return {entries_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {entries_.data() + i * cols_, cols_};
  }

  bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  void fill(double value) { std::fill(entries_.begin(), entries_.end(), value); }

  bool all_finite() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(), [](double x) { return std::isfinite(x); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] += o.entries_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require_same_shape(o, "operator-=");
    for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] -= o.entries_[k];
    return *this;
  }
  DenseMatrix& operator*=(double s) noexcept {
    for (double& x : entries_) x *= s;
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  void require_same_shape(const DenseMatrix& o, const char* what) const {
    if (!same_shape(o))
      throw DimensionError(std::string(what) + ": shape mismatch (" + std::to_string(rows_) + "x" +
                           std::to_string(cols_) + " vs " + std::to_string(o.rows_) + "x" +
                           std::to_string(o.cols_) + ")");
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw DimensionError("DenseMatrix: dimensions must be positive");
    return rows * cols;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Returns the norm before scaling; leaves the vector untouched if it is zero.
inline double normalize(std::span<double> a) {
  const double n = norm2(a);
  if (n > 0.0)
    for (double& x : a) x /= n;
  return n;
}

// ---------------------------------------------------------------------------
// Matrix kernels

inline double frobenius_inner(const DenseMatrix& a, const DenseMatrix& b) {
  a.require_same_shape(b, "frobenius_inner");
  return dot(a.data(), b.data());
}

inline double frobenius_norm(const DenseMatrix& a) { return norm2(a.data()); }

inline double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b) {
  a.require_same_shape(b, "max_abs_difference");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

/// y = M x
inline Vector multiply(const DenseMatrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw DimensionError("multiply: length mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = Mᵀ x
inline Vector multiply_transposed(const DenseMatrix& m, std::span<const double> x) {
  if (x.size() != m.rows()) throw DimensionError("multiply_transposed: length mismatch");
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

/// y += a * x
inline void add_scaled(DenseMatrix& y, double a, const DenseMatrix& x) {
  y.require_same_shape(x, "add_scaled");
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t k = 0; k < yd.size(); ++k) yd[k] += a * xd[k];
}

/// Entry (i, j) of scale * u vᵀ. Every code path that materializes or applies a
/// rank-one term goes through this so that the materialized and the implicit
/// forms agree bit for bit.
inline double rank_one_entry(double scale, double ui, double vj) noexcept { return (scale * ui) * vj; }

inline DenseMatrix outer(std::span<const double> u, std::span<const double> v, double scale = 1.0) {
  DenseMatrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = rank_one_entry(scale, u[i], v[j]);
  return m;
}

/// X <- (1 - eta) X + eta * U, U given explicitly.
inline void convex_combine(DenseMatrix& x, double eta, const DenseMatrix& u) {
  x.require_same_shape(u, "convex_combine");
  auto xd = x.data();
  auto ud = u.data();
  for (std::size_t k = 0; k < xd.size(); ++k) xd[k] = (1.0 - eta) * xd[k] + eta * ud[k];
}

/// X <- (1 - eta) X + eta * scale * u vᵀ without materializing the rank-one term.
inline void convex_combine_rank_one(DenseMatrix& x, double eta, double scale,
                                    std::span<const double> u, std::span<const double> v) {
  if (u.size() != x.rows() || v.size() != x.cols())
    throw DimensionError("convex_combine_rank_one: vector lengths do not match matrix shape");
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j)
      r[j] = (1.0 - eta) * r[j] + eta * rank_one_entry(scale, u[i], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Leading singular triple

struct SingularTriple {
  Vector u;
  double sigma = 0.0;
  Vector v;
  bool converged = false;
  std::size_t iterations = 0;
};

inline constexpr double kDefaultPowerTol = 1e-9;

inline std::size_t default_power_iterations(const DenseMatrix& m) {
  return 10 * std::max(m.rows(), m.cols());
}

/// Iteration budget the LMO grants power iteration. Near-tied top singular
/// values need far more sweeps than the plain default to reach 1e-6 optimality.
inline std::size_t lmo_power_iterations(const DenseMatrix& m) {
  return 100 * std::max(m.rows(), m.cols());
}

namespace detail {

inline void apply_sign_convention(Vector& u, Vector& v) {
  for (double x : u) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (double& a : u) a = -a;
        for (double& b : v) b = -b;
      }
      return;
    }
  }
}

inline Vector largest_column(const DenseMatrix& m) {
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j) * m(i, j);
    if (s > best_norm) {
      best_norm = s;
      best = j;
    }
  }
  Vector e(m.cols(), 0.0);
  e[best] = 1.0;
  return e;
}

}  // namespace detail

/// Power iteration on MᵀM for the leading singular triple of M.
///
/// The start vector is drawn from a generator seeded with `seed`, so the result
/// is a deterministic function of (M, seed). Stops once successive Rayleigh
/// quotients σ² differ by less than tol·σ², or after max_iters sweeps with
/// `converged` left false. When the top singular values (nearly) tie, whichever
/// leading direction the iteration settles on is returned. The sign is fixed so
/// that the first nonzero entry of u is positive.
inline SingularTriple power_iteration_1svd(const DenseMatrix& m, double tol, std::size_t max_iters,
                                           std::uint64_t seed) {
  if (!(tol > 0.0)) throw ParameterError("power_iteration_1svd: tol must be positive");
  if (max_iters < 1) throw ParameterError("power_iteration_1svd: max_iters must be >= 1");
  if (m.empty()) throw DimensionError("power_iteration_1svd: empty matrix");
  if (frobenius_norm(m) == 0.0) throw DegenerateInputError("power_iteration_1svd: zero matrix");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(m.cols());
  for (double& x : v) x = normal(rng);
  normalize(v);

  SingularTriple out;
  Vector u = multiply(m, v);
  if (normalize(u) == 0.0) {
    v = detail::largest_column(m);
    u = multiply(m, v);
    normalize(u);
  }
  double previous = -1.0;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    Vector z = multiply_transposed(m, u);
    const double sigma = normalize(z);
    v = std::move(z);
    u = multiply(m, v);
    normalize(u);
    out.iterations = it;
    out.sigma = sigma;
    const double rayleigh = sigma * sigma;
    if (previous >= 0.0 && std::abs(rayleigh - previous) < tol * rayleigh) {
      out.converged = true;
      break;
    }
    previous = rayleigh;
  }
  // Recompute sigma against the final u so that uᵀ M v = sigma holds exactly
  // up to rounding.
  Vector z = multiply_transposed(m, u);
  out.sigma = normalize(z);
  v = std::move(z);
  detail::apply_sign_convention(u, v);
  out.u = std::move(u);
  out.v = std::move(v);
  return out;
}

inline SingularTriple power_iteration_1svd(const DenseMatrix& m, std::uint64_t seed = 0) {
  return power_iteration_1svd(m, kDefaultPowerTol, default_power_iterations(m), seed);
}

// ---------------------------------------------------------------------------
// Linear minimization oracle over {‖U‖_* ≤ θ}

/// scale · u vᵀ with unit u, v. The LMO returns scale = θ and the minimizer is
/// −θ u vᵀ.
struct RankOnePair {
  Vector u;
  Vector v;
  double scale = 0.0;

  DenseMatrix materialize(double sign = 1.0) const { return outer(u, v, sign * scale); }
};

struct LmoResult {
  RankOnePair pair;
  bool degenerate = false;  // gradient was zero; direction is arbitrary
  bool converged = true;

  /// The minimizer U = −θ u vᵀ.
  DenseMatrix direction() const { return pair.materialize(-1.0); }
};

inline LmoResult lmo_nuclear(const DenseMatrix& grad, double theta, double tol = kDefaultPowerTol,
                             std::uint64_t seed = 0) {
  if (!(theta > 0.0)) throw ParameterError("lmo_nuclear: theta must be positive");
  LmoResult r;
  r.pair.scale = theta;
  if (frobenius_norm(grad) == 0.0) {
    r.degenerate = true;
    r.pair.u.assign(grad.rows(), 0.0);
    r.pair.v.assign(grad.cols(), 0.0);
    r.pair.u[0] = 1.0;
    r.pair.v[0] = 1.0;
    return r;
  }
  auto t = power_iteration_1svd(grad, tol, lmo_power_iterations(grad), seed);
  r.pair.u = std::move(t.u);
  r.pair.v = std::move(t.v);
  r.converged = t.converged;
  return r;
}

// ---------------------------------------------------------------------------
// Reference SVD (test oracle and nuclear norm)

struct FullSvd {
  Vector singular_values;  // nonincreasing
  DenseMatrix u;           // rows x r, r = min(rows, cols)
  DenseMatrix v;           // cols x r
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

inline DenseMatrix from_eigen(const Eigen::MatrixXd& e) {
  DenseMatrix m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

}  // namespace detail

inline FullSvd full_svd_reference(const DenseMatrix& m) {
  if (m.empty()) throw DimensionError("full_svd_reference: empty matrix");
  if (!m.all_finite()) throw DimensionError("full_svd_reference: non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(detail::to_eigen(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  FullSvd out;
  const auto& s = svd.singularValues();
  out.singular_values.assign(s.data(), s.data() + s.size());
  out.u = detail::from_eigen(svd.matrixU());
  out.v = detail::from_eigen(svd.matrixV());
  return out;
}

inline double nuclear_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double x : full_svd_reference(m).singular_values) s += x;
  return s;
}

/// Euclidean projection onto {‖X‖_* ≤ θ}: project the singular values onto the
/// ℓ1 ball. Used by the reference solver, never by the Frank-Wolfe methods.
inline DenseMatrix project_nuclear_ball(const DenseMatrix& m, double theta) {
  auto svd = full_svd_reference(m);
  auto& s = svd.singular_values;
  double total = 0.0;
  for (double x : s) total += x;
  if (total <= theta) return m;
  // Soft threshold λ such that Σ max(s_i − λ, 0) = θ (s is sorted descending).
  double cumulative = 0.0;
  double lambda = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    cumulative += s[k];
    const double candidate = (cumulative - theta) / static_cast<double>(k + 1);
    if (k + 1 == s.size() || s[k + 1] <= candidate) {
      lambda = candidate;
      break;
    }
  }
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double sk = std::max(s[k] - lambda, 0.0);
    if (sk == 0.0) continue;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += sk * svd.u(i, k) * svd.v(j, k);
  }
  return out;
}

}  // namespace afw
