#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "afw/linalg.hpp"
#include "afw/matrix_io.hpp"

using namespace afw;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  DenseMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

double loop_inner(const DenseMatrix& a, const DenseMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * b(i, j);
  return s;
}

}  // namespace

TEST(DenseMatrix, ShapeAndFiniteness) {
  EXPECT_THROW(DenseMatrix(0, 3), DimensionError);
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>(3)), DimensionError);
  DenseMatrix m(2, 3);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_TRUE(m.all_finite());
}

TEST(FrobeniusInner, IdentityAndZero) {
  EXPECT_DOUBLE_EQ(frobenius_inner(DenseMatrix::identity(2), DenseMatrix::identity(2)), 2.0);
  const auto a = random_matrix(3, 3, 1);
  EXPECT_DOUBLE_EQ(frobenius_inner(a, DenseMatrix(3, 3)), 0.0);
}

TEST(FrobeniusInner, MatchesDoubleLoop) {
  const auto a = random_matrix(3, 3, 2), b = random_matrix(3, 3, 3);
  EXPECT_NEAR(frobenius_inner(a, b), loop_inner(a, b), 1e-14);
  EXPECT_DOUBLE_EQ(frobenius_inner(a, b), frobenius_inner(b, a));
}

TEST(FrobeniusInner, ShapeMismatchThrows) {
  EXPECT_THROW(frobenius_inner(DenseMatrix(2, 3), DenseMatrix(3, 2)), DimensionError);
}

TEST(PowerIteration, Diagonal) {
  const auto t = power_iteration_1svd(DenseMatrix::diagonal({3.0, 1.0}), 1e-12, 100, 7);
  EXPECT_NEAR(t.sigma, 3.0, 1e-10);
  EXPECT_NEAR(t.u[0], 1.0, 1e-8);
  EXPECT_NEAR(t.v[0], 1.0, 1e-8);
  EXPECT_TRUE(t.converged);
}

TEST(PowerIteration, RankOneExact) {
  const Vector a{1.0, -2.0, 0.5}, b{0.3, 2.0};
  const auto m = outer(a, b);
  const auto t = power_iteration_1svd(m, 1e-12, 100, 3);
  EXPECT_NEAR(t.sigma, norm2(a) * norm2(b), 1e-10);
  EXPECT_NEAR(std::abs(dot(t.u, a)) / norm2(a), 1.0, 1e-10);
  EXPECT_NEAR(std::abs(dot(t.v, b)) / norm2(b), 1.0, 1e-10);
}

TEST(PowerIteration, AgreesWithFullSvd) {
  const auto m = random_matrix(10, 8, 11);
  const auto t = power_iteration_1svd(m, 1e-12, 2000, 5);
  const auto ref = full_svd_reference(m);
  EXPECT_NEAR(t.sigma, ref.singular_values[0], 1e-6);
  Vector u_ref(10);
  for (std::size_t i = 0; i < 10; ++i) u_ref[i] = ref.u(i, 0);
  EXPECT_NEAR(std::abs(dot(t.u, u_ref)), 1.0, 1e-4);
  EXPECT_NEAR(norm2(t.u), 1.0, 1e-12);
  EXPECT_NEAR(norm2(t.v), 1.0, 1e-12);
}

TEST(PowerIteration, SignConventionAndDeterminism) {
  const auto m = random_matrix(6, 4, 12);
  const auto a = power_iteration_1svd(m, 1e-10, 500, 9);
  const auto b = power_iteration_1svd(m, 1e-10, 500, 9);
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.v, b.v);
  for (double x : a.u)
    if (std::abs(x) > 1e-12) {
      EXPECT_GT(x, 0.0);
      break;
    }
}

TEST(PowerIteration, ZeroMatrixIsDegenerate) {
  EXPECT_THROW(power_iteration_1svd(DenseMatrix(3, 3), 1e-9, 10, 1), DegenerateInputError);
}

TEST(PowerIteration, NonConvergenceIsFlagged) {
  // Two nearly equal top singular values and a single step: not converged.
  const auto t = power_iteration_1svd(DenseMatrix::diagonal({1.0, 0.999999, 0.5}), 1e-15, 1, 3);
  EXPECT_FALSE(t.converged);
}

TEST(Lmo, DiagonalGradient) {
  const auto lmo = lmo_nuclear(DenseMatrix::diagonal({5.0, 1.0}), 1.0);
  const auto u = lmo.direction();
  EXPECT_NEAR(u(0, 0), -1.0, 1e-10);
  EXPECT_NEAR(frobenius_inner(DenseMatrix::diagonal({5.0, 1.0}), u), -5.0, 1e-10);
}

TEST(Lmo, MatchesFullSvdOnRandomGradient) {
  const auto g = random_matrix(6, 6, 21);
  const auto lmo = lmo_nuclear(g, 1.0);
  const auto ref = full_svd_reference(g);
  EXPECT_NEAR(frobenius_inner(g, lmo.direction()), -ref.singular_values[0], 1e-6);
}

TEST(Lmo, PositiveHomogeneity) {
  const auto g = random_matrix(5, 4, 22);
  const double one = frobenius_inner(g, lmo_nuclear(g, 1.0).direction());
  const double two = frobenius_inner(g, lmo_nuclear(g, 2.0).direction());
  EXPECT_NEAR(two, 2.0 * one, 1e-10);
}

TEST(Lmo, ZeroGradientIsFlaggedNotThrown) {
  const auto lmo = lmo_nuclear(DenseMatrix(3, 2), 1.5);
  EXPECT_TRUE(lmo.degenerate);
  EXPECT_NEAR(norm2(lmo.pair.u), 1.0, 1e-12);
  EXPECT_NEAR(norm2(lmo.pair.v), 1.0, 1e-12);
  EXPECT_THROW(lmo_nuclear(DenseMatrix(2, 2), 0.0), ParameterError);
}

TEST(Lmo, OptimalityOverManyRandomMatrices) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 200; ++t) {
    const std::size_t r = 2 + rng() % 8, c = 2 + rng() % 8;
    const auto g = random_matrix(r, c, 1000 + t);
    const double theta = 0.5 + (t % 3);
    const auto lmo = lmo_nuclear(g, theta, kDefaultPowerTol, t);
    const auto ref = full_svd_reference(g);
    EXPECT_LE(frobenius_inner(g, lmo.direction()), -theta * ref.singular_values[0] + 1e-6 * theta * frobenius_norm(g));
    const auto triple = power_iteration_1svd(g, t);
    EXPECT_LE(triple.sigma, ref.singular_values[0] + 1e-8);
    EXPECT_NEAR(nuclear_norm(lmo.pair.materialize()), theta, 1e-8);
  }
}

TEST(FullSvd, Examples) {
  const auto i3 = full_svd_reference(DenseMatrix::identity(3));
  for (double s : i3.singular_values) EXPECT_NEAR(s, 1.0, 1e-12);
  const auto d = full_svd_reference(DenseMatrix::diagonal({2.0, -3.0}));
  EXPECT_NEAR(d.singular_values[0], 3.0, 1e-12);
  EXPECT_NEAR(d.singular_values[1], 2.0, 1e-12);
}

TEST(FullSvd, Reconstruction) {
  const auto m = random_matrix(5, 4, 31);
  const auto s = full_svd_reference(m);
  DenseMatrix rec(5, 4);
  for (std::size_t k = 0; k < s.singular_values.size(); ++k)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) rec(i, j) += s.u(i, k) * s.singular_values[k] * s.v(j, k);
  EXPECT_LT(frobenius_norm(rec - m) / frobenius_norm(m), 1e-8);
  for (std::size_t k = 1; k < s.singular_values.size(); ++k)
    EXPECT_GE(s.singular_values[k - 1], s.singular_values[k]);
}

TEST(NuclearNorm, Examples) {
  EXPECT_NEAR(nuclear_norm(DenseMatrix::diagonal({1.0, 2.0, 3.0})), 6.0, 1e-12);
  Vector u{0.6, 0.8}, v{0.0, 1.0, 0.0};
  EXPECT_NEAR(nuclear_norm(outer(u, v)), 1.0, 1e-12);
}

TEST(NuclearNorm, TraceOfSquareRootOfGram) {
  // tr √(MᵀM) via the eigenvalues of MᵀM from an independent Jacobi sweep.
  const auto m = random_matrix(4, 4, 41);
  DenseMatrix g(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 4; ++k) g(i, j) += m(k, i) * m(k, j);
  for (int sweep = 0; sweep < 50; ++sweep)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t q = p + 1; q < 4; ++q) {
        if (std::abs(g(p, q)) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2 * g(p, q), g(q, q) - g(p, p));
        const double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t k = 0; k < 4; ++k) {
          const double gkp = g(k, p), gkq = g(k, q);
          g(k, p) = c * gkp - s * gkq;
          g(k, q) = s * gkp + c * gkq;
        }
        for (std::size_t k = 0; k < 4; ++k) {
          const double gpk = g(p, k), gqk = g(q, k);
          g(p, k) = c * gpk - s * gqk;
          g(q, k) = s * gpk + c * gqk;
        }
      }
  double trace_sqrt = 0.0;
  for (std::size_t i = 0; i < 4; ++i) trace_sqrt += std::sqrt(std::max(0.0, g(i, i)));
  EXPECT_NEAR(nuclear_norm(m), trace_sqrt, 1e-9);
}

TEST(ProjectNuclearBall, FeasibleAndIdempotentInside) {
  const auto m = random_matrix(5, 5, 51);
  const auto p = project_nuclear_ball(m, 1.0);
  EXPECT_NEAR(nuclear_norm(p), 1.0, 1e-9);
  const auto small = m * (0.1 / nuclear_norm(m));
  EXPECT_LT(max_abs_difference(project_nuclear_ball(small, 1.0), small), 1e-12);
}

TEST(MatrixIo, BinaryRoundTripIsExact) {
  const auto m = random_matrix(3, 7, 61);
  std::stringstream ss;
  write_matrix(ss, m);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4 + 8 + 3 * 7 * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "AFW1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3u);  // little-endian u32 rows
  EXPECT_EQ(read_matrix(ss), m);
}

TEST(MatrixIo, RejectsBadInput) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_matrix(bad), FormatError);
  std::stringstream truncated;
  write_matrix(truncated, DenseMatrix(2, 2));
  std::string s = truncated.str();
  s.resize(s.size() - 3);
  std::stringstream t(s);
  EXPECT_THROW(read_matrix(t), FormatError);
}

TEST(MatrixIo, Csv) {
  std::stringstream ss("# comment\n1,2,3\n\n4,5,6\n");
  const auto m = read_matrix_csv(ss);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m(1, 2), 6.0);
  std::stringstream ragged("1,2\n3\n");
  EXPECT_THROW(read_matrix_csv(ragged), FormatError);
}
