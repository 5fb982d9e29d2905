#include <gtest/gtest.h>

#include <cmath>

#include "afw/schedules.hpp"

using namespace afw;

namespace {
const ProblemConstants kUnit{1.0, 1.0, 1.0};
}

TEST(SfwAsynSchedule, StepAndBatch) {
  const auto s = sfw_asyn_schedule(kUnit, 2);
  EXPECT_EQ(s.eta(1), 1.0);
  EXPECT_EQ(s.batch(3), 4u);  // ceil(16/4)
  const auto s1 = sfw_asyn_schedule(kUnit, 1);
  for (std::size_t k = 1; k < 50; ++k) {
    EXPECT_LE(s1.batch(k), 4 * s.batch(k)) << k;
    EXPECT_GT(s1.batch(k) + 4, 4 * s.batch(k)) << k;
  }
}

TEST(SfwAsynSchedule, TauZeroIsSynchronous) {
  const auto s = sfw_asyn_schedule(kUnit, 0, 50);
  EXPECT_EQ(s.name, "sfw");
  EXPECT_EQ(s.batch(9), 50u);
}

TEST(SfwSchedule, BatchAndCaps) {
  EXPECT_EQ(sfw_schedule(kUnit).batch(9), 100u);
  EXPECT_EQ(sfw_schedule(kUnit, 10000).batch(1000), 10000u);
  EXPECT_EQ(sfw_schedule(kUnit, 3000).batch(1000), 3000u);
  EXPECT_THROW(sfw_schedule(ProblemConstants{0.0, 1.0, 1.0}), ParameterError);
}

TEST(SfwSchedule, StepDecreasesStrictly) {
  const auto s = sfw_schedule(kUnit);
  for (std::size_t k = 1; k < 100; ++k) EXPECT_GT(s.eta(k), s.eta(k + 1));
}

TEST(SfwSchedule, TauSquaredRatio) {
  const ProblemConstants c{2.0, 7.0, 1.5};
  for (std::size_t tau : {2u, 3u, 5u}) {
    const auto a = sfw_schedule(c), b = sfw_asyn_schedule(c, tau);
    for (std::size_t k = 1; k < 60; ++k) {
      const double exact = 49.0 * (k + 1.0) * (k + 1.0) / (4.0 * 2.25);
      EXPECT_EQ(a.batch(k), static_cast<std::size_t>(std::ceil(exact)));
      EXPECT_NEAR(static_cast<double>(a.batch(k)) / (tau * tau), static_cast<double>(b.batch(k)), 1.0);
    }
  }
}

TEST(ConstantBatch, Examples) {
  EXPECT_EQ(constant_batch_schedule(kUnit, 10.0, 1).batch(1), 100u);
  EXPECT_EQ(constant_batch_schedule(kUnit, 10.0, 1).batch(77), 100u);
  EXPECT_EQ(constant_batch_schedule(kUnit, 10.0, 0).batch(1), 100u);
  EXPECT_EQ(constant_batch_schedule(kUnit, 20.0, 1).batch(1), 400u);
  EXPECT_EQ(constant_batch_schedule(kUnit, 20.0, 2).batch(1), 100u);
  EXPECT_THROW(constant_batch_schedule(kUnit, 0.0, 1), ParameterError);
}

TEST(SvrfSchedule, EpochsAndBatch) {
  const auto s = svrf_asyn_schedule(4);
  EXPECT_EQ(s.svrf_epochs(0), 6u);
  EXPECT_EQ(s.svrf_epochs(2), 30u);
  EXPECT_EQ(s.batch(3), 96u);
  for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(s.svrf_epochs(t + 1), 2 * s.svrf_epochs(t) + 2);
  EXPECT_THROW(svrf_asyn_schedule(0), ParameterError);
}

TEST(Complexity, AsynTradesLinearOptsForGradients) {
  const ProblemConstants c{1.0, 3.0, 1.0};
  const double eps = 0.5;
  const double big_c = 1e9;
  for (std::size_t tau : {1u, 2u, 4u}) {
    const auto asyn = complexity_estimate(big_c, tau, eps, c);
    const auto sfw = complexity_estimate_sfw(big_c, eps, c);
    EXPECT_NEAR(asyn.grad_evals * tau / sfw.grad_evals, 1.0, 1e-6);
    EXPECT_NEAR(asyn.lin_opts / (tau * sfw.lin_opts), 1.0, 1e-6);
    EXPECT_TRUE(std::isfinite(asyn.grad_evals) && asyn.grad_evals > 0);
    EXPECT_TRUE(std::isfinite(asyn.lin_opts) && asyn.lin_opts > 0);
  }
}

TEST(Complexity, BelowFloorThrows) {
  EXPECT_THROW(complexity_estimate(10.0, 4, 0.1, kUnit), ParameterError);
  const auto s = constant_batch_schedule(kUnit, 10.0, 2);
  EXPECT_NO_THROW(complexity_estimate(s, 1.0, kUnit));
  EXPECT_THROW(complexity_estimate(sfw_schedule(kUnit), 1.0, kUnit), ParameterError);
}
