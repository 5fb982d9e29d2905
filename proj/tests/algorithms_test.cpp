#include <gtest/gtest.h>

#include <cmath>

#include "afw/algorithms.hpp"
#include "afw/simulator.hpp"

using namespace afw;

namespace {

const MatrixSensingProblem& small_noiseless() {
  static const auto p = generate_matrix_sensing(10, 10, 2, 900, 0.0, 7);
  return p;
}

const ProblemConstants& small_constants() {
  static const auto c = estimate_constants(small_noiseless(), 8, 3);
  return c;
}

RunOptions options(std::uint64_t seed = 5) {
  RunOptions o;
  o.seed = seed;
  return o;
}

const GeometricComputeModel kStraggly{0.1, 1.0, 10.0};

double max_delay(const RunResult& r) {
  std::size_t d = 0;
  for (const auto& log : r.logs)
    for (const auto& e : log.entries) d = std::max(d, e.delay);
  return static_cast<double>(d);
}

}  // namespace

TEST(FwStep, FullStepIsTheVertex) {
  const auto g = DenseMatrix::diagonal({3.0, 1.0, 0.5});
  const auto x = initial_point(3, 3, 1.0, 1);
  const auto next = fw_step(x, g, 1.0, 2.0);
  const auto vertex = lmo_nuclear(g, 2.0).direction();
  EXPECT_LT(max_abs_difference(next, vertex), 1e-15);
}

TEST(FwStep, HalfStepFromZero) {
  const auto next = fw_step(DenseMatrix(2, 2), DenseMatrix::diagonal({1.0, 0.0}), 0.5, 1.0);
  EXPECT_NEAR(next(0, 0), -0.5, 1e-12);
  EXPECT_NEAR(next(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(next(1, 1), 0.0, 1e-12);
}

TEST(FwStep, RejectsBadInput) {
  EXPECT_THROW(fw_step(DenseMatrix(2, 2), DenseMatrix::identity(2), 0.0, 1.0), ParameterError);
  EXPECT_THROW(fw_step(DenseMatrix::identity(2) * 3.0, DenseMatrix::identity(2), 0.5, 1.0), FeasibilityError);
}

TEST(FwStep, StaysFeasible) {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  DenseMatrix x = initial_point(4, 5, 1.5, 2);
  for (int k = 1; k <= 30; ++k) {
    DenseMatrix g(4, 5);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) g(i, j) = n(rng);
    x = fw_step(x, g, 2.0 / (k + 1.0), 1.5);
    EXPECT_LE(nuclear_norm(x), 1.5 + 1e-8);
  }
}

TEST(RunSfw, ConvergesOnNoiselessSensing) {
  const auto r = run_sfw(small_noiseless(), sfw_schedule(small_constants(), 200), 300, options());
  EXPECT_LT(r.trace.back().relative_error, 0.01);
  EXPECT_EQ(r.trace.size(), 300u);
}

TEST(RunSfw, SameSeedIsBitIdentical) {
  const auto s = sfw_schedule(small_constants(), 50);
  const auto a = run_sfw(small_noiseless(), s, 40, options(9));
  const auto b = run_sfw(small_noiseless(), s, 40, options(9));
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
  EXPECT_EQ(a.final_iterate, b.final_iterate);
}

TEST(RunSfw, FullBatchIsDeterministicFw) {
  // Independent loop: exact gradient, LMO, convex combination.
  const auto& p = small_noiseless();
  const auto opts = options(4);
  DenseMatrix x = initial_point(10, 10, 1.0, opts.seed);
  for (std::size_t k = 1; k <= 25; ++k) {
    const auto lmo = lmo_nuclear(full_gradient(p, x), 1.0, kDefaultPowerTol, detail::lmo_seed(opts.seed, 0, k));
    convex_combine_rank_one(x, 2.0 / (k + 1.0), -1.0, lmo.pair.u, lmo.pair.v);
  }
  const auto r = run_sfw(p, full_batch_schedule(p.sample_count()), 25, opts);
  EXPECT_LT(max_abs_difference(r.final_iterate, x), 1e-12);
  EXPECT_LT(max_abs_difference(run_fw(p, 25, opts).final_iterate, x), 1e-12);
}

TEST(RunSfw, BestSoFarIsMonotone) {
  const auto r = run_sfw(small_noiseless(), sfw_schedule(small_constants(), 20), 100, options());
  const auto best = best_so_far(r.trace);
  for (std::size_t i = 1; i < best.size(); ++i) EXPECT_LE(best[i], best[i - 1]);
}

TEST(Replay, EdgeCases) {
  const auto r = run_sfw(small_noiseless(), sfw_schedule(small_constants(), 20), 5, options());
  const auto s = sfw_schedule(small_constants(), 20);
  EXPECT_EQ(replay_updates(r.initial, r.logs[0], s, 3, 3), r.initial);
  const auto first = replay_updates(DenseMatrix(10, 10), r.logs[0], s, 0, 1);
  const auto& e = r.logs[0].at(1);
  EXPECT_LT(max_abs_difference(first, outer(e.u, e.v, e.scale)), 1e-15);
  EXPECT_THROW(replay_updates(r.initial, r.logs[0], s, 2, 1), ParameterError);
  EXPECT_THROW(replay_updates(r.initial, r.logs[0], s, 0, 6), ParameterError);
}

TEST(Replay, MatchesMaintainedIterateAndUnitVectors) {
  const auto s = sfw_asyn_schedule(small_constants(), 3, 100);
  const auto r = simulate(small_noiseless(), {AlgorithmKind::SfwAsyn, s, 200, 4}, kStraggly, 3, options());
  ASSERT_EQ(r.logs[0].size(), 200u);
  EXPECT_LT(max_abs_difference(replay_updates(r.initial, r.logs[0], s, 0, 200), r.final_iterate), 1e-10);
  for (const auto& e : r.logs[0].entries) {
    EXPECT_NEAR(norm2(e.u), 1.0, 1e-10);
    EXPECT_NEAR(norm2(e.v), 1.0, 1e-10);
  }
  // Every checkpoint is feasible.
  DenseMatrix x = r.initial;
  for (std::size_t k = 1; k <= 200; ++k) {
    apply_update(x, s.eta(k), r.logs[0].at(k));
    if (k % 20 == 0) EXPECT_LE(nuclear_norm(x), 1.0 + 1e-6);
  }
}

TEST(AsyncNaive, UnboundedDelayNeverAbandons) {
  const auto s = sfw_asyn_schedule(small_constants(), kUnboundedDelay, 50);
  const auto r = simulate(small_noiseless(), {AlgorithmKind::SfwAsynNaive, s, 150, 4}, kStraggly, 1, options());
  EXPECT_EQ(r.abandoned, 0u);
  EXPECT_EQ(r.trace.back().iteration, 150u);
}

TEST(AsyncNaive, DelayBoundHolds) {
  const auto s = sfw_asyn_schedule(small_constants(), 2, 30);
  const auto r = simulate(small_noiseless(), {AlgorithmKind::SfwAsynNaive, s, 500, 4}, kStraggly, 2, options());
  EXPECT_LE(max_delay(r), 2.0);
  EXPECT_GT(r.abandoned, 0u);
  ASSERT_LE(r.delay_histogram.size(), 3u);
  std::size_t total = 0;
  for (auto c : r.delay_histogram) total += c;
  EXPECT_EQ(total, 500u);
}

TEST(AsyncNaive, SingleWorkerIsSequentialSfw) {
  const auto s = sfw_asyn_schedule(small_constants(), 2, 100);
  const auto seq = run_sfw(small_noiseless(), s, 60, options(8));
  for (auto kind : {AlgorithmKind::SfwAsynNaive, AlgorithmKind::SfwAsyn}) {
    const auto r = simulate(small_noiseless(), {kind, s, 60, 1}, kStraggly, 4, options(8));
    EXPECT_EQ(max_delay(r), 0.0);
    EXPECT_EQ(r.final_iterate, seq.final_iterate);
  }
}

TEST(AsyncEfficient, MatchesNaive) {
  const auto s = sfw_asyn_schedule(small_constants(), 4, 200);
  const auto naive = simulate(small_noiseless(), {AlgorithmKind::SfwAsynNaive, s, 300, 4}, kStraggly, 6, options());
  const auto eff = simulate(small_noiseless(), {AlgorithmKind::SfwAsyn, s, 300, 4}, kStraggly, 6, options());
  EXPECT_LT(frobenius_norm(naive.final_iterate - eff.final_iterate), 1e-9);
  EXPECT_EQ(naive.abandoned, eff.abandoned);
}

TEST(AsyncEfficient, CommunicationAccounting) {
  const auto& p = small_noiseless();
  const std::size_t T = 200, W = 4, d = 10;
  const auto s = sfw_asyn_schedule(small_constants(), 4, 100);
  const auto eff = simulate(p, {AlgorithmKind::SfwAsyn, s, T, W}, kStraggly, 6, options());
  for (auto units : eff.channels.units_out) EXPECT_LE(units, T * (d + d));
  EXPECT_EQ(eff.channels.total_in(), eff.messages * (d + d + 1));

  const auto dist = simulate(p, {AlgorithmKind::SfwDist, sfw_schedule(small_constants(), 100), T, W}, kStraggly, 6,
                             options());
  EXPECT_EQ(dist.channels.total_in(), T * W * d * d);
  EXPECT_LT(eff.channels.total_in() + eff.channels.total_out(), dist.channels.total_in() + dist.channels.total_out());
  const auto& last = eff.trace.back();
  EXPECT_EQ(last.bytes_in, eff.channels.total_in() * kBytesPerUnit);
}

TEST(SfwDist, SingleWorkerIsSequentialSfw) {
  const auto s = sfw_schedule(small_constants(), 150);
  const auto seq = run_sfw(small_noiseless(), s, 50, options(3));
  const auto dist = simulate(small_noiseless(), {AlgorithmKind::SfwDist, s, 50, 1}, kStraggly, 1, options(3));
  EXPECT_EQ(dist.final_iterate, seq.final_iterate);
}

TEST(SfwDist, SplitBatch) {
  EXPECT_EQ(split_batch(10, 3), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(split_batch(2, 4), (std::vector<std::size_t>{2, 0, 0, 0}));
}

TEST(SfwDist, FullBatchMatchesFwForAnyWorkerCount) {
  const auto& p = small_noiseless();
  const auto fw = run_fw(p, 15, options(2));
  const auto dist =
      simulate(p, {AlgorithmKind::SfwDist, full_batch_schedule(p.sample_count()), 15, 3}, kStraggly, 1, options(2));
  EXPECT_LT(max_abs_difference(dist.final_iterate, fw.final_iterate), 1e-12);
}

TEST(Svrf, VarianceReducedGradientAtSnapshotIsFull) {
  const auto& p = small_noiseless();
  const auto x = initial_point(10, 10, 1.0, 3);
  const auto full = full_gradient(p, x);
  const auto all = all_indices(p.sample_count());
  const auto g = detail::variance_reduced_gradient(p, x, x, full, all);
  EXPECT_LT(max_abs_difference(g, full), 1e-12);
}

TEST(Svrf, FullBatchIsFwRestartedPerEpoch) {
  const auto& p = small_noiseless();
  auto s = svrf_asyn_schedule(1);
  s.full_batch = true;
  const auto opts = options(6);
  DenseMatrix x = initial_point(10, 10, 1.0, opts.seed);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t k = 1; k <= s.svrf_epochs(e); ++k) {
      const auto lmo = lmo_nuclear(full_gradient(p, x), 1.0, kDefaultPowerTol, detail::lmo_seed(opts.seed, e, k));
      convex_combine_rank_one(x, 2.0 / (k + 1.0), -1.0, lmo.pair.u, lmo.pair.v);
    }
  const auto r = run_svrf(p, s, 3, opts);
  EXPECT_LT(max_abs_difference(r.final_iterate, x), 1e-10);
}

TEST(Svrf, AsynSingleWorkerIsSequential) {
  const auto s = svrf_asyn_schedule(2, 100);
  const auto seq = run_svrf(small_noiseless(), s, 3, options(2));
  for (auto kind : {AlgorithmKind::SvrfAsyn, AlgorithmKind::SvrfAsynNaive}) {
    const auto r = simulate(small_noiseless(), {kind, s, 3, 1}, kStraggly, 5, options(2));
    EXPECT_EQ(r.final_iterate, seq.final_iterate);
    EXPECT_EQ(r.trace.back().grad_evals_total, seq.trace.back().grad_evals_total);
  }
}

TEST(Svrf, AsynEfficientMatchesNaiveAndReplays) {
  const auto s = svrf_asyn_schedule(4, 100);
  const auto naive = simulate(small_noiseless(), {AlgorithmKind::SvrfAsynNaive, s, 3, 4}, kStraggly, 8, options());
  const auto eff = simulate(small_noiseless(), {AlgorithmKind::SvrfAsyn, s, 3, 4}, kStraggly, 8, options());
  EXPECT_LT(frobenius_norm(naive.final_iterate - eff.final_iterate), 1e-9);
  ASSERT_EQ(eff.logs.size(), 3u);
  EXPECT_EQ(eff.logs[2].size(), 30u);
  EXPECT_LT(max_abs_difference(replay_epochs(eff.initial, eff.logs, s), eff.final_iterate), 1e-10);
  for (const auto& log : eff.logs)
    for (const auto& e : log.entries) EXPECT_LE(e.delay, 4u);
}

TEST(Svrf, UsesFewerGradientsThanSfwAtMatchedLinearOptimizations) {
  // SVRF's inner batches grow linearly, SFW's quadratically; both get the same
  // number of LMOs and we compare gradient evaluations spent to reach 1e-3.
  const auto& p = small_noiseless();
  const auto svrf = run_svrf(p, svrf_asyn_schedule(1), 5, options());
  const std::size_t lmos = svrf.trace.back().linops_total;
  const auto sfw = run_sfw(p, sfw_schedule(small_constants()), lmos, options());
  auto evals_to = [](const RunResult& r) -> std::optional<std::size_t> {
    for (const auto& t : r.trace)
      if (t.relative_error <= 1e-3) return t.grad_evals_total;
    return std::nullopt;
  };
  const auto a = evals_to(svrf), b = evals_to(sfw);
  ASSERT_TRUE(a.has_value());
  ASSERT_TRUE(b.has_value());
  EXPECT_LT(*a, *b) << "SVRF evals " << *a << ", SFW evals " << *b << " at " << lmos << " LMOs";
}

TEST(Inexactness, ExactGradientGivesZeroProbe) {
  const auto& p = small_noiseless();
  auto opts = options();
  opts.record_inexactness = true;
  const auto s = full_batch_schedule(p.sample_count());
  const auto r = simulate(p, {AlgorithmKind::SfwAsyn, s, 20, 1}, kStraggly, 1, opts);
  const auto pts = gradient_inexactness_probe(r, s, small_constants());
  ASSERT_EQ(pts.size(), 20u);
  for (const auto& q : pts) EXPECT_LT(q.probe, 1e-10);
}

TEST(Inexactness, BoundDecaysLikeOneOverK) {
  const ProblemConstants c{1.0, 3.0, 2.0};
  const auto s = sfw_asyn_schedule(c, 4);
  RunResult fake;
  for (std::size_t k = 1; k <= 400; ++k) fake.inexactness.push_back({k, 0, s.batch(k), 0.0});
  const auto pts = gradient_inexactness_probe(fake, s, c);
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (const auto& q : pts) {
    if (q.iteration < 20) continue;
    const double lx = std::log(q.iteration), ly = std::log(q.bound);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly, n += 1;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_GE(slope, -1.3);
  EXPECT_LE(slope, -0.7);
}

TEST(AlgorithmNames, RoundTrip) {
  for (auto k : {AlgorithmKind::Fw, AlgorithmKind::Sfw, AlgorithmKind::SfwDist, AlgorithmKind::SfwAsynNaive,
                 AlgorithmKind::SfwAsyn, AlgorithmKind::Svrf, AlgorithmKind::SvrfAsynNaive, AlgorithmKind::SvrfAsyn})
    EXPECT_EQ(algorithm_from_string(to_string(k)), k);
  EXPECT_FALSE(algorithm_from_string("sgd").has_value());
}
