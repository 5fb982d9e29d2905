#pragma once

// Frank-Wolfe family over the nuclear-norm ball.
//
// Sequential methods (FW, SFW, SVRF) run directly. Distributed methods are
// written as single-owner state machines (a master and W workers) that only
// exchange value messages; a transport decides how messages move and how time
// passes. The discrete-event simulator and the threaded executor are the two
// transports, and both drive exactly the same state machines.
//
// Conventions shared by every method:
//  * iterations are 1-based, η_k = schedule.eta(k), first step is a full step;
//  * an update is stored as a unit pair (u, v) with scale −θ, i.e. the LMO output
//    U = −θ u vᵀ, and applied as X_k = (1 − η_k) X_{k−1} + η_k U;
//  * a worker whose local copy is at t_w computes with batch m_{t_w+1} and
//    seeds its LMO with (epoch, t_w + 1), which makes a single worker replay
//    the sequential method exactly;
//  * payload is counted in f64 units: a pair costs D1 + D2, a matrix D1·D2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "afw/linalg.hpp"
#include "afw/objectives.hpp"
#include "afw/rng.hpp"
#include "afw/schedules.hpp"
#include "afw/trace.hpp"

namespace afw {

// ---------------------------------------------------------------------------
// Updates and their log

struct RankOneUpdate {
  Vector u;                   // unit
  Vector v;                   // unit
  double scale = -1.0;        // −θ
  std::size_t origin = 0;     // t_w: iterate index the worker computed from
  std::size_t epoch = 0;      // SVRF outer iteration; 0 otherwise
  std::size_t delay = 0;      // filled in by the master on acceptance
};

/// Append-only; entry k (1-based) is the k-th accepted update of its epoch.
struct UpdateLog {
  std::vector<RankOneUpdate> entries;

  std::size_t size() const noexcept { return entries.size(); }
  const RankOneUpdate& at(std::size_t k) const { return entries.at(k - 1); }
  void append(RankOneUpdate u) { entries.push_back(std::move(u)); }
};

inline void apply_update(DenseMatrix& x, double eta, const RankOneUpdate& u) {
  convex_combine_rank_one(x, eta, u.scale, u.u, u.v);
}

/// X_to from X_from by X_k = (1 − η_k) X_{k−1} + η_k u_k v_kᵀ for k = from+1..to.
inline DenseMatrix replay_updates(const DenseMatrix& x_from, const UpdateLog& log, const Schedule& schedule,
                                  std::size_t from, std::size_t to) {
  if (from > to || to > log.size()) throw ParameterError("replay_updates: need from <= to <= log size");
  DenseMatrix x = x_from;
  for (std::size_t k = from + 1; k <= to; ++k) apply_update(x, schedule.eta(k), log.at(k));
  return x;
}

/// Replays a sequence of epoch logs, each restarting its step counter.
inline DenseMatrix replay_epochs(const DenseMatrix& x0, const std::vector<UpdateLog>& logs,
                                 const Schedule& schedule) {
  DenseMatrix x = x0;
  for (const auto& log : logs) x = replay_updates(x, log, schedule, 0, log.size());
  return x;
}

/// One Frank-Wolfe step: U = LMO(grad), X' = (1 − η) X + η U.
inline DenseMatrix fw_step(const DenseMatrix& x, const DenseMatrix& grad, double eta, double theta,
                           std::uint64_t lmo_seed = 0) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("fw_step: eta must lie in (0, 1]");
  x.require_same_shape(grad, "fw_step");
  if (nuclear_norm(x) > theta + 1e-8) throw FeasibilityError("fw_step: iterate outside the nuclear ball");
  const auto lmo = lmo_nuclear(grad, theta, kDefaultPowerTol, lmo_seed);
  DenseMatrix out = x;
  convex_combine_rank_one(out, eta, -theta, lmo.pair.u, lmo.pair.v);
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  std::uint64_t seed = 1;             // start point, minibatches, LMO start vectors
  double reference_objective = 0.0;  // F_ref for relative errors
  std::size_t record_every = 1;      // evaluate F every this many accepted updates
  bool record_inexactness = false;   // SFW family: keep ‖∇F(X_{k−1}) − ∇̃‖ per update
  double lmo_tol = kDefaultPowerTol;
};

/// ‖∇F(X_{k−1}) − ∇̃_{k−1}‖_F · D for one accepted update, with what is needed
/// to evaluate the staleness bound afterwards.
struct InexactnessSample {
  std::size_t iteration = 0;
  std::size_t delay = 0;
  std::size_t batch = 0;
  double gradient_error = 0.0;  // ‖∇F(X_{k−1}) − ∇̃‖_F
};

struct ChannelCounters {
  std::vector<std::uint64_t> units_in;   // per worker, into the master
  std::vector<std::uint64_t> units_out;  // per worker, out of the master

  explicit ChannelCounters(std::size_t workers = 0) : units_in(workers, 0), units_out(workers, 0) {}
  std::uint64_t total_in() const { return sum(units_in); }
  std::uint64_t total_out() const { return sum(units_out); }

 private:
  static std::uint64_t sum(const std::vector<std::uint64_t>& v) {
    std::uint64_t s = 0;
    for (auto x : v) s += x;
    return s;
  }
};

struct RunResult {
  std::vector<TraceRecord> trace;
  std::vector<UpdateLog> logs;  // one per epoch; a single log outside SVRF
  DenseMatrix initial;
  DenseMatrix final_iterate;
  double initial_objective = 0.0;
  std::vector<std::size_t> delay_histogram;
  std::vector<InexactnessSample> inexactness;
  ChannelCounters channels;
  std::size_t abandoned = 0;
  std::size_t messages = 0;
  bool completed = true;
  std::string error;
};

enum class AlgorithmKind { Fw, Sfw, SfwDist, SfwAsynNaive, SfwAsyn, Svrf, SvrfAsynNaive, SvrfAsyn };

inline std::string_view to_string(AlgorithmKind k) {
  switch (k) {
    case AlgorithmKind::Fw: return "fw";
    case AlgorithmKind::Sfw: return "sfw";
    case AlgorithmKind::SfwDist: return "sfw_dist";
    case AlgorithmKind::SfwAsynNaive: return "sfw_asyn_naive";
    case AlgorithmKind::SfwAsyn: return "sfw_asyn";
    case AlgorithmKind::Svrf: return "svrf";
    case AlgorithmKind::SvrfAsynNaive: return "svrf_asyn_naive";
    case AlgorithmKind::SvrfAsyn: return "svrf_asyn";
  }
  return "?";
}

inline std::optional<AlgorithmKind> algorithm_from_string(std::string_view s) {
  for (auto k : {AlgorithmKind::Fw, AlgorithmKind::Sfw, AlgorithmKind::SfwDist, AlgorithmKind::SfwAsynNaive,
                 AlgorithmKind::SfwAsyn, AlgorithmKind::Svrf, AlgorithmKind::SvrfAsynNaive,
                 AlgorithmKind::SvrfAsyn})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline bool is_svrf(AlgorithmKind k) {
  return k == AlgorithmKind::Svrf || k == AlgorithmKind::SvrfAsynNaive || k == AlgorithmKind::SvrfAsyn;
}

inline bool is_sequential(AlgorithmKind k) {
  return k == AlgorithmKind::Fw || k == AlgorithmKind::Sfw || k == AlgorithmKind::Svrf;
}

/// Times a transport hands to the master with each message.
struct Clock {
  double simulated_time = 0.0;
  double wall_time = 0.0;
};

namespace detail {

inline std::uint64_t lmo_seed(std::uint64_t seed, std::size_t epoch, std::size_t k) {
  return derive_seed(seed, {stream::kLmo, epoch, k});
}

inline Rng sampling_stream(std::uint64_t seed, std::size_t worker) {
  return Rng(derive_seed(seed, {stream::kSampling, worker}));
}

inline std::vector<std::size_t> draw_batch(Rng& rng, const Schedule& s, std::size_t n, std::size_t k) {
  if (s.full_batch) return all_indices(n);
  return sample_with_replacement(rng, n, s.batch(k));
}

/// (1/m) Σ_{i∈S} (∇f_i(X) − ∇f_i(W)) + ∇F(W)
template <Objective P>
DenseMatrix variance_reduced_gradient(const P& p, const DenseMatrix& x, const DenseMatrix& w,
                                      const DenseMatrix& grad_w, std::span<const std::size_t> idx) {
  check_indices(p, idx);
  DenseMatrix g(p.rows(), p.cols());
  for (auto i : idx) {
    p.accumulate_gradient(x, i, 1.0, g);
    p.accumulate_gradient(w, i, -1.0, g);
  }
  g *= 1.0 / static_cast<double>(idx.size());
  g += grad_w;
  return g;
}

inline RankOneUpdate make_update(LmoResult lmo, double theta, std::size_t origin, std::size_t epoch) {
  RankOneUpdate u;
  u.u = std::move(lmo.pair.u);
  u.v = std::move(lmo.pair.v);
  u.scale = -theta;
  u.origin = origin;
  u.epoch = epoch;
  return u;
}

/// Running counters plus trace emission; shared by the sequential loops and
/// the masters.
template <Objective P>
class Recorder {
 public:
  Recorder(const P& p, const RunOptions& opts, const DenseMatrix& x0, std::size_t workers)
      : problem_(&p), opts_(opts), initial_objective_(p.loss(x0)), channels_(workers) {}

  void add_work(std::size_t grad_evals, std::size_t linops) {
    grad_evals_ += grad_evals;
    linops_ += linops;
  }
  void add_in(std::size_t worker, std::uint64_t units) { channels_.units_in[worker] += units; }
  void add_out(std::size_t worker, std::uint64_t units) { channels_.units_out[worker] += units; }
  void add_out_all(std::uint64_t units) {
    for (auto& c : channels_.units_out) c += units;
  }
  void abandon() { ++abandoned_; }
  void message() { ++messages_; }

  void note_delay(std::size_t delay) {
    if (histogram_.size() <= delay) histogram_.resize(delay + 1, 0);
    ++histogram_[delay];
  }

  void accepted(std::size_t iteration, std::size_t delay, const DenseMatrix& x, const Clock& clock, bool force) {
    if (!force && opts_.record_every > 1 && iteration % opts_.record_every != 0) return;
    TraceRecord r;
    r.iteration = iteration;
    r.accepted_time = messages_;
    r.simulated_time = clock.simulated_time;
    r.wall_time = clock.wall_time;
    r.objective = problem_->loss(x);
    r.relative_error = relative_error(r.objective, initial_objective_, opts_.reference_objective);
    r.delay = delay;
    r.abandoned_total = abandoned_;
    r.grad_evals_total = grad_evals_;
    r.linops_total = linops_;
    r.bytes_in = channels_.total_in() * kBytesPerUnit;
    r.bytes_out = channels_.total_out() * kBytesPerUnit;
    trace_.push_back(r);
  }

  void fill(RunResult& out) {
    out.trace = std::move(trace_);
    out.initial_objective = initial_objective_;
    out.delay_histogram = std::move(histogram_);
    out.channels = std::move(channels_);
    out.abandoned = abandoned_;
    out.messages = messages_;
  }

  std::size_t abandoned() const noexcept { return abandoned_; }

 private:
  const P* problem_;
  RunOptions opts_;
  double initial_objective_;
  ChannelCounters channels_;
  std::vector<TraceRecord> trace_;
  std::vector<std::size_t> histogram_;
  std::size_t grad_evals_ = 0;
  std::size_t linops_ = 0;
  std::size_t abandoned_ = 0;
  std::size_t messages_ = 0;
};

inline void require_horizon(std::size_t t, const char* what) {
  if (t < 1) throw ParameterError(std::string(what) + ": need at least one iteration");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequential methods

/// Stochastic Frank-Wolfe: minibatch gradient, LMO, convex combination.
template <Objective P>
RunResult run_sfw(const P& p, const Schedule& schedule, std::size_t iterations, const RunOptions& opts = {}) {
  detail::require_horizon(iterations, "run_sfw");
  const double theta = p.radius();
  RunResult out;
  out.initial = initial_point(p.rows(), p.cols(), theta, opts.seed);
  DenseMatrix x = out.initial;
  detail::Recorder<P> rec(p, opts, x, 1);
  Rng rng = detail::sampling_stream(opts.seed, 0);
  UpdateLog log;
  for (std::size_t k = 1; k <= iterations; ++k) {
    const auto idx = detail::draw_batch(rng, schedule, p.sample_count(), k);
    const DenseMatrix grad = minibatch_gradient(p, x, idx);
    auto update = detail::make_update(lmo_nuclear(grad, theta, opts.lmo_tol, detail::lmo_seed(opts.seed, 0, k)),
                                      theta, k - 1, 0);
    apply_update(x, schedule.eta(k), update);
    rec.add_work(idx.size(), 1);
    rec.note_delay(0);
    rec.message();
    rec.accepted(k, 0, x, {}, k == iterations);
    log.append(std::move(update));
  }
  out.logs.push_back(std::move(log));
  out.final_iterate = std::move(x);
  rec.fill(out);
  return out;
}

/// Deterministic Frank-Wolfe (full gradient every step).
template <Objective P>
RunResult run_fw(const P& p, std::size_t iterations, const RunOptions& opts = {}) {
  return run_sfw(p, full_batch_schedule(p.sample_count()), iterations, opts);
}

/// Stochastic variance-reduced Frank-Wolfe. Each outer iteration t takes a
/// snapshot W_t with full gradient ∇F(W_t), then runs N_t inner steps from
/// X_0 = W_t with variance-reduced minibatch gradients and step counter reset.
template <Objective P>
RunResult run_svrf(const P& p, const Schedule& schedule, std::size_t epochs, const RunOptions& opts = {}) {
  detail::require_horizon(epochs, "run_svrf");
  if (!schedule.svrf_epochs) throw ParameterError("run_svrf: schedule has no epoch lengths");
  const double theta = p.radius();
  RunResult out;
  out.initial = initial_point(p.rows(), p.cols(), theta, opts.seed);
  DenseMatrix x = out.initial;
  detail::Recorder<P> rec(p, opts, x, 1);
  Rng rng = detail::sampling_stream(opts.seed, 0);
  std::size_t total = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    const DenseMatrix snapshot = x;
    const DenseMatrix snapshot_grad = full_gradient(p, snapshot);
    rec.add_work(p.sample_count(), 0);
    UpdateLog log;
    const std::size_t inner = schedule.svrf_epochs(e);
    for (std::size_t k = 1; k <= inner; ++k) {
      const auto idx = detail::draw_batch(rng, schedule, p.sample_count(), k);
      const DenseMatrix grad = detail::variance_reduced_gradient(p, x, snapshot, snapshot_grad, idx);
      auto update = detail::make_update(
          lmo_nuclear(grad, theta, opts.lmo_tol, detail::lmo_seed(opts.seed, e, k)), theta, k - 1, e);
      apply_update(x, schedule.eta(k), update);
      rec.add_work(2 * idx.size(), 1);
      rec.note_delay(0);
      rec.message();
      ++total;
      rec.accepted(total, 0, x, {}, e + 1 == epochs && k == inner);
      log.append(std::move(update));
    }
    out.logs.push_back(std::move(log));
  }
  out.final_iterate = std::move(x);
  rec.fill(out);
  return out;
}

// ---------------------------------------------------------------------------
// Asynchronous master / worker

enum class AsyncVariant {
  Naive,     // workers ship U as a matrix, master broadcasts X
  Efficient  // workers ship (u, v, t_w), master returns the missing log entries
};

struct Submission {
  std::size_t worker = 0;
  RankOneUpdate update;
  std::size_t batch = 0;
  std::size_t grad_evals = 0;  // spent on this task, snapshot gradient included
  std::size_t linops = 0;
  std::shared_ptr<const DenseMatrix> materialized;   // naive variant: U_w
  std::shared_ptr<const DenseMatrix> gradient_used;  // inexactness probe only
};

/// Contiguous run of log entries first+1 .. first+entries.size() of one epoch.
struct LogSegment {
  std::size_t epoch = 0;
  std::size_t first = 0;
  std::vector<RankOneUpdate> entries;
};

struct Reply {
  bool stop = false;
  bool accepted = false;
  std::size_t master_iteration = 0;  // t_m within `epoch` after handling
  std::size_t epoch = 0;
  std::vector<LogSegment> segments;              // efficient
  std::shared_ptr<const DenseMatrix> iterate;   // naive: X_{t_m}
  std::shared_ptr<const DenseMatrix> snapshot;  // naive SVRF: W of `epoch`
};

struct AsyncSetup {
  AsyncVariant variant = AsyncVariant::Efficient;
  bool svrf = false;
  std::vector<std::size_t> epoch_lengths;  // accepted updates per epoch; {T} outside SVRF
  std::size_t workers = 1;
};

/// The parameter server. Accepts an update iff it comes from the current epoch
/// and its delay t_m − t_w is at most τ, then applies it to its own copy of X
/// (kept for output only in the efficient variant) and appends it to the log.
template <Objective P>
class AsyncMaster {
 public:
  AsyncMaster(const P& p, Schedule schedule, AsyncSetup setup, DenseMatrix x0, RunOptions opts)
      : problem_(&p),
        schedule_(std::move(schedule)),
        setup_(std::move(setup)),
        opts_(opts),
        x_(x0),
        recorder_(p, opts, x0, setup_.workers) {
    if (setup_.epoch_lengths.empty()) throw ParameterError("AsyncMaster: no epochs");
    for (auto n : setup_.epoch_lengths)
      if (n < 1) throw ParameterError("AsyncMaster: empty epoch");
    result_.initial = std::move(x0);
    logs_.emplace_back();
  }

  bool finished() const noexcept { return finished_; }
  std::size_t iteration() const noexcept { return t_m_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const DenseMatrix& iterate() const noexcept { return x_; }
  const std::vector<UpdateLog>& logs() const noexcept { return logs_; }

  Reply handle(const Submission& s, const Clock& clock) {
    const std::size_t d1 = problem_->rows(), d2 = problem_->cols();
    recorder_.message();
    recorder_.add_in(s.worker, naive() ? d1 * d2 + 1 : d1 + d2 + 1);
    recorder_.add_work(s.grad_evals, s.linops);
    if (finished_) return stop_reply();

    const auto& up = s.update;
    const bool current_epoch = up.epoch == epoch_;
    const std::size_t delay = current_epoch ? t_m_ - up.origin : 0;
    const bool accept = current_epoch && up.origin <= t_m_ && delay <= schedule_.tau;

    if (accept) {
      if (opts_.record_inexactness && s.gradient_used) {
        DenseMatrix diff = full_gradient(*problem_, x_);
        diff -= *s.gradient_used;
        result_.inexactness.push_back({total_accepted_ + 1, delay, s.batch, frobenius_norm(diff)});
      }
      ++t_m_;
      ++total_accepted_;
      const double eta = schedule_.eta(t_m_);
      if (naive()) {
        convex_combine(x_, eta, *s.materialized);
        recorder_.add_out_all(d1 * d2);  // broadcast X_{t_m}
      } else {
        convex_combine_rank_one(x_, eta, up.scale, up.u, up.v);
      }
      RankOneUpdate stored = up;
      stored.delay = delay;
      logs_.back().append(std::move(stored));
      recorder_.note_delay(delay);

      const bool epoch_done = t_m_ == setup_.epoch_lengths[epoch_];
      const bool last = epoch_done && epoch_ + 1 == setup_.epoch_lengths.size();
      recorder_.accepted(total_accepted_, delay, x_, clock, last);
      if (epoch_done) {
        if (last) {
          finished_ = true;
        } else {
          ++epoch_;
          t_m_ = 0;
          logs_.emplace_back();
          snapshot_ = std::make_shared<const DenseMatrix>(x_);
          if (naive()) recorder_.add_out_all(d1 * d2);  // broadcast W
        }
      }
    } else {
      recorder_.abandon();
    }

    if (finished_) {
      Reply r = stop_reply();
      r.accepted = accept;
      return r;
    }
    Reply r;
    r.accepted = accept;
    r.master_iteration = t_m_;
    r.epoch = epoch_;
    if (naive()) {
      r.iterate = std::make_shared<const DenseMatrix>(x_);
      if (up.epoch < epoch_) r.snapshot = snapshot_;
    } else {
      std::uint64_t units = 0;
      for (std::size_t e = up.epoch; e <= epoch_; ++e) {
        LogSegment seg;
        seg.epoch = e;
        seg.first = e == up.epoch ? up.origin : 0;
        const std::size_t last = e == epoch_ ? t_m_ : logs_[e].size();
        for (std::size_t k = seg.first + 1; k <= last; ++k) seg.entries.push_back(logs_[e].at(k));
        units += seg.entries.size() * (d1 + d2);
        r.segments.push_back(std::move(seg));
      }
      recorder_.add_out(s.worker, units);
    }
    return r;
  }

  /// Ends the run early (executor failure or budget); the result is marked
  /// incomplete.
  void abort(std::string reason) {
    finished_ = true;
    result_.completed = false;
    result_.error = std::move(reason);
  }

  RunResult take_result() {
    result_.logs = logs_;
    result_.final_iterate = x_;
    recorder_.fill(result_);
    return std::move(result_);
  }

 private:
  bool naive() const noexcept { return setup_.variant == AsyncVariant::Naive; }

  Reply stop_reply() const {
    Reply r;
    r.stop = true;
    r.master_iteration = t_m_;
    r.epoch = epoch_;
    return r;
  }

  const P* problem_;
  Schedule schedule_;
  AsyncSetup setup_;
  RunOptions opts_;
  DenseMatrix x_;
  detail::Recorder<P> recorder_;
  RunResult result_;
  std::vector<UpdateLog> logs_;
  std::shared_ptr<const DenseMatrix> snapshot_;
  std::size_t t_m_ = 0;
  std::size_t total_accepted_ = 0;
  std::size_t epoch_ = 0;
  bool finished_ = false;
};

/// A worker: keeps its own copy of X (and, for SVRF, of the snapshot W and
/// ∇F(W)), computes one update per task, and catches up from the master's
/// replies.
template <Objective P>
class AsyncWorker {
 public:
  AsyncWorker(const P& p, const Schedule& schedule, std::size_t id, DenseMatrix x0, const RunOptions& opts,
              AsyncVariant variant, bool svrf)
      : problem_(&p),
        schedule_(&schedule),
        id_(id),
        x_(std::move(x0)),
        opts_(opts),
        variant_(variant),
        svrf_(svrf),
        rng_(detail::sampling_stream(opts.seed, id)) {
    if (svrf_) {
      snapshot_ = x_;
      need_snapshot_gradient_ = true;
    }
  }

  std::size_t id() const noexcept { return id_; }
  std::size_t local_iteration() const noexcept { return t_w_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const DenseMatrix& local_iterate() const noexcept { return x_; }

  Submission compute() {
    const P& p = *problem_;
    Submission s;
    s.worker = id_;
    if (svrf_ && need_snapshot_gradient_) {
      snapshot_gradient_ = full_gradient(p, snapshot_);
      s.grad_evals += p.sample_count();
      need_snapshot_gradient_ = false;
    }
    const std::size_t k = t_w_ + 1;
    const auto idx = detail::draw_batch(rng_, *schedule_, p.sample_count(), k);
    DenseMatrix grad = svrf_ ? detail::variance_reduced_gradient(p, x_, snapshot_, snapshot_gradient_, idx)
                             : minibatch_gradient(p, x_, idx);
    s.batch = idx.size();
    s.grad_evals += (svrf_ ? 2 : 1) * idx.size();
    s.linops = 1;
    const double theta = p.radius();
    s.update = detail::make_update(lmo_nuclear(grad, theta, opts_.lmo_tol, detail::lmo_seed(opts_.seed, epoch_, k)),
                                   theta, t_w_, epoch_);
    if (variant_ == AsyncVariant::Naive)
      s.materialized = std::make_shared<const DenseMatrix>(outer(s.update.u, s.update.v, s.update.scale));
    if (opts_.record_inexactness) s.gradient_used = std::make_shared<const DenseMatrix>(std::move(grad));
    return s;
  }

  void apply(const Reply& r) {
    if (r.stop) return;
    if (variant_ == AsyncVariant::Naive) {
      if (r.epoch > epoch_) {
        if (!r.snapshot) throw std::logic_error("AsyncWorker: epoch advanced without a snapshot");
        snapshot_ = *r.snapshot;
        need_snapshot_gradient_ = true;
        epoch_ = r.epoch;
      }
      x_ = *r.iterate;
      t_w_ = r.master_iteration;
      return;
    }
    for (const auto& seg : r.segments) {
      if (seg.epoch > epoch_) {
        // Previous epoch fully replayed: X is the new snapshot W.
        epoch_ = seg.epoch;
        t_w_ = 0;
        if (svrf_) {
          snapshot_ = x_;
          need_snapshot_gradient_ = true;
        }
      }
      if (seg.first != t_w_) throw std::logic_error("AsyncWorker: catch-up log is not contiguous");
      for (const auto& u : seg.entries) {
        ++t_w_;
        apply_update(x_, schedule_->eta(t_w_), u);
      }
    }
  }

 private:
  const P* problem_;
  const Schedule* schedule_;
  std::size_t id_;
  DenseMatrix x_;
  RunOptions opts_;
  AsyncVariant variant_;
  bool svrf_;
  Rng rng_;
  std::size_t t_w_ = 0;
  std::size_t epoch_ = 0;
  DenseMatrix snapshot_;
  DenseMatrix snapshot_gradient_;
  bool need_snapshot_gradient_ = false;
};

// ---------------------------------------------------------------------------
// Synchronous master / worker (SFW-dist)

struct RoundRequest {
  std::size_t iteration = 0;
  std::size_t share = 0;  // samples this worker draws
  std::size_t offset = 0; // full-batch mode: first index of this worker's block
  std::shared_ptr<const DenseMatrix> iterate;
};

struct PartialGradient {
  std::size_t worker = 0;
  std::size_t iteration = 0;
  std::size_t samples = 0;
  DenseMatrix sum;  // Σ ∇f_i(X) over the worker's samples
};

/// Splits m samples: floor(m/W) each, remainder to worker 0.
inline std::vector<std::size_t> split_batch(std::size_t m, std::size_t workers) {
  std::vector<std::size_t> shares(workers, m / workers);
  shares[0] += m % workers;
  return shares;
}

template <Objective P>
class DistMaster {
 public:
  DistMaster(const P& p, Schedule schedule, std::size_t iterations, std::size_t workers, DenseMatrix x0,
             RunOptions opts)
      : problem_(&p),
        schedule_(std::move(schedule)),
        iterations_(iterations),
        workers_(workers),
        opts_(opts),
        x_(x0),
        recorder_(p, opts, x0, workers) {
    result_.initial = std::move(x0);
  }

  bool finished() const noexcept { return k_ >= iterations_ || aborted_; }
  std::size_t workers() const noexcept { return workers_; }
  std::size_t iteration() const noexcept { return k_; }

  std::vector<RoundRequest> begin_round() {
    const std::size_t k = k_ + 1;
    const std::size_t m = schedule_.full_batch ? problem_->sample_count() : schedule_.batch(k);
    const auto shares = split_batch(m, workers_);
    auto snapshot = std::make_shared<const DenseMatrix>(x_);
    std::vector<RoundRequest> reqs(workers_);
    std::size_t offset = 0;
    for (std::size_t w = 0; w < workers_; ++w) {
      reqs[w] = {k, shares[w], offset, snapshot};
      offset += shares[w];
    }
    if (k > 1) recorder_.add_out_all(problem_->rows() * problem_->cols());  // broadcast X_{k−1}
    return reqs;
  }

  void finish_round(std::vector<PartialGradient> partials, const Clock& clock) {
    if (partials.size() != workers_) throw std::logic_error("DistMaster: missing partial gradients");
    std::sort(partials.begin(), partials.end(),
              [](const PartialGradient& a, const PartialGradient& b) { return a.worker < b.worker; });
    const std::size_t k = k_ + 1;
    const std::size_t units = problem_->rows() * problem_->cols();
    std::size_t total = 0;
    for (const auto& pg : partials) {
      recorder_.message();
      recorder_.add_in(pg.worker, units);
      recorder_.add_work(pg.samples, 0);
      total += pg.samples;
    }
    DenseMatrix grad = std::move(partials[0].sum);
    for (std::size_t w = 1; w < partials.size(); ++w) grad += partials[w].sum;
    grad *= 1.0 / static_cast<double>(total);
    const double theta = problem_->radius();
    auto update = detail::make_update(lmo_nuclear(grad, theta, opts_.lmo_tol, detail::lmo_seed(opts_.seed, 0, k)),
                                      theta, k - 1, 0);
    apply_update(x_, schedule_.eta(k), update);
    recorder_.add_work(0, 1);
    recorder_.note_delay(0);
    k_ = k;
    recorder_.accepted(k, 0, x_, clock, k == iterations_);
    log_.append(std::move(update));
  }

  void abort(std::string reason) {
    aborted_ = true;
    result_.completed = false;
    result_.error = std::move(reason);
  }

  RunResult take_result() {
    result_.logs = {log_};
    result_.final_iterate = x_;
    recorder_.fill(result_);
    return std::move(result_);
  }

 private:
  const P* problem_;
  Schedule schedule_;
  std::size_t iterations_;
  std::size_t workers_;
  RunOptions opts_;
  DenseMatrix x_;
  detail::Recorder<P> recorder_;
  RunResult result_;
  UpdateLog log_;
  std::size_t k_ = 0;
  bool aborted_ = false;
};

template <Objective P>
class DistWorker {
 public:
  DistWorker(const P& p, const Schedule& schedule, std::size_t id, const RunOptions& opts)
      : problem_(&p), schedule_(&schedule), id_(id), rng_(detail::sampling_stream(opts.seed, id)) {}

  std::size_t id() const noexcept { return id_; }

  PartialGradient compute(const RoundRequest& req) {
    PartialGradient out;
    out.worker = id_;
    out.iteration = req.iteration;
    out.samples = req.share;
    out.sum = DenseMatrix(problem_->rows(), problem_->cols());
    if (req.share == 0) return out;
    std::vector<std::size_t> idx;
    if (schedule_->full_batch) {
      idx.resize(req.share);
      for (std::size_t j = 0; j < req.share; ++j) idx[j] = req.offset + j;
    } else {
      idx = sample_with_replacement(rng_, problem_->sample_count(), req.share);
    }
    accumulate_gradient_sum(*problem_, *req.iterate, idx, out.sum);
    return out;
  }

 private:
  const P* problem_;
  const Schedule* schedule_;
  std::size_t id_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Distributed entry points. A transport provides
//   run_async(AsyncMaster&, std::vector<AsyncWorker>&)
//   run_sync(DistMaster&, std::vector<DistWorker>&)

namespace detail {

template <Objective P, class Transport>
RunResult run_async_family(const P& p, const Schedule& schedule, AsyncSetup setup, Transport& transport,
                           const RunOptions& opts) {
  if (setup.workers < 1) throw ParameterError("asynchronous run: need at least one worker");
  DenseMatrix x0 = initial_point(p.rows(), p.cols(), p.radius(), opts.seed);
  AsyncMaster<P> master(p, schedule, setup, x0, opts);
  std::vector<AsyncWorker<P>> workers;
  workers.reserve(setup.workers);
  for (std::size_t w = 0; w < setup.workers; ++w)
    workers.emplace_back(p, schedule, w, x0, opts, setup.variant, setup.svrf);
  transport.run_async(master, workers);
  return master.take_result();
}

inline std::vector<std::size_t> svrf_lengths(const Schedule& s, std::size_t epochs) {
  if (!s.svrf_epochs) throw ParameterError("SVRF run: schedule has no epoch lengths");
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < epochs; ++e) out.push_back(s.svrf_epochs(e));
  return out;
}

}  // namespace detail

template <Objective P, class Transport>
RunResult run_sfw_dist(const P& p, const Schedule& schedule, std::size_t iterations, std::size_t workers,
                       Transport& transport, const RunOptions& opts = {}) {
  detail::require_horizon(iterations, "run_sfw_dist");
  if (workers < 1) throw ParameterError("run_sfw_dist: need at least one worker");
  DenseMatrix x0 = initial_point(p.rows(), p.cols(), p.radius(), opts.seed);
  DistMaster<P> master(p, schedule, iterations, workers, x0, opts);
  std::vector<DistWorker<P>> ws;
  ws.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) ws.emplace_back(p, schedule, w, opts);
  transport.run_sync(master, ws);
  return master.take_result();
}

template <Objective P, class Transport>
RunResult run_sfw_asyn_naive(const P& p, const Schedule& schedule, std::size_t iterations, std::size_t workers,
                             Transport& transport, const RunOptions& opts = {}) {
  detail::require_horizon(iterations, "run_sfw_asyn_naive");
  return detail::run_async_family(p, schedule, {AsyncVariant::Naive, false, {iterations}, workers}, transport, opts);
}

template <Objective P, class Transport>
RunResult run_sfw_asyn(const P& p, const Schedule& schedule, std::size_t iterations, std::size_t workers,
                       Transport& transport, const RunOptions& opts = {}) {
  detail::require_horizon(iterations, "run_sfw_asyn");
  return detail::run_async_family(p, schedule, {AsyncVariant::Efficient, false, {iterations}, workers}, transport,
                                  opts);
}

template <Objective P, class Transport>
RunResult run_svrf_asyn_naive(const P& p, const Schedule& schedule, std::size_t epochs, std::size_t workers,
                              Transport& transport, const RunOptions& opts = {}) {
  detail::require_horizon(epochs, "run_svrf_asyn_naive");
  return detail::run_async_family(
      p, schedule, {AsyncVariant::Naive, true, detail::svrf_lengths(schedule, epochs), workers}, transport, opts);
}

template <Objective P, class Transport>
RunResult run_svrf_asyn(const P& p, const Schedule& schedule, std::size_t epochs, std::size_t workers,
                        Transport& transport, const RunOptions& opts = {}) {
  detail::require_horizon(epochs, "run_svrf_asyn");
  return detail::run_async_family(
      p, schedule, {AsyncVariant::Efficient, true, detail::svrf_lengths(schedule, epochs), workers}, transport,
      opts);
}

struct AlgorithmSpec {
  AlgorithmKind kind = AlgorithmKind::SfwAsyn;
  Schedule schedule;
  std::size_t horizon = 1;  // accepted updates, or epochs for SVRF methods
  std::size_t workers = 1;
};

/// Dispatches on kind; sequential methods ignore the transport.
template <Objective P, class Transport>
RunResult run_algorithm(const P& p, const AlgorithmSpec& spec, Transport& transport, const RunOptions& opts) {
  switch (spec.kind) {
    case AlgorithmKind::Fw: return run_fw(p, spec.horizon, opts);
    case AlgorithmKind::Sfw: return run_sfw(p, spec.schedule, spec.horizon, opts);
    case AlgorithmKind::Svrf: return run_svrf(p, spec.schedule, spec.horizon, opts);
    case AlgorithmKind::SfwDist: return run_sfw_dist(p, spec.schedule, spec.horizon, spec.workers, transport, opts);
    case AlgorithmKind::SfwAsynNaive:
      return run_sfw_asyn_naive(p, spec.schedule, spec.horizon, spec.workers, transport, opts);
    case AlgorithmKind::SfwAsyn: return run_sfw_asyn(p, spec.schedule, spec.horizon, spec.workers, transport, opts);
    case AlgorithmKind::SvrfAsynNaive:
      return run_svrf_asyn_naive(p, spec.schedule, spec.horizon, spec.workers, transport, opts);
    case AlgorithmKind::SvrfAsyn: return run_svrf_asyn(p, spec.schedule, spec.horizon, spec.workers, transport, opts);
  }
  throw ParameterError("run_algorithm: unknown algorithm");
}

// ---------------------------------------------------------------------------
// Gradient inexactness

struct InexactnessPoint {
  std::size_t iteration = 0;
  double probe = 0.0;  // ‖∇F(X_{k−1}) − ∇̃_{k−1}‖_F · D
  double bound = 0.0;  // G·D/√m_{k−τ} + L·τ·η_{k−τ}·D²
};

/// Pairs each recorded inexactness sample with the staleness bound evaluated
/// at index max(k − τ, 1) of the schedule. τ = ∞ uses the largest observed
/// delay instead.
inline std::vector<InexactnessPoint> gradient_inexactness_probe(const RunResult& run, const Schedule& schedule,
                                                                const ProblemConstants& c) {
  std::size_t tau = schedule.tau;
  if (tau == kUnboundedDelay) {
    tau = 0;
    for (const auto& s : run.inexactness) tau = std::max(tau, s.delay);
  }
  std::vector<InexactnessPoint> out;
  out.reserve(run.inexactness.size());
  for (const auto& s : run.inexactness) {
    const std::size_t lagged = s.iteration > tau ? s.iteration - tau : 1;
    const double m = schedule.full_batch ? std::numeric_limits<double>::infinity()
                                         : static_cast<double>(schedule.batch(lagged));
    InexactnessPoint pt;
    pt.iteration = s.iteration;
    pt.probe = s.gradient_error * c.D;
    pt.bound = c.G * c.D / std::sqrt(m) + c.L * static_cast<double>(tau) * schedule.eta(lagged) * c.D * c.D;
    out.push_back(pt);
  }
  return out;
}

}  // namespace afw
