#pragma once

// Discrete-event simulation of a master and W workers with geometric compute
// times. Single-threaded; every result is a pure function of the seeds.

#include <cstdint>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "afw/algorithms.hpp"
#include "afw/rng.hpp"
#include "afw/trace.hpp"

namespace afw {

/// Task time is k·C with k ~ Geometric(p) on {1, 2, ...}, C the task's
/// expected units at full speed; mean C/p.
struct GeometricComputeModel {
  double p = 1.0;
  double c_grad = 1.0;  // units per stochastic gradient evaluation
  double c_svd = 10.0;  // units per 1-SVD

  void validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw ParameterError("compute model: p must lie in (0, 1]");
    if (!(c_grad >= 1.0) || !(c_svd >= 1.0)) throw ParameterError("compute model: C_grad and C_svd must be >= 1");
  }

  double task_units(std::size_t grad_evals, std::size_t linops) const {
    return static_cast<double>(grad_evals) * c_grad + static_cast<double>(linops) * c_svd;
  }
};

inline double sample_compute_time(const GeometricComputeModel& model, double expected_units, Rng& rng) {
  if (!(expected_units > 0.0)) throw ParameterError("sample_compute_time: expected units must be positive");
  if (model.p >= 1.0) return expected_units;
  std::geometric_distribution<std::uint64_t> failures(model.p);
  return static_cast<double>(failures(rng) + 1) * expected_units;
}

enum class EventKind { TaskDone };

struct Event {
  double time = 0.0;
  std::uint64_t sequence = 0;
  std::size_t worker = 0;
  EventKind kind = EventKind::TaskDone;
};

/// Min-heap on (time, sequence); equal times pop in scheduling order.
class EventQueue {
 public:
  void push(double time, std::size_t worker, EventKind kind = EventKind::TaskDone) {
    if (time < now_) throw std::logic_error("EventQueue: event scheduled in the past");
    heap_.push(Event{time, next_sequence_++, worker, kind});
  }

  Event pop() {
    if (heap_.empty()) throw std::logic_error("EventQueue: pop on empty queue");
    Event e = heap_.top();
    heap_.pop();
    now_ = e.time;
    return e;
  }

  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }
  double now() const noexcept { return now_; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.sequence > b.sequence;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_sequence_ = 0;
  double now_ = 0.0;
};

/// Transport for the algorithm state machines. Communication is free; only
/// computation takes simulated time. Each worker's compute-time stream is
/// derived from (seed, worker id).
class SimulatedTransport {
 public:
  SimulatedTransport(GeometricComputeModel model, std::uint64_t seed) : model_(model), seed_(seed) {
    model_.validate();
  }

  const GeometricComputeModel& model() const noexcept { return model_; }
  double elapsed() const noexcept { return elapsed_; }

  template <Objective P>
  void run_async(AsyncMaster<P>& master, std::vector<AsyncWorker<P>>& workers) {
    auto streams = make_streams(workers.size());
    EventQueue queue;
    std::vector<Submission> pending(workers.size());
    auto start_task = [&](std::size_t w) {
      pending[w] = workers[w].compute();
      const double units = model_.task_units(pending[w].grad_evals, pending[w].linops);
      queue.push(queue.now() + sample_compute_time(model_, units, streams[w]), w);
    };
    for (std::size_t w = 0; w < workers.size(); ++w) start_task(w);
    while (!queue.empty() && !master.finished()) {
      const Event e = queue.pop();
      const Reply reply = master.handle(pending[e.worker], Clock{e.time, 0.0});
      workers[e.worker].apply(reply);
      if (!reply.stop) start_task(e.worker);
    }
    elapsed_ = queue.now();
  }

  /// One round takes the slowest worker's gradient time plus one 1-SVD at the
  /// master (deterministic: the master is not subject to straggling).
  template <Objective P>
  void run_sync(DistMaster<P>& master, std::vector<DistWorker<P>>& workers) {
    auto streams = make_streams(workers.size());
    double now = 0.0;
    while (!master.finished()) {
      auto requests = master.begin_round();
      std::vector<PartialGradient> partials;
      partials.reserve(workers.size());
      double slowest = 0.0;
      for (std::size_t w = 0; w < workers.size(); ++w) {
        partials.push_back(workers[w].compute(requests[w]));
        if (requests[w].share > 0) {
          const double units = model_.task_units(requests[w].share, 0);
          slowest = std::max(slowest, sample_compute_time(model_, units, streams[w]));
        }
      }
      now += slowest + model_.c_svd;
      master.finish_round(std::move(partials), Clock{now, 0.0});
    }
    elapsed_ = now;
  }

 private:
  std::vector<Rng> make_streams(std::size_t n) const {
    std::vector<Rng> out;
    out.reserve(n);
    for (std::size_t w = 0; w < n; ++w) out.emplace_back(derive_seed(seed_, {stream::kComputeTime, w}));
    return out;
  }

  GeometricComputeModel model_;
  std::uint64_t seed_;
  double elapsed_ = 0.0;
};

/// Runs one algorithm under the simulator. A zero horizon yields an empty
/// result rather than an error.
template <Objective P>
RunResult simulate(const P& p, const AlgorithmSpec& spec, const GeometricComputeModel& model,
                   std::uint64_t sim_seed, const RunOptions& opts) {
  if (spec.workers < 1) throw ParameterError("simulate: need at least one worker");
  if (spec.horizon == 0) {
    RunResult empty;
    empty.initial = initial_point(p.rows(), p.cols(), p.radius(), opts.seed);
    empty.final_iterate = empty.initial;
    empty.initial_objective = p.loss(empty.initial);
    empty.channels = ChannelCounters(spec.workers);
    return empty;
  }
  SimulatedTransport transport(model, sim_seed);
  return run_algorithm(p, spec, transport, opts);
}

// ---------------------------------------------------------------------------
// Speedup tables

struct SpeedupRow {
  std::size_t workers = 0;
  std::optional<double> time_to_target;
  std::optional<double> speedup;  // empty when either time is missing
};

/// speedup(W) = time_1(target) / time_W(target). Requires a W = 1 entry;
/// entries that never reach the target are kept and marked unreachable.
inline std::vector<SpeedupRow> speedup_report(
    const std::vector<std::pair<std::size_t, std::vector<TraceRecord>>>& traces_by_workers, double target) {
  std::optional<double> base;
  bool have_base = false;
  for (const auto& [w, trace] : traces_by_workers)
    if (w == 1) {
      base = time_to_target(trace, target);
      have_base = true;
    }
  if (!have_base) throw ParameterError("speedup_report: need a single-worker trace");
  std::vector<SpeedupRow> rows;
  for (const auto& [w, trace] : traces_by_workers) {
    SpeedupRow r;
    r.workers = w;
    r.time_to_target = time_to_target(trace, target);
    if (base && r.time_to_target && *r.time_to_target > 0.0) r.speedup = *base / *r.time_to_target;
    if (w == 1 && r.time_to_target) r.speedup = 1.0;
    rows.push_back(r);
  }
  return rows;
}

inline void write_speedup_csv(std::ostream& os, const std::vector<SpeedupRow>& rows, double target) {
  os << "# afw-speedup v1 target_relative_error=" << detail::format_double(target) << '\n';
  os << "workers,time_to_target,speedup\n";
  for (const auto& r : rows) {
    os << r.workers << ',' << (r.time_to_target ? detail::format_double(*r.time_to_target) : "unreachable") << ','
       << (r.speedup ? detail::format_double(*r.speedup) : "unreachable") << '\n';
  }
}

}  // namespace afw
