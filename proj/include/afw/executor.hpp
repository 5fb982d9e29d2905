#pragma once

// Live backend: one thread per worker, the master loop on the calling thread,
// FIFO channels in between. Participants share nothing; every payload moves
// through a channel.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "afw/algorithms.hpp"
#include "afw/rng.hpp"

namespace afw {

/// Unbounded multi-producer FIFO.
template <class T>
class Channel {
 public:
  void send(T value) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(value));
    }
    ready_.notify_one();
  }

  T receive() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [&] { return !queue_.empty(); });
    T value = std::move(queue_.front());
    queue_.pop_front();
    return value;
  }

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<T> queue_;
};

/// Sleep of k·unit with k ~ Geometric(p) on {1, 2, ...} before each submission.
struct InjectedDelay {
  double p = 0.5;
  std::chrono::microseconds unit{200};
};

struct WorkerFailure {
  std::size_t worker = 0;
  std::string what;
};

struct LiveOptions {
  std::optional<InjectedDelay> delay;
  std::optional<std::chrono::milliseconds> wall_budget;
  std::uint64_t seed = 1;  // injected-delay streams
};

class ThreadTransport {
 public:
  explicit ThreadTransport(LiveOptions opts = {}) : opts_(opts) {}

  template <Objective P>
  void run_async(AsyncMaster<P>& master, std::vector<AsyncWorker<P>>& workers) {
    using Inbound = std::variant<Submission, WorkerFailure>;
    const std::size_t n = workers.size();
    Channel<Inbound> master_inbox;
    std::vector<Channel<Reply>> inboxes(n);
    const auto start = std::chrono::steady_clock::now();

    std::vector<std::thread> threads;
    threads.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
      threads.emplace_back([&, w] {
        Rng delay_rng(derive_seed(opts_.seed, {stream::kInjectedDelay, w}));
        try {
          for (;;) {
            Submission s = workers[w].compute();
            injected_sleep(delay_rng);
            master_inbox.send(std::move(s));
            const Reply r = inboxes[w].receive();
            if (r.stop) return;
            workers[w].apply(r);
          }
        } catch (const std::exception& e) {
          master_inbox.send(WorkerFailure{w, e.what()});
        } catch (...) {
          master_inbox.send(WorkerFailure{w, "unknown error"});
        }
      });
    }

    std::size_t active = n;
    while (active > 0) {
      Inbound msg = master_inbox.receive();
      if (auto* f = std::get_if<WorkerFailure>(&msg)) {
        if (!master.finished()) master.abort("worker " + std::to_string(f->worker) + " failed: " + f->what);
        --active;
        continue;
      }
      auto& sub = std::get<Submission>(msg);
      const double wall = seconds_since(start);
      if (opts_.wall_budget && !master.finished() &&
          std::chrono::steady_clock::now() - start > *opts_.wall_budget)
        master.abort("wall budget exceeded");
      Reply r = master.handle(sub, Clock{0.0, wall});
      const bool stop = r.stop;
      inboxes[sub.worker].send(std::move(r));
      if (stop) --active;
    }
    for (auto& t : threads) t.join();
  }

  template <Objective P>
  void run_sync(DistMaster<P>& master, std::vector<DistWorker<P>>& workers) {
    using Inbound = std::variant<PartialGradient, WorkerFailure>;
    const std::size_t n = workers.size();
    Channel<Inbound> master_inbox;
    std::vector<Channel<std::optional<RoundRequest>>> inboxes(n);
    const auto start = std::chrono::steady_clock::now();

    std::vector<std::thread> threads;
    threads.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
      threads.emplace_back([&, w] {
        Rng delay_rng(derive_seed(opts_.seed, {stream::kInjectedDelay, w}));
        for (;;) {
          auto req = inboxes[w].receive();
          if (!req) return;
          try {
            PartialGradient g = workers[w].compute(*req);
            injected_sleep(delay_rng);
            master_inbox.send(std::move(g));
          } catch (const std::exception& e) {
            master_inbox.send(WorkerFailure{w, e.what()});
          }
        }
      });
    }

    while (!master.finished()) {
      if (opts_.wall_budget && std::chrono::steady_clock::now() - start > *opts_.wall_budget) {
        master.abort("wall budget exceeded");
        break;
      }
      auto requests = master.begin_round();
      for (std::size_t w = 0; w < n; ++w) inboxes[w].send(std::move(requests[w]));
      std::vector<PartialGradient> partials;
      std::optional<WorkerFailure> failure;
      for (std::size_t received = 0; received < n; ++received) {
        Inbound msg = master_inbox.receive();
        if (auto* f = std::get_if<WorkerFailure>(&msg)) {
          if (!failure) failure = std::move(*f);
        } else {
          partials.push_back(std::move(std::get<PartialGradient>(msg)));
        }
      }
      if (failure) {
        master.abort("worker " + std::to_string(failure->worker) + " failed: " + failure->what);
        break;
      }
      master.finish_round(std::move(partials), Clock{0.0, seconds_since(start)});
    }
    for (auto& inbox : inboxes) inbox.send(std::nullopt);
    for (auto& t : threads) t.join();
  }

 private:
  void injected_sleep(Rng& rng) const {
    if (!opts_.delay) return;
    std::geometric_distribution<int> failures(opts_.delay->p);
    std::this_thread::sleep_for(opts_.delay->unit * (failures(rng) + 1));
  }

  static double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  LiveOptions opts_;
};

template <Objective P>
RunResult run_live(const P& p, const AlgorithmSpec& spec, const LiveOptions& live, const RunOptions& opts) {
  ThreadTransport transport(live);
  return run_algorithm(p, spec, transport, opts);
}

}  // namespace afw
