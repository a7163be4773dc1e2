#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "lutfuse/error.hpp"

namespace lutfuse {

// Number of logical partitions used by every deterministic reduction.
// Fixed independently of the worker count so that per-stripe partial sums,
// and therefore merged results, are identical for any --threads setting.
inline constexpr int kReductionStripes = 8;

// Contiguous range boundaries for partition `index` of [0, count) split into
// `parts` near-equal pieces. Depends only on (count, parts, index).
inline std::int64_t part_begin(std::int64_t count, int parts, int index) {
  return count * index / parts;
}

// Fixed-size worker pool. run_parts blocks until every part has executed;
// parts are claimed dynamically but touch only part-indexed state, so the
// assignment of parts to workers never affects results. Not reentrant.
class ThreadPool {
 public:
  explicit ThreadPool(int num_threads) {
    if (num_threads < 1) num_threads = 1;
    for (int i = 0; i + 1 < num_threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int thread_count() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(part_index, begin, end) for each of `parts` ranges covering
  // [0, count). The calling thread participates. Exceptions thrown by fn are
  // rethrown here (first one wins).
  void run_parts(std::int64_t count, int parts,
                 const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    if (parts < 1) parts = 1;
    if (workers_.empty()) {
      for (int p = 0; p < parts; ++p)
        fn(p, part_begin(count, parts, p), part_begin(count, parts, p + 1));
      return;
    }
    auto job = std::make_shared<Job>();
    job->count = count;
    job->parts = parts;
    job->fn = &fn;
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_ = job;
    }
    cv_.notify_all();
    run_job_parts(*job);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [&] { return job->finished == job->parts; });
    job_.reset();
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  struct Job {
    std::int64_t count = 0;
    int parts = 0;
    const std::function<void(int, std::int64_t, std::int64_t)>* fn = nullptr;
    std::atomic<int> next{0};
    int finished = 0;
    std::exception_ptr error;
  };

  void run_job_parts(Job& job) {
    for (;;) {
      int p = job.next.fetch_add(1);
      if (p >= job.parts) break;
      std::exception_ptr err;
      try {
        (*job.fn)(p, part_begin(job.count, job.parts, p),
                  part_begin(job.count, job.parts, p + 1));
      } catch (...) {
        err = std::current_exception();
      }
      std::unique_lock<std::mutex> lock(mu_);
      if (err && !job.error) job.error = err;
      if (++job.finished == job.parts) done_cv_.notify_all();
    }
  }

  void worker_loop() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] {
          return stop_ || (job_ && job_->next.load() < job_->parts);
        });
        if (stop_) return;
        job = job_;
      }
      if (job) run_job_parts(*job);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::shared_ptr<Job> job_;
  bool stop_ = false;
};

// Worker count resolution: explicit value if > 0, else LUTFUSE_THREADS, else 1.
inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LUTFUSE_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace lutfuse
