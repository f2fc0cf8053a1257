#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mixenc {

// Worker pool for sharding independent ranges. Each index is processed by
// exactly one worker, so any per-element-deterministic loop body yields
// bit-identical results regardless of the shard layout.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int worker_count() const { return static_cast<int>(workers_.size()); }

  // Runs fn(begin, end) over disjoint chunks covering [0, n).
  void run_chunks(int64_t n, int chunks,
                  const std::function<void(int64_t, int64_t)>& fn) {
    if (chunks <= 1 || n <= 1 || workers_.empty()) {
      fn(0, n);
      return;
    }
    if (chunks > static_cast<int>(workers_.size()) + 1)
      chunks = static_cast<int>(workers_.size()) + 1;
    const int64_t step = (n + chunks - 1) / chunks;
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_ = &fn;
      job_n_ = n;
      job_step_ = step;
      next_chunk_ = 1;  // chunk 0 runs on the calling thread
      pending_ = 0;
      const int64_t total_chunks = (n + step - 1) / step;
      pending_ = static_cast<int>(total_chunks) - 1;
      generation_++;
      cv_start_.notify_all();
    }
    fn(0, step < n ? step : n);
    std::unique_lock<std::mutex> lock(mu_);
    cv_done_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
      cv_start_.notify_all();
    }
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = default_threads();
    for (int i = 0; i < n - 1; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  static int default_threads() {
    if (const char* env = std::getenv("MIXENC_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

  void worker_loop() {
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int64_t, int64_t)>* job = nullptr;
      int64_t n = 0, step = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
        n = job_n_;
        step = job_step_;
      }
      while (true) {
        int64_t chunk;
        {
          std::unique_lock<std::mutex> lock(mu_);
          if (job_ != job || next_chunk_ * step >= n) break;
          chunk = next_chunk_++;
        }
        const int64_t begin = chunk * step;
        const int64_t end = begin + step < n ? begin + step : n;
        (*job)(begin, end);
        {
          std::unique_lock<std::mutex> lock(mu_);
          if (--pending_ == 0) cv_done_.notify_all();
        }
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(int64_t, int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0;
  int64_t job_step_ = 0;
  int64_t next_chunk_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

// Shards [0, n) across the pool when the total work justifies it.
// `work` is an estimate of arithmetic ops for the whole range.
template <class Fn>
void parallel_for(int64_t n, uint64_t work, const Fn& fn) {
  ThreadPool& pool = ThreadPool::instance();
  const int threads = pool.worker_count() + 1;
  if (threads <= 1 || work < (1u << 20) || n < 2) {
    fn(0, n);
    return;
  }
  pool.run_chunks(n, threads, [&fn](int64_t b, int64_t e) { fn(b, e); });
}

}  // namespace mixenc
