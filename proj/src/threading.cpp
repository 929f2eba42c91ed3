#include "stlkit/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace stlkit {

namespace {

int compute_worker_count() {
#ifdef __GLIBC__
  // Large per-batch scratch buffers (im2col patches, GEMM staging) would
  // otherwise be mmap'ed and unmapped on every call; keeping them on the
  // heap lets the allocator reuse them without page faults.
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
#endif
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("STL_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

// Persistent pool: the calling thread acts as worker 0, the pool supplies
// the rest. Tasks are (begin, end) ranges of a static partition.
class Pool {
 public:
  Pool() : workers_(static_cast<std::size_t>(worker_count() - 1)) {
    for (std::size_t i = 0; i < workers_.size(); ++i) {
      workers_[i] = std::thread([this, i] { worker_loop(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      shutdown_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& f) {
    const std::size_t nthreads = workers_.size() + 1;
    if (n == 0) return;
    if (nthreads == 1 || n == 1) {
      f(0, n);
      return;
    }
    const std::size_t chunk = (n + nthreads - 1) / nthreads;
    {
      std::lock_guard<std::mutex> lock(mu_);
      task_ = &f;
      task_n_ = n;
      task_chunk_ = chunk;
      pending_ = 0;
      for (std::size_t i = 1; i < nthreads; ++i) {
        if (i * chunk < n) ++pending_;
      }
      ++generation_;
    }
    cv_.notify_all();
    f(0, std::min(chunk, n));
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    task_ = nullptr;
  }

 private:
  void worker_loop(std::size_t worker_index) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t, std::size_t)>* task = nullptr;
      std::size_t begin = 0, end = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
        if (shutdown_) return;
        seen = generation_;
        const std::size_t idx = worker_index + 1;
        begin = idx * task_chunk_;
        if (begin >= task_n_) continue;
        end = std::min(begin + task_chunk_, task_n_);
        task = task_;
      }
      (*task)(begin, end);
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t, std::size_t)>* task_ = nullptr;
  std::size_t task_n_ = 0;
  std::size_t task_chunk_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool shutdown_ = false;
};

}  // namespace

int worker_count() {
  static const int n = compute_worker_count();
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& f) {
  static Pool pool;
  pool.run(n, f);
}

}  // namespace stlkit
