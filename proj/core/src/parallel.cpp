#include "layermon/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>

namespace layermon {

namespace {
std::atomic<std::size_t> g_threads{0};  // 0 = not yet resolved
}

std::size_t worker_threads() {
  std::size_t n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_worker_threads(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t block = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::mutex error_mutex;
  std::exception_ptr first_error;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t begin = t * block;
    const std::size_t end = std::min(n, begin + block);
    if (begin >= end) break;
    pool.emplace_back([&body, &error_mutex, &first_error, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace layermon
