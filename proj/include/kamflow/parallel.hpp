#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace kamflow {

namespace detail {
inline std::atomic<int>& thread_override() {
  static std::atomic<int> n{0};
  return n;
}
inline bool& in_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Explicit value (e.g. from --threads) wins, then KAMFLOW_THREADS, then the hardware.
inline void set_thread_count(int n) { detail::thread_override() = std::max(0, n); }

inline int thread_count() {
  if (int n = detail::thread_override(); n > 0) return n;
  if (const char* env = std::getenv("KAMFLOW_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, count). Each index writes only its own output slot,
/// so results never depend on scheduling. The first exception is rethrown.
/// Nested calls run serially on the calling worker.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  const std::size_t workers = detail::in_parallel_region() ? 1 : std::min<std::size_t>(thread_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    const bool outer = detail::in_parallel_region();
    detail::in_parallel_region() = true;
    struct Reset {
      bool v;
      ~Reset() { detail::in_parallel_region() = v; }
    } reset{outer};
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace kamflow
