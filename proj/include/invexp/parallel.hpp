#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace invexp {

/// Runs fn(i) for i in [0, n). Work items must be independent; results keyed
/// by index are identical for every worker count. The first exception thrown
/// by any worker is rethrown on the calling thread.
inline void parallel_for(int64_t n, int n_threads, const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  if (n_threads <= 0) n_threads = static_cast<int>(std::thread::hardware_concurrency());
  n_threads = static_cast<int>(std::max<int64_t>(1, std::min<int64_t>(n_threads, n)));

  if (n_threads == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(n_threads);
  const int64_t chunk = (n + n_threads - 1) / n_threads;
  for (int t = 0; t < n_threads; ++t) {
    const int64_t begin = t * chunk;
    const int64_t end = std::min(n, begin + chunk);
    workers.emplace_back([&, t, begin, end] {
      try {
        for (int64_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace invexp
