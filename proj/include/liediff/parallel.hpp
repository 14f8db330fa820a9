#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace liediff {

// LIE_DIFFUSE_THREADS caps worker count; 0 or unset means hardware concurrency
inline unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LIE_DIFFUSE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return hw;
}

// f(i) for i in [0, n); contiguous chunks per worker, first exception rethrown
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr err;
  std::mutex m;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) f(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace liediff
