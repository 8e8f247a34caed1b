#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mcst {

/// Runs fn(i) for every i in [0, n). Indices are pre-partitioned into
/// contiguous ranges, one per worker, so the result never depends on
/// scheduling. Serial when n or the machine offers no parallelism.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const size_t workers = std::min(n, hw);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto run_range = [&](size_t w) {
    const size_t lo = n * w / workers;
    const size_t hi = n * (w + 1) / workers;
    try {
      for (size_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(run_range, w);
  run_range(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mcst
