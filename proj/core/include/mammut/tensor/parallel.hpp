#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mammut {

/// Number of worker threads kernels may use. 0 or 1 means run inline
/// (the default, and what the test suite uses).
int kernel_threads();
void set_kernel_threads(int n);
/// Applies MAMMUT_THREADS from the environment, if set.
void configure_kernel_threads_from_env();
/// Keeps freed tensor storage in the process heap instead of returning it to
/// the system, so repeated steps reuse already mapped pages (glibc only).
void retain_freed_memory();

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
/// Chunk boundaries only depend on n and the thread count.
template <class F>
void parallel_for(std::size_t n, std::size_t min_chunk, F&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, kernel_threads()));
  const std::size_t chunks = std::min(threads, std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (chunks <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  const std::size_t step = (n + chunks - 1) / chunks;
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t b = c * step;
    const std::size_t e = std::min(n, b + step);
    if (b < e) workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, step));
  for (auto& w : workers) w.join();
}

}  // namespace mammut
