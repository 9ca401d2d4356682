#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace spheroview::detail {

// Splits [0, rows) into contiguous chunks, one per thread. Each chunk writes
// only its own rows, so the result does not depend on the thread count.
template <typename Fn>
void parallel_rows(int rows, int threads, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, rows);
  if (threads <= 1) {
    fn(0, rows);
    return;
  }
  const int chunk = (rows + threads - 1) / threads;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(threads - 1));
  for (int t = 1; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(rows, begin + chunk);
    if (begin < end) pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(0, std::min(rows, chunk));
}

}  // namespace spheroview::detail
