#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace moe {

inline unsigned default_thread_count() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on (n, n_threads), never on scheduling, so any reduction the
// caller performs per chunk and then combines in chunk order is
// bit-identical to a sequential run.
template <typename Body>
void parallel_for(std::size_t n, unsigned n_threads, Body&& body) {
  if (n == 0) return;
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n_threads, n));
  if (workers == 1) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace moe
