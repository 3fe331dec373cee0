#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace hoi {

// Runs fn(chunk) once for every chunk index in [0, chunk_count). Chunks are
// fixed units of work independent of thread count; callers that reduce
// results must do so by chunk index after this returns, which keeps outputs
// bit-identical across thread counts.
inline void parallel_chunks(int chunk_count, int thread_count,
                            const std::function<void(int)>& fn) {
  if (thread_count <= 1 || chunk_count <= 1) {
    for (int i = 0; i < chunk_count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= chunk_count) return;
      fn(i);
    }
  };
  std::vector<std::thread> threads;
  const int n = std::min(thread_count, chunk_count);
  threads.reserve(n);
  for (int t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

}  // namespace hoi
