#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace auf {

// Worker cap: AUFORMER_THREADS, defaulting to hardware parallelism.
inline int worker_count() {
  if (const char* env = std::getenv("AUFORMER_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static block partition; each index is processed exactly once, so results
// are independent of the worker count as long as fn(i) writes only slot i.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace auf
