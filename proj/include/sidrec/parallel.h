#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace sidrec {

// Run fn(i) for i in [0, n) across up to `threads` workers. Work items must
// be independent; callers keep determinism by writing into per-index slots
// and reducing in index order afterwards.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto run_chunk = [&fn, n, workers](size_t w) {
    for (size_t i = w; i < n; i += workers) fn(i);
  };
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(run_chunk, w);
  run_chunk(0);
  for (auto& t : pool) t.join();
}

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace sidrec
