#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace afa {

/// Runs fn(i) for i in [begin, end) across threads. Each index is handled by
/// exactly one thread and writes must be disjoint per index, so results are
/// identical to the serial loop for any thread count.
template <typename Fn>
void parallel_for(int begin, int end, Fn&& fn) {
  const int count = end - begin;
  if (count <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int threads = static_cast<int>(std::min<unsigned>(hw == 0 ? 1 : hw, static_cast<unsigned>(count)));
  if (threads <= 1 || count == 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([=, &fn]() {
      for (int i = begin + t; i < end; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace afa
