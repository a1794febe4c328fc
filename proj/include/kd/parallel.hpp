#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace kd {

/// Turns a requested thread count into a usable one (0 means "auto").
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
///
/// Work is handed out in fixed-size blocks through an atomic cursor, so
/// results written to per-index slots are identical for any thread count.
/// The first exception thrown by any invocation is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, int threads = 0) {
  if (count == 0) return;
  int workers = resolve_threads(threads);
  if (workers < 2 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  constexpr std::size_t kBlock = 16;
  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      std::size_t begin = cursor.fetch_add(kBlock);
      if (begin >= count || failed.load(std::memory_order_relaxed)) return;
      std::size_t end = std::min(begin + kBlock, count);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::size_t spawn = std::min<std::size_t>(static_cast<std::size_t>(workers),
                                            (count + kBlock - 1) / kBlock);
  std::vector<std::thread> pool;
  pool.reserve(spawn > 0 ? spawn - 1 : 0);
  for (std::size_t t = 1; t < spawn; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace kd
