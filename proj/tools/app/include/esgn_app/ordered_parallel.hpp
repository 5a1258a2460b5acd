#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace esgn::app {

/// Runs work(i) for i in [0, n) on up to `threads` workers and hands each
/// result to sink(i, result) on the calling thread, strictly in index order.
/// work must not throw.
template <typename Result, typename Work, typename Sink>
void ordered_parallel(std::size_t n, std::size_t threads, Work&& work, Sink&& sink) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      Result r = work(i);
      sink(i, std::move(r));
    }
    return;
  }

  std::vector<std::optional<Result>> slots(n);
  std::mutex mutex;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          Result r = work(i);
          {
            std::lock_guard lock(mutex);
            slots[i].emplace(std::move(r));
          }
          ready.notify_all();
        }
      });
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::unique_lock lock(mutex);
      ready.wait(lock, [&] { return slots[i].has_value(); });
      Result r = std::move(*slots[i]);
      slots[i].reset();
      lock.unlock();
      sink(i, std::move(r));
    }
  }
}

}  // namespace esgn::app
