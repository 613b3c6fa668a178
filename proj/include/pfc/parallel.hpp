#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace pfc {

namespace detail {
inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{1};
  return n;
}
}  // namespace detail

/// Number of worker threads ops may use internally. Only write-disjoint
/// loops parallelize (each output element is produced by exactly one thread
/// with a fixed accumulation order), so results are bit-identical for any
/// setting.
inline void set_num_threads(int n) { detail::thread_count() = n < 1 ? 1 : n; }
inline int num_threads() { return detail::thread_count(); }

/// Run fn(begin, end) over disjoint chunks of [0, count). Falls back to a
/// single inline call when one thread is configured or the range is tiny.
inline void parallel_chunks(std::int64_t count,
                            const std::function<void(std::int64_t, std::int64_t)>& fn) {
  const int t = num_threads();
  if (t <= 1 || count < 2) {
    fn(0, count);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(t, count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const std::int64_t chunk = (count + workers - 1) / workers;
  for (int i = 0; i < workers; ++i) {
    const std::int64_t b = i * chunk;
    const std::int64_t e = std::min<std::int64_t>(b + chunk, count);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace pfc
