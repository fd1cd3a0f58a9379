#ifndef ADEVAL_PARALLEL_HPP_
#define ADEVAL_PARALLEL_HPP_

#include <cstddef>
#include <thread>
#include <vector>

namespace adeval {

// Runs fn(i) for i in [0, n). Work is split into contiguous index blocks, so
// results written to slot i are independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace adeval

#endif  // ADEVAL_PARALLEL_HPP_
