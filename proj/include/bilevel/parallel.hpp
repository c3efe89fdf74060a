#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bilevel {

// Calls fn(i) for i in [0, n) on up to `threads` workers. Each index is handled
// by exactly one worker, so results written per index do not depend on the
// thread count. The exception from the lowest failing index is rethrown.
template <class Fn>
void for_each_index(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = threads > 1 ? std::min<std::size_t>(static_cast<std::size_t>(threads), n) : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bilevel
