#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace biphoton::detail {

inline unsigned worker_count(std::size_t n) {
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BIPHOTON_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) workers = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
}

// Runs body(i) for i in [0, n). Each index writes only its own output slot, so
// results do not depend on the number of workers.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace biphoton::detail
