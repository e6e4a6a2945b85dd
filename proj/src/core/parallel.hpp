#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace trust {

/// Worker count from TRUST_THREADS. 0 (or 1) means serial execution on the calling thread.
inline std::size_t worker_count() {
  const char* env = std::getenv("TRUST_THREADS");
  if (env == nullptr || *env == '\0') {
    return 0;
  }
  try {
    return static_cast<std::size_t>(std::stoul(env));
  } catch (...) {
    return 0;
  }
}

/// Runs fn(i) for i in [0, count). Indices are strided across workers so each
/// index is processed exactly once; callers write results by index.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t workers = worker_count()) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }
  workers = std::min(workers, count);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) {
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace trust
