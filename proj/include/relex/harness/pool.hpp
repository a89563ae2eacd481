#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace relex::harness {

template <class T>
struct ItemResult {
  std::optional<T> value;
  std::string error;  ///< what() of the exception thrown by the item, if any
};

/// Runs fn(0..n-1) on up to `workers` threads. Items are claimed in index
/// order and stored by index, so the output never depends on scheduling.
template <class T, class Fn>
std::vector<ItemResult<T>> parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<ItemResult<T>> out(n);
  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i].value.emplace(fn(i));
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    drain();
    return out;
  }
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(drain);
  }
  return out;
}

}  // namespace relex::harness
