#pragma once

#include <cstdint>
#include <random>

#include "relex/tensor.hpp"

namespace relex {

/// splitmix64 finalizer; derives independent stream seeds from (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Tensor random_normal(const Shape& shape, double stddev, Rng& rng) {
  Tensor t(shape);
  if (stddev == 0.0) return t;
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t) v = dist(rng);
  return t;
}

inline Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape, lo);
  if (hi <= lo) return t;
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t) v = dist(rng);
  return t;
}

/// Uniform direction on the unit sphere (normalized Gaussian draw).
inline Tensor random_unit(const Shape& shape, Rng& rng) {
  for (;;) {
    Tensor t = random_normal(shape, 1.0, rng);
    const double n = norm2(t);
    if (n > 1e-300) return t * (1.0 / n);
  }
}

}  // namespace relex
