#pragma once

#include <cstdint>
#include <random>

#include "diffaug/tensor.hpp"

namespace diffaug {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

/// Tensor of i.i.d. standard normals drawn from `rng`.
inline Tensor randn(Shape shape, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<Real> normal(0.0, 1.0);
  for (auto& v : t.span()) v = normal(rng);
  return t;
}

inline Tensor randn(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return randn(shape, rng);
}

}  // namespace diffaug
