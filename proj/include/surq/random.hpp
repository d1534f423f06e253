#pragma once

#include <cstdint>
#include <random>

namespace surq {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds from (seed, key) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace surq
