#pragma once

#include <cstdint>
#include <random>

namespace rcchain {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for trial `index` under `master`: splitmix64(master ^ splitmix64(index)).
/// Depends only on the index, never on scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index));
}

/// Independent stream for a named purpose within one run.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, 0x5EED0000ULL + stream));
}

}  // namespace rcchain
