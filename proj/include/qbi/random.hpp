#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace qbi {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Deterministic stream for (seed, key...). Streams with different key paths
// are statistically independent, so per-particle work can run in any order.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {});

// Seed of a child stream, for handing a stream root to a sub-component.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace qbi
