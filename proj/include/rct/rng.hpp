#pragma once

#include <cstdint>
#include <random>

namespace rct {

using Rng = std::mt19937_64;

// Independent, reproducible sub-stream for a named purpose.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return Rng{z};
}

namespace stream {
inline constexpr std::uint64_t durations = 1;
inline constexpr std::uint64_t failures = 2;
inline constexpr std::uint64_t outliers = 3;
inline constexpr std::uint64_t workload = 4;
}  // namespace stream

}  // namespace rct
