#pragma once

#include <cstdint>

namespace upil {

// SplitMix64 finaliser; derives independent RNG seeds from (seed, stream, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace streams {
inline constexpr std::uint64_t prototypes = 1;
inline constexpr std::uint64_t partition_batches = 2;
inline constexpr std::uint64_t train_batches = 3;
inline constexpr std::uint64_t model_init = 4;
inline constexpr std::uint64_t split = 5;
inline constexpr std::uint64_t test_reshuffle = 6;
}  // namespace streams

}  // namespace upil
