#pragma once

#include <cstdint>
#include <random>

namespace nbglarma {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for (parent, stream, index); independent of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream, std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(parent) ^ stream) + index);
}

// Stream tags for derive_seed.
inline constexpr std::uint64_t kStreamSubsample = 0x5ab5;
inline constexpr std::uint64_t kStreamFolds = 0xf01d;
inline constexpr std::uint64_t kStreamIteration = 0x17e2;
inline constexpr std::uint64_t kStreamReplicate = 0x2e91;
inline constexpr std::uint64_t kStreamSeries = 0x5e21;

}  // namespace nbglarma
