#pragma once

#include <cstdint>
#include <random>

namespace pudm {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent, reproducible stream seeds
// from a run seed so that different consumers never share a generator.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ stream) ^ index);
}

// Named streams so callers do not collide by accident.
enum class Stream : std::uint64_t {
  kInit = 1,
  kBatchU = 2,
  kBatchS = 3,
  kNoiseU = 4,
  kNoiseS = 5,
  kSample = 6,
  kSplit = 7,
  kProjections = 8,
  kSubsample = 9,
  kCondDrop = 10,
};

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, static_cast<std::uint64_t>(stream), index));
}

}  // namespace pudm
