#pragma once

#include <cstdint>
#include <random>

namespace sgdlab {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used as a counter-based splitter so that
// (experiment seed, stream, index) maps to an independent generator seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) + index);
}

// Named streams keep data generation, initialization and batch sampling
// decoupled from each other.
namespace stream {
inline constexpr std::uint64_t kData = 0x64617461;       // "data"
inline constexpr std::uint64_t kHoldout = 0x686f6c64;    // "hold"
inline constexpr std::uint64_t kCorrupt = 0x636f7272;    // "corr"
inline constexpr std::uint64_t kInit = 0x696e6974;       // "init"
inline constexpr std::uint64_t kBatch = 0x62617463;      // "batc"
inline constexpr std::uint64_t kPosterior = 0x706f7374;  // "post"
inline constexpr std::uint64_t kProbe = 0x70726f62;      // "prob"
}  // namespace stream

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream_id, index));
}

}  // namespace sgdlab
