#pragma once

#include <cstdint>
#include <random>

namespace vito {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for item `index` under `seed`, with `purpose` separating
/// the streams of different consumers (inputs, noise, shuffling, ...).
/// Depends only on its arguments, never on scheduling or thread count.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose = 0) {
  const std::uint64_t a = splitmix64(seed ^ splitmix64(purpose + 0x5bd1e995ULL));
  const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x2545f4914f6cdd1dULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
  return Rng(seq);
}

namespace stream {
inline constexpr std::uint64_t kSample = 1;
inline constexpr std::uint64_t kNoise = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kAugment = 5;
}  // namespace stream

}  // namespace vito
