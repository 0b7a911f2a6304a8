#pragma once

#include <cstdint>
#include <random>

namespace biphoton {

/// SplitMix64 finalizer; used to derive independent generator seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Generator for stream (seed, stream_id, substream); results depend only on the triple.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream_id,
                                   std::uint64_t substream = 0) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream_id + 0x632BE59BD9B4E019ULL));
  const std::uint64_t c = splitmix64(b ^ splitmix64(substream + 0x85157AF5ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace biphoton
