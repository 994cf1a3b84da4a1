#pragma once

#include <cstdint>
#include <random>

namespace xagg {

/// splitmix64 step; used to derive independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for a (stream, index) pair, e.g. (method id, image id).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ (stream * 0x9e3779b97f4a7c15ULL)) ^ index);
}

using RandomEngine = std::mt19937_64;

}  // namespace xagg
