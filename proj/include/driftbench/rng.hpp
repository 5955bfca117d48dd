#pragma once

#include <cstdint>
#include <random>

namespace driftbench {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives independent named streams from one experiment seed. Keeping each
// concern (shuffling, reservoir draws, gate draws, ...) on its own stream is
// what makes the reduction identities bit-exact: consuming randomness for a
// disabled feature never perturbs the streams that drive parameter updates.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t substream = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ substream);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0) {
  return Rng(mix_seed(seed, stream, substream));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace driftbench
