#pragma once

#include <cstdint>
#include <random>

namespace plunder {

using Rng = std::mt19937_64;

/// Mixes a master seed with stream identifiers (splitmix64 finalizer).
/// Used everywhere a sub-computation needs its own reproducible stream.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace plunder
