#pragma once

#include <cstdint>
#include <random>

namespace pommix {

// splitmix64 mixer; used to derive independent RNG streams from one seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Engine for stream `stream` of a run seeded with `seed`. Streams are
// decorrelated so per-sample work can be farmed out deterministically.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64{splitmix64(splitmix64(seed) ^ splitmix64(stream + 1))};
}

}  // namespace pommix
