#pragma once

#include <cstdint>
#include <random>

namespace fairfader {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(const char* s) {
  uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) {
    h ^= (unsigned char)*s;
    h *= 1099511628211ull;
  }
  return h;
}

// Named substream of a run seed. Keeps model init, batch order, and data
// generation on independent streams so adding one consumer does not shift
// the others.
inline std::mt19937 sub_rng(uint64_t seed, const char* stream) {
  return std::mt19937((uint32_t)splitmix64(seed ^ fnv1a(stream)));
}

}  // namespace fairfader
