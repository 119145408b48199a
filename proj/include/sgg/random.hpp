#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sgg {

// splitmix64 finalizer; decorrelates structured seeds (seed, epoch, index).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t combine_seeds(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ull;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts) {
  return std::mt19937_64(combine_seeds(parts));
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed) {
  return std::mt19937_64(mix64(seed));
}

}  // namespace sgg
