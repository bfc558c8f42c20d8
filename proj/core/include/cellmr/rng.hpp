#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cellmr {

// All randomness in the library flows from a single user seed through named
// substreams.  Each independent unit of work (bootstrap replicate, fold
// shuffle, simulation repetition, ...) derives its own generator from
// (seed, stream name, indices), so results do not depend on scheduling.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  // FNV-1a, folded through splitmix for avalanche.
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return splitmix64(h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t i0 = 0, std::uint64_t i1 = 0) {
  std::uint64_t h = splitmix64(seed ^ hash_name(stream));
  h = splitmix64(h ^ (i0 + 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ (i1 + 0x7f4a7c159e3779b9ULL));
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream,
                                std::uint64_t i0 = 0, std::uint64_t i1 = 0) {
  return std::mt19937_64(derive_seed(seed, stream, i0, i1));
}

}  // namespace cellmr
