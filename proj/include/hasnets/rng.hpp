#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hasnets {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named substream of a run seed. Each consumer of randomness
/// (split, init, dropout, ...) gets its own stream so that adding draws to one
/// never shifts another.
constexpr std::uint64_t substream_seed(std::uint64_t run_seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(run_seed ^ mix64(h));
}

constexpr std::uint64_t combine_seed(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t run_seed, std::string_view stream) {
  return Rng(substream_seed(run_seed, stream));
}

}  // namespace hasnets
