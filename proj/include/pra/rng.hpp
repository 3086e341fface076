#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <string_view>

namespace pra {

// Stable hashing and stream derivation. Everything here is a pure function of
// its arguments so that sampling never depends on batch composition.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

constexpr std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Uniform in [0, 1) with 53 bits.
constexpr double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Standard normal deviate derived from a key (Box-Muller on two hashed uniforms).
inline double normal_from(std::uint64_t key) {
  const double u1 = 1.0 - to_unit(splitmix64(key));  // (0, 1]
  const double u2 = to_unit(splitmix64(key ^ 0x5851f42d4c957f2dULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Generator stream for one (run seed, question, trace) triple.
inline std::mt19937_64 trace_stream(std::uint64_t seed, std::string_view question_id, std::uint64_t serial) {
  return std::mt19937_64(mix({seed, hash_string(question_id), serial}));
}

inline double uniform01(std::mt19937_64& rng) { return to_unit(rng()); }

}  // namespace pra
