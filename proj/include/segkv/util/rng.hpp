// SPDX-License-Identifier: Apache-2.0
//
// Portable seeded randomness. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are written out
// here because the standard library's distributions are not reproducible
// across implementations.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace segkv {

__extension__ using uint128 = unsigned __int128;

// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1342543de82ef95ULL + 1));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer on [lo, hi], consuming exactly one engine draw
  // (multiply-high reduction; bias is below 2^-40 for any range used here).
  std::uint64_t randint(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t span = hi - lo + 1;
    const auto wide = static_cast<uint128>(engine_()) * span;
    return lo + static_cast<std::uint64_t>(wide >> 64);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; one value per two uniforms.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace segkv
