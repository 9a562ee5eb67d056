#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace modwatch {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from a parent seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(parent) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(parent, a), b);
}

// Standard normal draw. Box-Muller on the engine's raw output keeps results
// identical across standard-library implementations.
inline double standard_normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925;
  constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = static_cast<double>(rng() >> 11) * scale;
  const double u2 = static_cast<double>(rng() >> 11) * scale;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace modwatch
