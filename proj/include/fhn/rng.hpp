#pragma once

// Counter-based Gaussian generation: Philox4x32-10 + Box-Muller.
// A value depends only on (key, counter), never on traversal order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fhn::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {
inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}
}  // namespace detail

inline Counter philox4x32_10(Counter c, Key k) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo(M0, c[0], hi0, lo0);
    detail::mulhilo(M1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += W0;
    k[1] += W1;
  }
  return c;
}

inline Key key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Seed of an independent stream (realisation, run) derived from a base seed; splitmix64 finaliser.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// uniform in (0, 1], never 0 so log() is safe
inline double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ull << 53) - 1)) + 1.0) * 0x1.0p-53;
}

/// Two standard normals from one Philox block indexed by a 64-bit block id and stream tag.
inline std::array<double, 2> normal2(std::uint64_t seed, std::uint64_t block, std::uint32_t stream = 0) {
  const Counter c{static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), stream, 0x46484eu};
  const Counter r = philox4x32_10(c, key_from_seed(seed));
  const double u1 = to_unit_open(r[0], r[1]);
  const double u2 = to_unit_open(r[2], r[3]);
  const double rad = std::sqrt(-2.0 * std::log(u1));
  return {rad * std::cos(2.0 * std::numbers::pi * u2), rad * std::sin(2.0 * std::numbers::pi * u2)};
}

/// One standard normal for a cell id: block cell/2, lane cell%2.
inline double normal(std::uint64_t seed, std::uint64_t cell, std::uint32_t stream = 0) {
  return normal2(seed, cell >> 1, stream)[cell & 1];
}

}  // namespace fhn::rng
