// SPDX-License-Identifier: Apache-2.0
//
// Portable draws on top of std::mt19937_64 (whose output sequence is fixed by
// the standard). The std distributions are implementation-defined, so runs
// would not reproduce across standard libraries with them.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace deltakd {

using Rng = std::mt19937_64;

/// Uniform integer in [0, n), n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform_real(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_unit(rng); }

/// Standard normal via Box-Muller (one value per call).
inline double standard_normal(Rng& rng) {
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class Container>
void shuffle_in_place(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    using std::swap;
    swap(c[i - 1], c[j]);
  }
}

/// Index drawn from non-negative weights with positive sum.
template <class Weights>
std::size_t weighted_index(Rng& rng, const Weights& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double r = uniform_unit(rng) * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last = i;
    if (r < w[i]) return i;
    r -= w[i];
  }
  return last;
}

}  // namespace deltakd
