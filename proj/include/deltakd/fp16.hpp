// SPDX-License-Identifier: Apache-2.0
//
// IEEE-754 binary16 conversion with round-to-nearest-even. Encoding never
// produces infinities: magnitudes above 65504 clamp to the largest finite
// half and bump a caller-visible counter.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>

#include "deltakd/errors.hpp"

namespace deltakd {

inline constexpr double kHalfMax = 65504.0;

/// Counts clamped values across all encoders in the process.
inline std::atomic<std::uint64_t>& fp16_saturation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline std::uint16_t fp16_encode(double x) {
  if (std::isnan(x)) throw DomainError("cannot encode NaN as a half-precision logit");
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  double a = std::abs(x);
  if (a > kHalfMax) {
    fp16_saturation_counter().fetch_add(1, std::memory_order_relaxed);
    a = kHalfMax;
  }
  if (a < 0x1p-14) {
    // Subnormal range; a rounded value of 1024 is the smallest normal,
    // whose bit pattern happens to be 1024 as well.
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(std::nearbyint(std::ldexp(a, 24))));
  }
  int e = 0;
  std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  int exp = e - 1;
  double r = std::nearbyint(std::ldexp(a, 10 - exp));  // in [1024, 2048]
  if (r == 2048.0) {
    r = 1024.0;
    ++exp;
  }
  const auto bits = static_cast<std::uint16_t>(((exp + 15) << 10) | (static_cast<int>(r) - 1024));
  return static_cast<std::uint16_t>(sign | bits);
}

inline double fp16_decode(std::uint16_t h) {
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 0x1f) {
    v = mant == 0 ? INFINITY : NAN;
  } else {
    v = std::ldexp(static_cast<double>(mant + 1024), exp - 25);
  }
  return (h & 0x8000) ? -v : v;
}

inline bool fp16_is_finite(std::uint16_t h) { return ((h >> 10) & 0x1f) != 0x1f; }

}  // namespace deltakd
