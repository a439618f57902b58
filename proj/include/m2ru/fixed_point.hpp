#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace m2ru {

// Signed fixed-point value with `Frac` fractional bits in 32-bit storage.
// Arithmetic rounds to nearest and saturates at the storage limits.
template <int Frac>
struct Fixed {
  static_assert(Frac > 0 && Frac < 30);
  static constexpr std::int64_t one_raw = std::int64_t{1} << Frac;

  std::int32_t raw = 0;

  static constexpr Fixed from_raw(std::int64_t r) {
    constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
    constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
    return Fixed{static_cast<std::int32_t>(r < lo ? lo : (r > hi ? hi : r))};
  }
  static Fixed from_double(double v) {
    return from_raw(static_cast<std::int64_t>(std::llround(std::ldexp(v, Frac))));
  }
  static constexpr Fixed one() { return from_raw(one_raw); }

  constexpr double to_double() const { return static_cast<double>(raw) / static_cast<double>(one_raw); }

  friend constexpr Fixed operator+(Fixed a, Fixed b) {
    return from_raw(std::int64_t{a.raw} + std::int64_t{b.raw});
  }
  friend constexpr Fixed operator-(Fixed a, Fixed b) {
    return from_raw(std::int64_t{a.raw} - std::int64_t{b.raw});
  }
  friend constexpr Fixed operator-(Fixed a) { return from_raw(-std::int64_t{a.raw}); }
  friend constexpr Fixed operator*(Fixed a, Fixed b) {
    const std::int64_t p = std::int64_t{a.raw} * std::int64_t{b.raw};
    const std::int64_t half = std::int64_t{1} << (Frac - 1);
    // Round half away from zero so that negation commutes with multiplication.
    return from_raw(p >= 0 ? (p + half) >> Frac : -((-p + half) >> Frac));
  }
  friend constexpr auto operator<=>(Fixed, Fixed) = default;
};

using HwFixed = Fixed<16>;

// Piecewise-linear tanh for the digital activation unit. Knots at
// |x| = 0, 0.5, 1, 1.5, 2 with minimax-fitted values, then a ramp that
// reaches exactly 1 at |x| = 3 and saturates. Max error vs tanh is ~0.0117.
namespace detail {
inline constexpr std::array<double, 7> kTanhKnotX = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
inline constexpr std::array<double, 7> kTanhKnotY = {0.0,         0.47376565, 0.77324265,
                                                     0.90129928,  0.95815485, 1.0, 1.0};
}  // namespace detail

template <int Frac>
Fixed<Frac> hw_tanh(Fixed<Frac> x) {
  using F = Fixed<Frac>;
  // Knot tables in the same fixed-point format, built once.
  static const auto knots = [] {
    std::array<std::pair<F, F>, detail::kTanhKnotX.size()> k{};
    for (std::size_t i = 0; i < k.size(); ++i) {
      k[i] = {F::from_double(detail::kTanhKnotX[i]), F::from_double(detail::kTanhKnotY[i])};
    }
    return k;
  }();
  const bool negative = x.raw < 0;
  const F mag = negative ? -x : x;
  F y = knots.back().second;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const auto [x0, y0] = knots[i];
    const auto [x1, y1] = knots[i + 1];
    if (mag < x1) {
      // y0 + (mag - x0) * (y1 - y0) / (x1 - x0), with integer division rounded to nearest.
      const std::int64_t num = std::int64_t{(mag - x0).raw} * std::int64_t{(y1 - y0).raw};
      const std::int64_t den = (x1 - x0).raw;
      y = y0 + F::from_raw((num + den / 2) / den);
      break;
    }
  }
  return negative ? -y : y;
}

}  // namespace m2ru
