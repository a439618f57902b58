#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

#include "m2ru/errors.hpp"

namespace m2ru {

// 32-bit xorshift generator with the (13, 17, 5) shift triple. The state is
// never zero, so the generator never outputs zero. Satisfies
// UniformRandomBitGenerator, but the simulator only uses the helpers below so
// that streams are identical across standard libraries.
class XorShift32 {
 public:
  using result_type = std::uint32_t;

  explicit XorShift32(std::uint32_t seed) : state_(seed) {
    if (seed == 0) throw SeedError("xorshift32 seed must be nonzero");
  }

  static constexpr result_type min() { return 1; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type next() noexcept {
    std::uint32_t x = state_;
    x ^= x << 13;
    x ^= x >> 17;
    x ^= x << 5;
    state_ = x;
    return x;
  }
  result_type operator()() noexcept { return next(); }

  std::uint32_t state() const noexcept { return state_; }

  // Uniform in [0, 1).
  double uniform01() noexcept { return static_cast<double>(next()) * 0x1p-32; }

  // Standard normal via Box-Muller; consumes two draws per call.
  double gaussian() noexcept {
    const double u1 = (static_cast<double>(next()) + 0.5) * 0x1p-32;
    const double u2 = static_cast<double>(next()) * 0x1p-32;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

  friend bool operator==(const XorShift32&, const XorShift32&) = default;

 private:
  std::uint32_t state_;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Expands a master seed into an independent nonzero 32-bit seed per named
// stream ("weights", "feedback", "sampler", ...).
inline std::uint32_t derive_seed(std::uint64_t master, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  const std::uint64_t mixed = splitmix64(master ^ splitmix64(h));
  auto seed = static_cast<std::uint32_t>(mixed ^ (mixed >> 32));
  return seed == 0 ? 0x6d2b79f5u : seed;
}

}  // namespace m2ru
