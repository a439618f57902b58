#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/miru.hpp"
#include "m2ru/random.hpp"

namespace m2ru {

// ---------------------------------------------------------------------------
// Stochastic quantizer
// ---------------------------------------------------------------------------

inline void check_bits(unsigned bits) {
  if (bits < 1 || bits > 16) throw ConfigError("bit width must lie in [1,16]");
}

// Scales x by 2^bits and rounds up with probability equal to the fractional
// part, except from the top code. x = 1.0 lands on 2^bits and is clamped to
// the largest storable code.
inline std::uint32_t stochastic_quantize(double x, unsigned bits, double r) {
  check_bits(bits);
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("quantizer input outside [0,1]");
  const std::uint32_t top = (1u << bits) - 1;
  const double z = std::ldexp(x, static_cast<int>(bits));
  const double floor_z = std::floor(z);
  const double frac = z - floor_z;
  auto q = static_cast<std::uint32_t>(floor_z);
  if (r < frac && q < top) ++q;
  return std::min(q, top);
}

// Plain truncation to the same grid; the baseline the stochastic quantizer is
// compared against.
inline std::uint32_t truncate_quantize(double x, unsigned bits) {
  check_bits(bits);
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("quantizer input outside [0,1]");
  const std::uint32_t top = (1u << bits) - 1;
  return std::min(static_cast<std::uint32_t>(std::ldexp(x, static_cast<int>(bits))), top);
}

inline double dequantize(std::uint32_t code, unsigned bits) {
  check_bits(bits);
  if (code >= (1u << bits)) throw DomainError("code exceeds bit width");
  return std::ldexp(static_cast<double>(code), -static_cast<int>(bits));
}

// ---------------------------------------------------------------------------
// Replay storage
// ---------------------------------------------------------------------------

// A sequence stored as `bits`-wide codes packed back to back, little end
// first, so that 4-bit storage takes half the bytes of 8-bit storage.
class QuantizedExample {
 public:
  QuantizedExample() = default;
  QuantizedExample(std::size_t steps, std::size_t features, unsigned bits, int label)
      : steps_(steps), features_(features), bits_(bits), label_(label),
        packed_((steps * features * bits + 7) / 8, 0) {
    check_bits(bits);
    if (bits > 8) throw ConfigError("replay codes are at most 8 bits wide");
  }

  std::size_t steps() const noexcept { return steps_; }
  std::size_t features() const noexcept { return features_; }
  unsigned bits() const noexcept { return bits_; }
  int label() const noexcept { return label_; }
  std::size_t byte_size() const noexcept { return packed_.size(); }
  const std::vector<std::uint8_t>& packed() const noexcept { return packed_; }

  std::uint32_t code(std::size_t i) const {
    std::uint32_t v = 0;
    const std::size_t bit0 = i * bits_;
    for (unsigned b = 0; b < bits_; ++b) {
      const std::size_t pos = bit0 + b;
      v |= static_cast<std::uint32_t>((packed_[pos / 8] >> (pos % 8)) & 1u) << b;
    }
    return v;
  }

  void set_code(std::size_t i, std::uint32_t v) {
    if (v >= (1u << bits_)) throw DomainError("code exceeds bit width");
    const std::size_t bit0 = i * bits_;
    for (unsigned b = 0; b < bits_; ++b) {
      const std::size_t pos = bit0 + b;
      const auto mask = static_cast<std::uint8_t>(1u << (pos % 8));
      if ((v >> b) & 1u) packed_[pos / 8] |= mask;
      else packed_[pos / 8] &= static_cast<std::uint8_t>(~mask);
    }
  }

  Example to_example() const {
    Example ex{Matrix(steps_, features_), label_};
    auto flat = ex.inputs.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = dequantize(code(i), bits_);
    return ex;
  }

  // Checkpoint restore.
  static QuantizedExample from_packed(std::size_t steps, std::size_t features, unsigned bits,
                                      int label, std::vector<std::uint8_t> packed) {
    QuantizedExample q(steps, features, bits, label);
    if (packed.size() != q.packed_.size()) throw CheckpointError("packed replay size mismatch");
    q.packed_ = std::move(packed);
    return q;
  }

  friend bool operator==(const QuantizedExample&, const QuantizedExample&) = default;

 private:
  std::size_t steps_ = 0;
  std::size_t features_ = 0;
  unsigned bits_ = 4;
  int label_ = 0;
  std::vector<std::uint8_t> packed_;
};

// Every feature is quantized with an independent uniform draw from `rng`.
inline QuantizedExample quantize_example(const Example& ex, unsigned bits, XorShift32& rng) {
  QuantizedExample q(ex.inputs.rows(), ex.inputs.cols(), bits, ex.label);
  const auto flat = ex.inputs.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    q.set_code(i, stochastic_quantize(flat[i], bits, rng.uniform01()));
  }
  return q;
}

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    slots_.reserve(capacity);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t occupancy() const noexcept { return slots_.size(); }
  const QuantizedExample& slot(std::size_t i) const { return slots_.at(i); }
  const std::vector<QuantizedExample>& slots() const noexcept { return slots_; }

  void store(std::size_t index, QuantizedExample ex) {
    if (index < slots_.size()) {
      slots_[index] = std::move(ex);
    } else if (index == slots_.size() && index < capacity_) {
      slots_.push_back(std::move(ex));
    } else {
      throw ConsistencyError("replay slot " + std::to_string(index) + " out of order");
    }
  }

  std::size_t footprint_bytes() const {
    std::size_t total = 0;
    for (const auto& s : slots_) total += s.byte_size();
    return total;
  }

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

 private:
  std::size_t capacity_;
  std::vector<QuantizedExample> slots_;
};

// ---------------------------------------------------------------------------
// Reservoir sampler
// ---------------------------------------------------------------------------

// Counter + xorshift + modulus. The first `capacity` offers fill the buffer in
// order; afterwards offer i draws j = (rand mod i) + 1 in [1, i] and replaces
// slot j - 1 when j <= capacity.
class ReservoirSampler {
 public:
  ReservoirSampler(std::size_t capacity, XorShift32 rng) : capacity_(capacity), rng_(rng) {
    if (capacity == 0) throw ConfigError("reservoir capacity must be positive");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t seen() const noexcept { return seen_; }
  const XorShift32& rng() const noexcept { return rng_; }

  // Slot to overwrite for the next stream element, or nullopt if rejected.
  std::optional<std::size_t> next_slot() {
    ++seen_;
    if (seen_ <= capacity_) return static_cast<std::size_t>(seen_ - 1);
    const std::uint64_t j = rng_.next() % seen_ + 1;
    last_draw_ = j;
    if (j <= capacity_) return static_cast<std::size_t>(j - 1);
    return std::nullopt;
  }

  // Index j of the most recent random draw (0 before the buffer fills).
  std::uint64_t last_draw() const noexcept { return last_draw_; }

  void restore(std::uint64_t seen, XorShift32 rng, std::uint64_t last_draw = 0) {
    seen_ = seen;
    rng_ = rng;
    last_draw_ = last_draw;
  }

  friend bool operator==(const ReservoirSampler&, const ReservoirSampler&) = default;

 private:
  std::size_t capacity_;
  XorShift32 rng_;
  std::uint64_t seen_ = 0;
  std::uint64_t last_draw_ = 0;
};

struct OfferResult {
  std::optional<std::size_t> stored_at;  // nullopt: rejected
};

inline OfferResult reservoir_offer(ReservoirSampler& sampler, ReplayBuffer& buffer,
                                   QuantizedExample ex) {
  if (sampler.capacity() != buffer.capacity()) {
    throw ConsistencyError("sampler and buffer capacities differ");
  }
  OfferResult r{sampler.next_slot()};
  if (r.stored_at) buffer.store(*r.stored_at, std::move(ex));
  return r;
}

// Draws n slots uniformly with replacement (xorshift mod occupancy).
inline SequenceBatch sample_replay_batch(const ReplayBuffer& buffer, std::size_t n,
                                         XorShift32& rng) {
  SequenceBatch batch;
  if (n == 0) return batch;
  if (buffer.occupancy() == 0) throw EmptyBufferError("replay buffer is empty");
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(buffer.slot(rng.next() % buffer.occupancy()).to_example());
  }
  return batch;
}

}  // namespace m2ru
