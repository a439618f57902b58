#pragma once

#include <cmath>
#include <cstdint>

#include "m2ru/errors.hpp"

namespace m2ru {

// Cycle budget of one recurrent step:
//   streaming (bits x cycles per bit) + shared-ADC scan of the hidden
//   channels + candidate interpolation + fixed control overhead.
// With tiling the interpolation unit runs in a fixed slot of
// `interp_slot_cycles`, enough for any layer whose tiles hold at most that
// many units; without tiling the units are interpolated one per cycle.
struct LatencyModelParams {
  double clock_hz = 20e6;
  unsigned input_bits = 8;
  unsigned stream_cycles_per_bit = 1;
  double adc_conversion_s = 2e-9;
  bool tiling = true;
  std::size_t tiles = 8;
  unsigned interp_slot_cycles = 16;
  // Calibrated with calibrate_overhead(); see the experiment configs.
  std::int64_t fixed_overhead_cycles = 0;

  void validate() const {
    if (!(clock_hz > 0.0)) throw ConfigError("clock must be positive");
    if (input_bits < 1) throw ConfigError("input_bits must be >= 1");
    if (tiling && tiles < 1) throw ConfigError("tiling needs at least one tile");
    if (fixed_overhead_cycles < 0) throw ConfigError("overhead cycles must be non-negative");
  }
};

struct LatencyBreakdown {
  std::uint64_t stream_cycles = 0;
  std::uint64_t adc_cycles = 0;
  std::uint64_t interp_cycles = 0;
  std::uint64_t overhead_cycles = 0;
  std::uint64_t total_cycles = 0;
  double seconds = 0.0;
};

inline std::uint64_t interpolation_cycles(const LatencyModelParams& p, std::size_t n_hidden) {
  if (!p.tiling) return n_hidden;
  const std::size_t per_tile = (n_hidden + p.tiles - 1) / p.tiles;
  return per_tile <= p.interp_slot_cycles ? p.interp_slot_cycles : per_tile;
}

inline std::uint64_t adc_scan_cycles(const LatencyModelParams& p, std::size_t n_hidden) {
  const double cycles = static_cast<double>(n_hidden) * p.adc_conversion_s * p.clock_hz;
  return static_cast<std::uint64_t>(std::ceil(cycles - 1e-9));
}

inline LatencyBreakdown estimate_latency(const LatencyModelParams& p, std::size_t n_hidden,
                                         std::size_t n_inputs) {
  p.validate();
  if (n_hidden == 0 || n_inputs == 0) throw ConfigError("layer sizes must be positive");
  LatencyBreakdown b;
  // All wordlines (inputs and recurrent state) are driven in parallel, so
  // the streaming term depends on bit depth only.
  b.stream_cycles = std::uint64_t{p.input_bits} * p.stream_cycles_per_bit;
  b.adc_cycles = adc_scan_cycles(p, n_hidden);
  b.interp_cycles = interpolation_cycles(p, n_hidden);
  b.overhead_cycles = static_cast<std::uint64_t>(p.fixed_overhead_cycles);
  b.total_cycles = b.stream_cycles + b.adc_cycles + b.interp_cycles + b.overhead_cycles;
  b.seconds = static_cast<double>(b.total_cycles) / p.clock_hz;
  return b;
}

// Overhead (in whole cycles) that makes the model hit `target_seconds` for
// the given layer sizes.
inline std::int64_t calibrate_overhead(LatencyModelParams p, std::size_t n_hidden,
                                       std::size_t n_inputs, double target_seconds) {
  p.fixed_overhead_cycles = 0;
  const LatencyBreakdown base = estimate_latency(p, n_hidden, n_inputs);
  const auto target = static_cast<std::int64_t>(std::llround(target_seconds * p.clock_hz));
  const std::int64_t overhead = target - static_cast<std::int64_t>(base.total_cycles);
  if (overhead < 0) throw ConfigError("target latency is below the modeled datapath latency");
  return overhead;
}

}  // namespace m2ru
