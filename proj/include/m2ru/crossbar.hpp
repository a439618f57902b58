#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/random.hpp"
#include "m2ru/tensor.hpp"

namespace m2ru {

struct DeviceParams {
  double r_on = 2e6;    // ohms
  double r_off = 20e6;  // ohms
  double v_set_reset_max = 1.2;
  double v_threshold = 1.0;
  double cycle_variability = 0.10;   // per-read sigma, fractional
  double write_variability = 0.10;   // per-write sigma, fractional
  double device_variability = 0.10;  // static device-to-device sigma, fractional
  double endurance_limit = 1e9;      // write cycles

  double g_on() const { return 1.0 / r_on; }
  double g_off() const { return 1.0 / r_off; }
  // Reference devices sit at the middle of the conductance window so the
  // differential read is symmetric around zero.
  double g_mid() const { return 0.5 * (g_on() + g_off()); }

  void validate() const {
    if (!(r_on > 0.0 && r_on < r_off)) throw ConfigError("device requires 0 < R_on < R_off");
    for (double v : {cycle_variability, write_variability, device_variability}) {
      if (!(v >= 0.0 && v < 1.0)) throw ConfigError("variability must lie in [0,1)");
    }
    if (!(v_threshold > 0.0 && v_set_reset_max >= v_threshold)) {
      throw ConfigError("device voltages must satisfy 0 < V_th <= V_set/reset");
    }
    if (!(endurance_limit > 0.0)) throw ConfigError("endurance limit must be positive");
  }

  DeviceParams ideal() const {
    DeviceParams d = *this;
    d.cycle_variability = d.write_variability = d.device_variability = 0.0;
    return d;
  }
};

struct AnalogFrontEnd {
  double pulse_width = 50e-9;       // T_s, seconds
  double feedback_cap = 1e-12;      // C_f on the compute path, farads
  double hold_cap = 2e-12;          // C_f assumed by the hold/leakage analysis
  double max_current = 3.2e-6;      // worst-case bitline current, amps
  double bit_voltage = 0.1;         // streamed pulse amplitude, volts
  unsigned input_bits = 8;          // bits streamed per input
  double conversion_time = 2e-9;    // ADC time per channel, seconds
  double leakage_resistance = 10e9; // ohms
  double bias_current = 50e-12;     // op-amp input bias, amps
  // Realized M_f/M_i gain for bit k (index k-1). Empty means ideal 2^-k.
  std::vector<double> ratio_override;

  double bit_ratio(unsigned k) const {
    if (!ratio_override.empty()) return ratio_override.at(k - 1);
    return std::ldexp(1.0, -static_cast<int>(k));
  }

  std::vector<double> bit_ratios() const {
    std::vector<double> r(input_bits);
    for (unsigned k = 1; k <= input_bits; ++k) r[k - 1] = bit_ratio(k);
    return r;
  }

  // Draws a static mismatch for each ratio memristor pair.
  void perturb_ratios(double sigma, XorShift32& rng) {
    ratio_override.resize(input_bits);
    for (unsigned k = 1; k <= input_bits; ++k) {
      ratio_override[k - 1] = std::ldexp(1.0, -static_cast<int>(k)) * (1.0 + sigma * rng.gaussian());
    }
  }

  void validate(const DeviceParams& dev) const {
    if (input_bits < 1 || input_bits > 16) throw ConfigError("input_bits must lie in [1,16]");
    if (!(pulse_width > 0 && feedback_cap > 0 && hold_cap > 0 && max_current > 0)) {
      throw ConfigError("front-end timing, capacitance and current must be positive");
    }
    if (!(bit_voltage > 0.0 && bit_voltage < dev.v_threshold)) {
      throw ConfigError("streamed bit amplitude must stay below the device threshold");
    }
    if (!ratio_override.empty() && ratio_override.size() != input_bits) {
      throw ConfigError("ratio override length must equal input_bits");
    }
  }
};

// Grid of tunable devices plus one fixed reference device per input row.
// Row i, column j holds the device between input line i and output neuron j;
// its weight is the conductance difference against the row's reference.
class CrossbarArray {
 public:
  CrossbarArray() = default;
  CrossbarArray(std::size_t rows, std::size_t cols, const DeviceParams& dev, double weight_scale)
      : dev_(dev),
        weight_scale_(weight_scale),
        conductance_(rows, cols, dev.g_mid()),
        differential_(rows, cols, 0.0),
        reference_(rows, dev.g_mid()),
        offsets_(rows, cols, 1.0),
        writes_(rows, cols) {
    dev.validate();
    if (!(weight_scale > 0.0)) throw ConfigError("weight scale must be positive");
  }

  std::size_t rows() const noexcept { return conductance_.rows(); }
  std::size_t cols() const noexcept { return conductance_.cols(); }
  const DeviceParams& device() const noexcept { return dev_; }
  // Siemens per unit weight.
  double weight_scale() const noexcept { return weight_scale_; }

  double conductance(std::size_t r, std::size_t c) const { return conductance_(r, c); }
  double resistance(std::size_t r, std::size_t c) const { return 1.0 / conductance_(r, c); }
  double reference_conductance(std::size_t r) const { return reference_[r]; }
  const Matrix& conductances() const noexcept { return conductance_; }
  // G - G_ref per device, kept in sync with every write.
  const Matrix& differential() const noexcept { return differential_; }
  const Vector& reference_column() const noexcept { return reference_; }
  const Matrix& device_offsets() const noexcept { return offsets_; }
  const CountGrid& write_counts() const noexcept { return writes_; }
  std::uint64_t saturation_events() const noexcept { return saturations_; }

  // Sets a conductance, clipping to the device window. Returns true if clipped.
  bool set_conductance(std::size_t r, std::size_t c, double g) {
    const double lo = dev_.g_off(), hi = dev_.g_on();
    const bool clipped = g < lo || g > hi;
    g = std::clamp(g, lo, hi);
    conductance_(r, c) = g;
    differential_(r, c) = g - reference_[r];
    if (clipped) ++saturations_;
    return clipped;
  }

  void record_write(std::size_t r, std::size_t c) { ++writes_(r, c); }

  // Static device-to-device spread, drawn once per array.
  void draw_device_offsets(double sigma, XorShift32& rng) {
    for (double& o : offsets_.flat()) o = std::max(0.0, 1.0 + sigma * rng.gaussian());
  }

  // Checkpoint restore.
  void restore(Matrix conductance, Matrix offsets, CountGrid writes, std::uint64_t saturations) {
    require_shape(conductance, rows(), cols(), "restored conductances");
    require_shape(offsets, rows(), cols(), "restored offsets");
    if (writes.rows != rows() || writes.cols != cols()) {
      throw CheckpointError("restored write counters have the wrong shape");
    }
    conductance_ = std::move(conductance);
    offsets_ = std::move(offsets);
    writes_ = std::move(writes);
    saturations_ = saturations;
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t c = 0; c < cols(); ++c)
        differential_(r, c) = conductance_(r, c) - reference_[r];
  }

  friend bool operator==(const CrossbarArray& a, const CrossbarArray& b) {
    return a.weight_scale_ == b.weight_scale_ && a.conductance_ == b.conductance_ &&
           a.reference_ == b.reference_ && a.offsets_ == b.offsets_ && a.writes_ == b.writes_ &&
           a.saturations_ == b.saturations_;
  }

 private:
  DeviceParams dev_;
  double weight_scale_ = 1.0;
  Matrix conductance_;
  Matrix differential_;
  Vector reference_;
  Matrix offsets_;
  CountGrid writes_;
  std::uint64_t saturations_ = 0;
};

// Weight w becomes conductance G_mid + w * s, with s chosen so that
// `weight_range` (default: max |w|) lands on the R_on rail.
inline CrossbarArray map_weights(const Matrix& w, const DeviceParams& dev,
                                 std::optional<double> weight_range = std::nullopt) {
  double range = weight_range.value_or(0.0);
  if (!weight_range) {
    for (double v : w.flat()) range = std::max(range, std::abs(v));
    if (range == 0.0) range = 1.0;
  }
  if (!(range > 0.0)) throw ConfigError("weight range must be positive");
  CrossbarArray xb(w.rows(), w.cols(), dev, (dev.g_on() - dev.g_mid()) / range);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c)
      xb.set_conductance(r, c, dev.g_mid() + w(r, c) * xb.weight_scale());
  return xb;
}

inline Matrix read_weights(const CrossbarArray& xb) {
  Matrix w(xb.rows(), xb.cols());
  const double inv = 1.0 / xb.weight_scale();
  for (std::size_t r = 0; r < xb.rows(); ++r)
    for (std::size_t c = 0; c < xb.cols(); ++c) w(r, c) = xb.differential()(r, c) * inv;
  return w;
}

// Per-read cycle-to-cycle noise source; sigma = 0 disables it.
struct ReadNoise {
  double sigma = 0.0;
  XorShift32* rng = nullptr;
  bool active() const { return sigma > 0.0 && rng != nullptr; }
};

// Digital input ready for streaming: magnitude code plus sign per row.
struct StreamedInput {
  std::vector<std::uint32_t> codes;
  std::vector<std::int8_t> signs;  // +1 or -1
};

// Round-to-nearest magnitude code of |v| in [0,1] on a 2^bits grid.
inline std::uint32_t magnitude_code(double v, unsigned bits) {
  const std::uint32_t top = (1u << bits) - 1;
  const double m = std::min(1.0, std::abs(v));
  return std::min(static_cast<std::uint32_t>(std::llround(std::ldexp(m, static_cast<int>(bits)))),
                  top);
}

inline StreamedInput encode_inputs(std::span<const double> x, unsigned bits) {
  StreamedInput in{std::vector<std::uint32_t>(x.size()), std::vector<std::int8_t>(x.size(), 1)};
  for (std::size_t i = 0; i < x.size(); ++i) {
    in.codes[i] = magnitude_code(x[i], bits);
    in.signs[i] = x[i] < 0.0 ? std::int8_t{-1} : std::int8_t{1};
  }
  return in;
}

inline double decode_input(std::uint32_t code, std::int8_t sign, unsigned bits) {
  return sign * std::ldexp(static_cast<double>(code), -static_cast<int>(bits));
}

// Weighted-bit streaming matrix-vector product. Bit-plane k (k = 1 is the
// MSB) drives every row whose code has that bit set with a +-bit_voltage pulse
// of width T_s; each bitline sums v * (G - G_ref) by Kirchhoff's law, and the
// integrator adds T_s/C_f * (M_f/M_i)_k * I. Returns the integrated voltage
// per column. With cycle-to-cycle variability each device conductance
// difference is perturbed independently per read; the per-column sum of those
// perturbations is Gaussian, so it is drawn as one sample per column per
// bit-plane with the exact aggregate variance.
inline Vector wbs_matvec(const CrossbarArray& xb, const AnalogFrontEnd& fe,
                         const StreamedInput& in, ReadNoise noise = {}) {
  require_size(in.codes.size(), xb.rows(), "wbs_matvec input");
  require_size(in.signs.size(), xb.rows(), "wbs_matvec signs");
  const unsigned bits = fe.input_bits;
  const std::uint32_t top = (1u << bits) - 1;
  const std::size_t cols = xb.cols();
  const Matrix& diff = xb.differential();
  const double gain = fe.pulse_width / fe.feedback_cap;

  Vector v_int(cols, 0.0), current(cols), variance(cols);
  for (unsigned k = 1; k <= bits; ++k) {
    const unsigned shift = bits - k;
    std::fill(current.begin(), current.end(), 0.0);
    if (noise.active()) std::fill(variance.begin(), variance.end(), 0.0);
    for (std::size_t i = 0; i < xb.rows(); ++i) {
      const std::uint32_t code = in.codes[i];
      if (code > top) throw DomainError("streamed code exceeds input_bits");
      if (((code >> shift) & 1u) == 0) continue;
      const double v = in.signs[i] < 0 ? -fe.bit_voltage : fe.bit_voltage;
      const auto d = diff.row(i);
      for (std::size_t j = 0; j < cols; ++j) current[j] += v * d[j];
      if (noise.active()) {
        for (std::size_t j = 0; j < cols; ++j) variance[j] += d[j] * d[j];
      }
    }
    const double ratio = fe.bit_ratio(k);
    for (std::size_t j = 0; j < cols; ++j) {
      double i_col = current[j];
      if (noise.active() && variance[j] > 0.0) {
        i_col += noise.sigma * fe.bit_voltage * std::sqrt(variance[j]) * noise.rng->gaussian();
      }
      if (std::abs(i_col) > fe.max_current) {
        throw OverrangeError("bitline " + std::to_string(j) + " current " +
                             std::to_string(i_col) + " A exceeds I_max");
      }
      v_int[j] += gain * ratio * i_col;
    }
  }
  return v_int;
}

// Volts of integrator output per unit of (weight x decoded input).
inline double wbs_volts_per_unit(const CrossbarArray& xb, const AnalogFrontEnd& fe) {
  return fe.pulse_width / fe.feedback_cap * fe.bit_voltage * xb.weight_scale();
}

struct SaturationCheck {
  double v_max = 0.0;       // I_max * T_s / C_f
  double worst_case = 0.0;  // v_max * sum of bit ratios
};

inline SaturationCheck integrator_saturation_check(const AnalogFrontEnd& fe) {
  SaturationCheck s;
  s.v_max = fe.max_current * fe.pulse_width / fe.feedback_cap;
  double ratio_sum = 0.0;
  for (unsigned k = 1; k <= fe.input_bits; ++k) ratio_sum += fe.bit_ratio(k);
  s.worst_case = s.v_max * ratio_sum;
  if (s.worst_case > s.v_max) {
    throw ConsistencyError("bit ratios sum above one; the integrator can saturate");
  }
  return s;
}

struct LeakageBudget {
  double hold_time = 0.0;   // n_channels * T_conv
  double tau = 0.0;         // R_leakage * C_hold
  double dielectric = 0.0;  // linearized: V_int * T / tau
  double bias = 0.0;        // I_b * T / C_hold
  double total = 0.0;
  double dielectric_exact = 0.0;  // V_int * (1 - exp(-T / tau))
};

inline LeakageBudget leakage_budget(const AnalogFrontEnd& fe, double v_int, std::size_t n_channels) {
  LeakageBudget b;
  b.hold_time = static_cast<double>(n_channels) * fe.conversion_time;
  b.tau = fe.leakage_resistance * fe.hold_cap;
  b.dielectric = v_int * b.hold_time / b.tau;
  b.bias = fe.bias_current * b.hold_time / fe.hold_cap;
  b.total = b.dielectric + b.bias;
  b.dielectric_exact = v_int * -std::expm1(-b.hold_time / b.tau);
  return b;
}

// Mid-rise uniform quantizer over [-v_fullscale, +v_fullscale].
inline std::int32_t adc_quantize(double v, double v_fullscale, unsigned bits) {
  if (bits < 1 || bits > 24) throw ConfigError("adc bits must lie in [1,24]");
  const double lsb = 2.0 * v_fullscale / std::ldexp(1.0, static_cast<int>(bits));
  const auto hi = static_cast<std::int32_t>((1u << (bits - 1)) - 1);
  const std::int32_t lo = -hi - 1;
  const double code = std::floor(v / lsb);
  if (code >= hi) return hi;
  if (code <= lo) return lo;
  return static_cast<std::int32_t>(code);
}

inline double adc_dequantize(std::int32_t code, double v_fullscale, unsigned bits) {
  const double lsb = 2.0 * v_fullscale / std::ldexp(1.0, static_cast<int>(bits));
  return (static_cast<double>(code) + 0.5) * lsb;
}

struct ProgramReport {
  std::size_t writes = 0;
  std::size_t clipped = 0;
};

// Applies a weight-domain update to every device with a nonzero entry. The
// realized conductance step carries per-write noise and the device's static
// offset; results are clipped to the window. Zero entries are not written.
inline ProgramReport program_weights(CrossbarArray& xb, const Matrix& delta_w, XorShift32& rng) {
  require_shape(delta_w, xb.rows(), xb.cols(), "program_weights delta");
  const DeviceParams& dev = xb.device();
  ProgramReport rep;
  for (std::size_t r = 0; r < xb.rows(); ++r) {
    for (std::size_t c = 0; c < xb.cols(); ++c) {
      const double dw = delta_w(r, c);
      if (dw == 0.0) continue;
      double dg = dw * xb.weight_scale() * xb.device_offsets()(r, c);
      if (dev.write_variability > 0.0) dg *= 1.0 + dev.write_variability * rng.gaussian();
      if (xb.set_conductance(r, c, xb.conductance(r, c) + dg)) ++rep.clipped;
      xb.record_write(r, c);
      ++rep.writes;
    }
  }
  return rep;
}

}  // namespace m2ru
