#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "m2ru/crossbar.hpp"
#include "m2ru/dfa.hpp"
#include "m2ru/fixed_point.hpp"
#include "m2ru/latency.hpp"
#include "m2ru/miru.hpp"
#include "m2ru/random.hpp"

namespace m2ru {

struct HardwareConfig {
  unsigned adc_bits = 8;
  // Hidden-layer ADC full scale = integrator saturation voltage / 2^shift.
  unsigned hidden_adc_shift = 5;
  // Weight magnitude mapped onto the R_on rail, per layer.
  double hidden_weight_range = 4.0;
  double readout_weight_range = 4.0;
  bool variability = true;
  double ratio_variability = 0.0;  // static M_f/M_i mismatch sigma
  // Tiling of the interpolation unit; shares the latency model's rule.
  bool tiling = true;
  std::size_t tiles = 8;
  unsigned interp_slot_cycles = 16;

  void validate() const {
    if (adc_bits < 1 || adc_bits > 24) throw ConfigError("adc_bits must lie in [1,24]");
    if (hidden_adc_shift > 20) throw ConfigError("adc shift too large");
    if (!(hidden_weight_range > 0 && readout_weight_range > 0)) {
      throw ConfigError("weight ranges must be positive");
    }
    if (!(ratio_variability >= 0.0 && ratio_variability < 1.0)) {
      throw ConfigError("ratio variability must lie in [0,1)");
    }
    if (tiling && tiles == 0) throw ConfigError("tiling needs at least one tile");
  }
};

struct HardwareSeeds {
  std::uint32_t read = 0x1234567u;    // cycle-to-cycle read noise
  std::uint32_t write = 0x2345678u;   // write noise
  std::uint32_t device = 0x3456789u;  // static device offsets and ratio mismatch
};

// MiRU network whose two matrix products run on crossbars: the hidden array
// stacks input rows above recurrent rows ((inputs + hidden) x hidden), the
// readout array is hidden x outputs. Biases, coefficients, the feedback
// projection, activation and interpolation live in the digital domain.
class CrossbarNetwork {
 public:
  CrossbarNetwork(const NetworkParams& init, const DeviceParams& dev, AnalogFrontEnd fe,
                  const HardwareConfig& hw, const HardwareSeeds& seeds)
      : dev_(hw.variability ? dev : dev.ideal()),
        fe_(std::move(fe)),
        hw_(hw),
        n_inputs_(init.n_inputs()),
        n_hidden_(init.n_hidden()),
        n_outputs_(init.n_outputs()),
        reset_(init.reset),
        update_(init.update),
        feedback_(init.feedback),
        hidden_bias_(init.hidden_bias),
        readout_bias_(init.readout_bias),
        read_rng_(seeds.read),
        write_rng_(seeds.write) {
    init.validate();
    dev_.validate();
    hw_.validate();
    fe_.validate(dev_);

    Matrix stacked(n_inputs_ + n_hidden_, n_hidden_);
    for (std::size_t r = 0; r < n_inputs_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c) stacked(r, c) = init.input_weights(r, c);
    for (std::size_t r = 0; r < n_hidden_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c)
        stacked(n_inputs_ + r, c) = init.recurrent_weights(r, c);
    hidden_ = map_weights(stacked, dev_, hw_.hidden_weight_range);
    readout_ = map_weights(init.readout_weights, dev_, hw_.readout_weight_range);

    XorShift32 device_rng(seeds.device);
    if (dev_.device_variability > 0.0) {
      hidden_.draw_device_offsets(dev_.device_variability, device_rng);
      readout_.draw_device_offsets(dev_.device_variability, device_rng);
    }
    if (hw_.ratio_variability > 0.0) fe_.perturb_ratios(hw_.ratio_variability, device_rng);
    integrator_saturation_check(fe_);
  }

  std::size_t n_inputs() const { return n_inputs_; }
  std::size_t n_hidden() const { return n_hidden_; }
  std::size_t n_outputs() const { return n_outputs_; }
  FeedbackPath feedback_path() const { return {*feedback_, reset_, update_}; }

  const CrossbarArray& hidden_array() const { return hidden_; }
  const CrossbarArray& readout_array() const { return readout_; }
  const AnalogFrontEnd& front_end() const { return fe_; }
  const DeviceParams& device() const { return dev_; }
  const HardwareConfig& config() const { return hw_; }
  const XorShift32& read_rng() const { return read_rng_; }
  const XorShift32& write_rng() const { return write_rng_; }
  const Vector& hidden_bias() const { return hidden_bias_; }
  const Vector& readout_bias() const { return readout_bias_; }

  double hidden_fullscale() const {
    return integrator_saturation_check(fe_).v_max / std::ldexp(1.0, static_cast<int>(hw_.hidden_adc_shift));
  }

  // Interpolation cycles spent per time step by the tiled unit.
  std::uint64_t interpolation_cycles_per_step() const {
    LatencyModelParams p;
    p.tiling = hw_.tiling;
    p.tiles = hw_.tiles;
    p.interp_slot_cycles = hw_.interp_slot_cycles;
    return interpolation_cycles(p, n_hidden_);
  }
  std::uint64_t interpolation_cycles_used() const { return interp_cycles_; }

  // Float view of the network as currently stored on the devices.
  NetworkParams read_params() const {
    NetworkParams p;
    const Matrix stacked = read_weights(hidden_);
    p.input_weights = Matrix(n_inputs_, n_hidden_);
    p.recurrent_weights = Matrix(n_hidden_, n_hidden_);
    for (std::size_t r = 0; r < n_inputs_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c) p.input_weights(r, c) = stacked(r, c);
    for (std::size_t r = 0; r < n_hidden_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c)
        p.recurrent_weights(r, c) = stacked(n_inputs_ + r, c);
    p.readout_weights = read_weights(readout_);
    p.hidden_bias = hidden_bias_;
    p.readout_bias = readout_bias_;
    p.reset = reset_;
    p.update = update_;
    p.feedback = feedback_;
    return p;
  }

  // Crossbar-backed forward pass. Inputs and the reset-scaled previous state
  // are streamed bit-serially, each column is digitized, the digital unit
  // adds the bias and applies the piecewise-linear tanh, and the tiled
  // interpolation unit forms the new state in fixed point.
  ForwardResult forward(const Matrix& inputs) {
    const std::size_t steps = inputs.rows();
    if (steps == 0) throw DimensionError("sequence has no time steps");
    require_size(inputs.cols(), n_inputs_, "sequence features");
    const unsigned bits = fe_.input_bits;
    const ReadNoise noise{dev_.cycle_variability, &read_rng_};
    const double hidden_fs = hidden_fullscale();
    const double hidden_unit = wbs_volts_per_unit(hidden_, fe_);
    const HwFixed reset = HwFixed::from_double(reset_);
    const HwFixed update = HwFixed::from_double(update_);
    const HwFixed keep = HwFixed::one() - update;

    ForwardResult r;
    r.trace = {Matrix(steps, n_hidden_), Matrix(steps, n_hidden_), Matrix(steps, n_hidden_)};
    std::vector<HwFixed> h(n_hidden_), candidate(n_hidden_);
    StreamedInput in{std::vector<std::uint32_t>(n_inputs_ + n_hidden_),
                     std::vector<std::int8_t>(n_inputs_ + n_hidden_, 1)};
    interp_cycles_ = 0;

    for (std::size_t t = 0; t < steps; ++t) {
      const auto x = inputs.row(t);
      for (std::size_t i = 0; i < n_inputs_; ++i) {
        in.codes[i] = magnitude_code(x[i], bits);
        in.signs[i] = 1;
      }
      for (std::size_t j = 0; j < n_hidden_; ++j) {
        const double gated = (reset * h[j]).to_double();
        in.codes[n_inputs_ + j] = magnitude_code(gated, bits);
        in.signs[n_inputs_ + j] = gated < 0.0 ? std::int8_t{-1} : std::int8_t{1};
      }
      const Vector v_int = wbs_matvec(hidden_, fe_, in, noise);

      auto pre_row = r.trace.preact.row(t);
      auto cand_row = r.trace.candidate.row(t);
      for (std::size_t j = 0; j < n_hidden_; ++j) {
        const std::int32_t code = adc_quantize(v_int[j], hidden_fs, hw_.adc_bits);
        const double dot = adc_dequantize(code, hidden_fs, hw_.adc_bits) / hidden_unit;
        const HwFixed pre = HwFixed::from_double(dot) + HwFixed::from_double(hidden_bias_[j]);
        candidate[j] = hw_tanh(pre);
        pre_row[j] = pre.to_double();
        cand_row[j] = candidate[j].to_double();
      }

      // Tiles run concurrently; within a tile one unit is interpolated per cycle.
      const std::size_t tiles = hw_.tiling ? hw_.tiles : 1;
      const std::size_t per_tile = (n_hidden_ + tiles - 1) / tiles;
      for (std::size_t slot = 0; slot < per_tile; ++slot) {
        for (std::size_t tile = 0; tile < tiles; ++tile) {
          const std::size_t j = tile * per_tile + slot;
          if (j >= n_hidden_) continue;
          h[j] = update * h[j] + keep * candidate[j];
        }
      }
      interp_cycles_ += interpolation_cycles_per_step();
      auto h_row = r.trace.h.row(t);
      for (std::size_t j = 0; j < n_hidden_; ++j) h_row[j] = h[j].to_double();
    }

    // Readout: stream h_T and integrate. The integrator output drives the
    // softmax stage directly (computed exactly here), so the logits are only
    // bounded by integrator saturation, not by an ADC.
    StreamedInput hin{std::vector<std::uint32_t>(n_hidden_), std::vector<std::int8_t>(n_hidden_, 1)};
    for (std::size_t j = 0; j < n_hidden_; ++j) {
      const double v = h[j].to_double();
      hin.codes[j] = magnitude_code(v, bits);
      hin.signs[j] = v < 0.0 ? std::int8_t{-1} : std::int8_t{1};
    }
    const Vector v_out = wbs_matvec(readout_, fe_, hin, noise);
    const double v_sat = integrator_saturation_check(fe_).v_max;
    const double out_unit = wbs_volts_per_unit(readout_, fe_);
    r.logits.resize(n_outputs_);
    for (std::size_t k = 0; k < n_outputs_; ++k) {
      r.logits[k] = std::clamp(v_out[k], -v_sat, v_sat) / out_unit + readout_bias_[k];
    }
    r.y_hat = softmax(r.logits);
    return r;
  }

  // Forwards the sparsified update to the devices; biases stay digital.
  void apply_gradients(const GradientSet& g, double lr) {
    if (lr == 0.0) return;
    Matrix stacked(n_inputs_ + n_hidden_, n_hidden_);
    for (std::size_t r = 0; r < n_inputs_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c) stacked(r, c) = -lr * g.input_weights(r, c);
    for (std::size_t r = 0; r < n_hidden_; ++r)
      for (std::size_t c = 0; c < n_hidden_; ++c)
        stacked(n_inputs_ + r, c) = -lr * g.recurrent_weights(r, c);
    Matrix out(n_hidden_, n_outputs_);
    for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] = -lr * g.readout_weights.flat()[i];
    program_weights(hidden_, stacked, write_rng_);
    program_weights(readout_, out, write_rng_);
    for (std::size_t j = 0; j < n_hidden_; ++j) hidden_bias_[j] -= lr * g.hidden_bias[j];
    for (std::size_t k = 0; k < n_outputs_; ++k) readout_bias_[k] -= lr * g.readout_bias[k];
  }

  // Checkpoint restore.
  CrossbarArray& mutable_hidden_array() { return hidden_; }
  CrossbarArray& mutable_readout_array() { return readout_; }
  void restore_digital(Vector hidden_bias, Vector readout_bias, XorShift32 read_rng,
                       XorShift32 write_rng, std::vector<double> ratios) {
    require_size(hidden_bias.size(), n_hidden_, "restored hidden bias");
    require_size(readout_bias.size(), n_outputs_, "restored readout bias");
    hidden_bias_ = std::move(hidden_bias);
    readout_bias_ = std::move(readout_bias);
    read_rng_ = read_rng;
    write_rng_ = write_rng;
    fe_.ratio_override = std::move(ratios);
  }

 private:
  DeviceParams dev_;
  AnalogFrontEnd fe_;
  HardwareConfig hw_;
  std::size_t n_inputs_, n_hidden_, n_outputs_;
  double reset_, update_;
  std::shared_ptr<const Matrix> feedback_;
  Vector hidden_bias_, readout_bias_;
  CrossbarArray hidden_, readout_;
  XorShift32 read_rng_, write_rng_;
  std::uint64_t interp_cycles_ = 0;
};

}  // namespace m2ru
