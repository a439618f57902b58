#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/random.hpp"
#include "m2ru/tensor.hpp"

namespace m2ru {

struct NetworkDims {
  std::size_t inputs = 28;   // features per time step
  std::size_t hidden = 100;  // MiRU units
  std::size_t outputs = 10;  // classes
  std::size_t steps = 28;    // sequence length

  friend bool operator==(const NetworkDims&, const NetworkDims&) = default;
};

// All tensors of a single-layer MiRU classifier.
//
//   candidate_t = tanh(x_t * input_weights + (reset * h_{t-1}) * recurrent_weights + hidden_bias)
//   h_t         = update * h_{t-1} + (1 - update) * candidate_t
//   y           = softmax(h_T * readout_weights + readout_bias)
//
// `feedback` is the fixed random projection used by direct feedback
// alignment. It is shared and immutable: copies of a parameter set alias the
// same projection, and nothing in the library can write to it.
struct NetworkParams {
  Matrix input_weights;      // inputs x hidden
  Matrix recurrent_weights;  // hidden x hidden
  Matrix readout_weights;    // hidden x outputs
  Vector hidden_bias;        // hidden
  Vector readout_bias;       // outputs
  double reset = 0.5;        // reset coefficient, in [0, 1]
  double update = 0.5;       // update coefficient, in [0, 1]
  std::shared_ptr<const Matrix> feedback;  // outputs x hidden

  std::size_t n_inputs() const noexcept { return input_weights.rows(); }
  std::size_t n_hidden() const noexcept { return input_weights.cols(); }
  std::size_t n_outputs() const noexcept { return readout_weights.cols(); }

  const Matrix& feedback_matrix() const {
    if (!feedback) throw ConsistencyError("network has no feedback projection");
    return *feedback;
  }

  void validate() const {
    const std::size_t nx = n_inputs(), nh = n_hidden(), ny = n_outputs();
    if (nx == 0 || nh == 0 || ny == 0) throw DimensionError("network dimensions must be positive");
    require_shape(recurrent_weights, nh, nh, "recurrent_weights");
    require_shape(readout_weights, nh, ny, "readout_weights");
    require_size(hidden_bias.size(), nh, "hidden_bias");
    require_size(readout_bias.size(), ny, "readout_bias");
    require_shape(feedback_matrix(), ny, nh, "feedback");
    if (!(reset >= 0.0 && reset <= 1.0)) throw ConfigError("reset coefficient must lie in [0,1]");
    if (!(update >= 0.0 && update <= 1.0)) throw ConfigError("update coefficient must lie in [0,1]");
    require_finite(input_weights.flat(), "input_weights");
    require_finite(recurrent_weights.flat(), "recurrent_weights");
    require_finite(readout_weights.flat(), "readout_weights");
    require_finite(hidden_bias, "hidden_bias");
    require_finite(readout_bias, "readout_bias");
    require_finite(feedback->flat(), "feedback");
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    return a.input_weights == b.input_weights && a.recurrent_weights == b.recurrent_weights &&
           a.readout_weights == b.readout_weights && a.hidden_bias == b.hidden_bias &&
           a.readout_bias == b.readout_bias && a.reset == b.reset && a.update == b.update &&
           ((!a.feedback && !b.feedback) ||
            (a.feedback && b.feedback && *a.feedback == *b.feedback));
  }
};

namespace detail {
inline void fill_uniform(std::span<double> v, double bound, XorShift32& rng) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}
}  // namespace detail

// Weights uniform in +-1/sqrt(fan_in), biases zero, feedback uniform in
// +-1/sqrt(outputs).
inline NetworkParams init_network(const NetworkDims& dims, double reset, double update,
                                  std::uint32_t weight_seed, std::uint32_t feedback_seed) {
  NetworkParams p;
  p.input_weights = Matrix(dims.inputs, dims.hidden);
  p.recurrent_weights = Matrix(dims.hidden, dims.hidden);
  p.readout_weights = Matrix(dims.hidden, dims.outputs);
  p.hidden_bias.assign(dims.hidden, 0.0);
  p.readout_bias.assign(dims.outputs, 0.0);
  p.reset = reset;
  p.update = update;

  XorShift32 rng(weight_seed);
  detail::fill_uniform(p.input_weights.flat(), 1.0 / std::sqrt(double(dims.inputs)), rng);
  detail::fill_uniform(p.recurrent_weights.flat(), 1.0 / std::sqrt(double(dims.hidden)), rng);
  detail::fill_uniform(p.readout_weights.flat(), 1.0 / std::sqrt(double(dims.hidden)), rng);

  XorShift32 fb_rng(feedback_seed);
  Matrix feedback(dims.outputs, dims.hidden);
  detail::fill_uniform(feedback.flat(), 1.0 / std::sqrt(double(dims.outputs)), fb_rng);
  p.feedback = std::make_shared<const Matrix>(std::move(feedback));
  p.validate();
  return p;
}

// One labeled sequence: `inputs` is steps x features, every value in [0,1].
struct Example {
  Matrix inputs;
  int label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

using SequenceBatch = std::vector<Example>;

inline Vector one_hot(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw DomainError("label " + std::to_string(label) + " outside [0," +
                      std::to_string(classes) + ")");
  }
  Vector v(classes, 0.0);
  v[static_cast<std::size_t>(label)] = 1.0;
  return v;
}

inline void validate_example(const Example& ex, std::size_t n_inputs, std::size_t n_outputs) {
  if (ex.inputs.rows() == 0) throw DimensionError("sequence has no time steps");
  require_size(ex.inputs.cols(), n_inputs, "sequence features");
  for (double v : ex.inputs.flat()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("sequence input outside [0,1]");
  }
  one_hot(ex.label, n_outputs);
}

inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("softmax of an empty vector");
  require_finite(v, "softmax input");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline double cross_entropy(std::span<const double> y_hat, int label) {
  const double p = std::max(y_hat[static_cast<std::size_t>(label)], 1e-300);
  return -std::log(p);
}

struct StepState {
  Vector h;
  Vector candidate;
  Vector preact;
};

inline StepState forward_step(const NetworkParams& p, std::span<const double> x,
                              std::span<const double> h_prev) {
  const std::size_t nh = p.n_hidden();
  require_size(x.size(), p.n_inputs(), "forward_step input");
  require_size(h_prev.size(), nh, "forward_step previous state");
  require_finite(x, "forward_step input");
  require_finite(h_prev, "forward_step previous state");

  StepState s{Vector(nh), Vector(nh), p.hidden_bias};
  accumulate_vec_mat(x, p.input_weights, s.preact);
  Vector gated(nh);
  for (std::size_t j = 0; j < nh; ++j) gated[j] = p.reset * h_prev[j];
  accumulate_vec_mat(gated, p.recurrent_weights, s.preact);
  for (std::size_t j = 0; j < nh; ++j) {
    s.candidate[j] = std::tanh(s.preact[j]);
    s.h[j] = p.update * h_prev[j] + (1.0 - p.update) * s.candidate[j];
  }
  return s;
}

// Row t of each matrix is the state after step t (0-based); the initial
// state is implicitly zero.
struct HiddenTrace {
  Matrix h;
  Matrix candidate;
  Matrix preact;

  std::size_t steps() const noexcept { return h.rows(); }
  friend bool operator==(const HiddenTrace&, const HiddenTrace&) = default;
};

struct ForwardResult {
  HiddenTrace trace;
  Vector logits;
  Vector y_hat;
};

inline Vector readout_logits(const NetworkParams& p, std::span<const double> h_last) {
  Vector logits = p.readout_bias;
  accumulate_vec_mat(h_last, p.readout_weights, logits);
  return logits;
}

inline ForwardResult forward_sequence(const NetworkParams& p, const Matrix& inputs) {
  const std::size_t nh = p.n_hidden();
  const std::size_t steps = inputs.rows();
  if (steps == 0) throw DimensionError("sequence has no time steps");
  require_size(inputs.cols(), p.n_inputs(), "sequence features");

  ForwardResult r;
  r.trace = {Matrix(steps, nh), Matrix(steps, nh), Matrix(steps, nh)};
  Vector h(nh, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    StepState s = forward_step(p, inputs.row(t), h);
    std::copy(s.h.begin(), s.h.end(), r.trace.h.row(t).begin());
    std::copy(s.candidate.begin(), s.candidate.end(), r.trace.candidate.row(t).begin());
    std::copy(s.preact.begin(), s.preact.end(), r.trace.preact.row(t).begin());
    h = std::move(s.h);
  }
  r.logits = readout_logits(p, h);
  r.y_hat = softmax(r.logits);
  return r;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace m2ru
