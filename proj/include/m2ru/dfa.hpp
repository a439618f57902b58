#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/miru.hpp"
#include "m2ru/tensor.hpp"

namespace m2ru {

// Gradients with the same shapes as the trainable part of NetworkParams.
struct GradientSet {
  Matrix readout_weights;    // hidden x outputs
  Matrix input_weights;      // inputs x hidden
  Matrix recurrent_weights;  // hidden x hidden
  Vector hidden_bias;
  Vector readout_bias;

  static GradientSet zeros(std::size_t nx, std::size_t nh, std::size_t ny) {
    return {Matrix(nh, ny), Matrix(nx, nh), Matrix(nh, nh), Vector(nh, 0.0), Vector(ny, 0.0)};
  }

  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    fn(readout_weights.flat());
    fn(std::span<double>(input_weights.flat()));
    fn(std::span<double>(recurrent_weights.flat()));
    fn(std::span<double>(hidden_bias));
    fn(std::span<double>(readout_bias));
  }

  void accumulate(const GradientSet& o) {
    auto add = [](std::span<double> a, std::span<const double> b) {
      require_size(b.size(), a.size(), "gradient accumulate");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(readout_weights.flat(), o.readout_weights.flat());
    add(input_weights.flat(), o.input_weights.flat());
    add(recurrent_weights.flat(), o.recurrent_weights.flat());
    add(hidden_bias, o.hidden_bias);
    add(readout_bias, o.readout_bias);
  }

  std::size_t weight_nonzeros() const {
    return count_nonzero(readout_weights.flat()) + count_nonzero(input_weights.flat()) +
           count_nonzero(recurrent_weights.flat());
  }

  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double keep_ratio = 0.43;  // fraction of each gradient tensor written back
  bool train_biases = true;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning rate must be a finite non-negative number");
    }
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("keep_ratio must lie in (0,1]");
  }
};

// The pieces of the network the feedback-alignment backward pass reads.
// Forward weights are deliberately absent.
struct FeedbackPath {
  const Matrix& feedback;  // outputs x hidden
  double reset;
  double update;

  static FeedbackPath of(const NetworkParams& p) {
    return {p.feedback_matrix(), p.reset, p.update};
  }
};

// Softmax + cross-entropy error at the logits.
inline Vector output_deltas(std::span<const double> y_hat, std::span<const double> y) {
  require_size(y.size(), y_hat.size(), "output_deltas target");
  double sum = 0.0;
  for (double p : y_hat) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw NumericError("y_hat is not a probability vector");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw NumericError("y_hat does not sum to one");
  Vector d(y_hat.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = y_hat[i] - y[i];
  return d;
}

// Direct feedback alignment through time. The readout gradient uses only the
// final hidden state; the output error is projected through the fixed
// feedback matrix and applied at every step, scaled by the update
// coefficient and the tanh derivative at that step's pre-activation.
inline GradientSet dfa_gradients(const FeedbackPath& fb, const Example& ex,
                                 const HiddenTrace& trace, std::span<const double> y_hat) {
  const std::size_t steps = ex.inputs.rows();
  const std::size_t nx = ex.inputs.cols();
  const std::size_t nh = fb.feedback.cols();
  const std::size_t ny = fb.feedback.rows();
  if (trace.steps() != steps) {
    throw ConsistencyError("trace has " + std::to_string(trace.steps()) +
                           " steps but the sequence has " + std::to_string(steps));
  }
  require_shape(trace.h, steps, nh, "trace.h");
  require_shape(trace.preact, steps, nh, "trace.preact");

  GradientSet g = GradientSet::zeros(nx, nh, ny);
  const Vector delta_o = output_deltas(y_hat, one_hot(ex.label, ny));

  add_outer(g.readout_weights, trace.h.row(steps - 1), delta_o);
  g.readout_bias = delta_o;

  Vector projected(nh, 0.0);
  accumulate_vec_mat(delta_o, fb.feedback, projected);

  Vector delta_h(nh), gated_prev(nh);
  for (std::size_t t = steps; t-- > 0;) {
    const auto pre = trace.preact.row(t);
    for (std::size_t j = 0; j < nh; ++j) {
      const double th = std::tanh(pre[j]);
      delta_h[j] = fb.update * projected[j] * (1.0 - th * th);
    }
    add_outer(g.input_weights, ex.inputs.row(t), delta_h);
    if (t > 0) {
      const auto h_prev = trace.h.row(t - 1);
      for (std::size_t j = 0; j < nh; ++j) gated_prev[j] = fb.reset * h_prev[j];
      add_outer(g.recurrent_weights, gated_prev, delta_h);
    }
    for (std::size_t j = 0; j < nh; ++j) g.hidden_bias[j] += delta_h[j];
  }
  return g;
}

inline std::size_t kwta_keep_count(std::size_t n, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("keep_ratio must lie in (0,1]");
  // The epsilon absorbs representation error such as 0.43 * 100 = 43.000...01.
  const double k = std::ceil(keep_ratio * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

// Keeps the ceil(keep_ratio * n) largest-magnitude entries in place and
// zeroes the rest. Ties go to the lower index.
inline void kwta_in_place(std::span<double> v, double keep_ratio) {
  const std::size_t keep = kwta_keep_count(v.size(), keep_ratio);
  if (keep == v.size()) return;
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto stronger = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(v[a]), mb = std::abs(v[b]);
    return ma != mb ? ma > mb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                   stronger);
  for (auto it = order.begin() + static_cast<std::ptrdiff_t>(keep); it != order.end(); ++it) {
    v[*it] = 0.0;
  }
}

inline GradientSet kwta_sparsify(GradientSet g, double keep_ratio) {
  kwta_keep_count(1, keep_ratio);
  g.for_each_tensor([&](std::span<double> t) { kwta_in_place(t, keep_ratio); });
  return g;
}

inline NetworkParams apply_update(NetworkParams p, const GradientSet& g, double lr) {
  require_shape(g.input_weights, p.input_weights.rows(), p.input_weights.cols(), "dW_h");
  require_shape(g.recurrent_weights, p.recurrent_weights.rows(), p.recurrent_weights.cols(),
                "dU_h");
  require_shape(g.readout_weights, p.readout_weights.rows(), p.readout_weights.cols(), "dW_o");
  require_size(g.hidden_bias.size(), p.hidden_bias.size(), "db_h");
  require_size(g.readout_bias.size(), p.readout_bias.size(), "db_o");
  auto step = [lr](std::span<double> w, std::span<const double> d) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * d[i];
  };
  step(p.input_weights.flat(), g.input_weights.flat());
  step(p.recurrent_weights.flat(), g.recurrent_weights.flat());
  step(p.readout_weights.flat(), g.readout_weights.flat());
  step(p.hidden_bias, g.hidden_bias);
  step(p.readout_bias, g.readout_bias);
  return p;
}

// Float backend. Alongside the weights it keeps per-weight write counters
// laid out like the crossbars would be (hidden array = input rows followed
// by recurrent rows), so endurance statistics can be produced without the
// device model.
class ReferenceBackend {
 public:
  explicit ReferenceBackend(NetworkParams p)
      : params_(std::move(p)),
        hidden_writes_(params_.n_inputs() + params_.n_hidden(), params_.n_hidden()),
        readout_writes_(params_.n_hidden(), params_.n_outputs()) {
    params_.validate();
  }

  ForwardResult forward(const Matrix& inputs) const { return forward_sequence(params_, inputs); }
  FeedbackPath feedback_path() const { return FeedbackPath::of(params_); }
  std::size_t n_inputs() const { return params_.n_inputs(); }
  std::size_t n_hidden() const { return params_.n_hidden(); }
  std::size_t n_outputs() const { return params_.n_outputs(); }

  void apply_gradients(const GradientSet& g, double lr) {
    count_writes(g, lr);
    params_ = apply_update(std::move(params_), g, lr);
  }

  const NetworkParams& params() const { return params_; }
  const CountGrid& hidden_writes() const { return hidden_writes_; }
  const CountGrid& readout_writes() const { return readout_writes_; }

  // Checkpoint restore.
  void restore(NetworkParams p, CountGrid hidden, CountGrid readout) {
    params_ = std::move(p);
    hidden_writes_ = std::move(hidden);
    readout_writes_ = std::move(readout);
  }

 private:
  void count_writes(const GradientSet& g, double lr) {
    const std::size_t nx = params_.n_inputs();
    auto touch = [lr](const Matrix& d, CountGrid& c, std::size_t row_offset) {
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t k = 0; k < d.cols(); ++k)
          if (lr * d(r, k) != 0.0) ++c(r + row_offset, k);
    };
    touch(g.input_weights, hidden_writes_, 0);
    touch(g.recurrent_weights, hidden_writes_, nx);
    touch(g.readout_weights, readout_writes_, 0);
  }

  NetworkParams params_;
  CountGrid hidden_writes_;
  CountGrid readout_writes_;
};

struct StepReport {
  double loss = 0.0;               // mean cross-entropy over the batch
  std::size_t weight_writes = 0;   // nonzero weight updates issued
  std::size_t correct = 0;         // batch examples classified correctly before the update
};

// Averages DFA gradients over the batch, sparsifies them and hands the result
// to the backend. Backends provide forward(), feedback_path() and
// apply_gradients().
template <class Backend>
StepReport train_step(Backend& net, std::span<const Example> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw ConfigError("train_step needs a nonempty batch");
  cfg.validate();
  const std::size_t nx = net.n_inputs(), nh = net.n_hidden(), ny = net.n_outputs();
  GradientSet sum = GradientSet::zeros(nx, nh, ny);
  StepReport report;
  const FeedbackPath fb = net.feedback_path();
  for (const Example& ex : batch) {
    ForwardResult fwd = net.forward(ex.inputs);
    report.loss += cross_entropy(fwd.y_hat, ex.label);
    if (argmax(fwd.y_hat) == ex.label) ++report.correct;
    GradientSet g = dfa_gradients(fb, ex, fwd.trace, fwd.y_hat);
    sum.accumulate(g);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  sum.for_each_tensor([inv](std::span<double> t) {
    for (double& v : t) v *= inv;
  });
  report.loss *= inv;
  if (!cfg.train_biases) {
    std::fill(sum.hidden_bias.begin(), sum.hidden_bias.end(), 0.0);
    std::fill(sum.readout_bias.begin(), sum.readout_bias.end(), 0.0);
  }
  GradientSet sparse = kwta_sparsify(std::move(sum), cfg.keep_ratio);
  report.weight_writes = cfg.learning_rate == 0.0 ? 0 : sparse.weight_nonzeros();
  net.apply_gradients(sparse, cfg.learning_rate);
  return report;
}

}  // namespace m2ru
