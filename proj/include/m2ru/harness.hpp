#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "m2ru/crossbar.hpp"
#include "m2ru/dfa.hpp"
#include "m2ru/hw_network.hpp"
#include "m2ru/miru.hpp"
#include "m2ru/random.hpp"
#include "m2ru/reliability.hpp"
#include "m2ru/replay.hpp"

namespace m2ru {

// ---------------------------------------------------------------------------
// Datasets and task streams
// ---------------------------------------------------------------------------

// Flat labeled samples (one row per sample). Images keep their geometry in
// image_rows x image_cols; feature files leave both at zero.
struct LabeledSet {
  Matrix samples;
  std::vector<int> labels;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::size_t size() const noexcept { return samples.rows(); }
  std::size_t dim() const noexcept { return samples.cols(); }

  LabeledSet slice(std::size_t first, std::size_t count) const {
    if (first + count > size()) {
      throw ConfigError("requested " + std::to_string(first + count) + " samples but only " +
                        std::to_string(size()) + " are available");
    }
    LabeledSet s{Matrix(count, dim()), {}, image_rows, image_cols};
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(samples.row(first + i).begin(), dim(), s.samples.row(i).begin());
      s.labels.push_back(labels[first + i]);
    }
    return s;
  }

  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

struct Task {
  std::string name;
  SequenceBatch train;
  SequenceBatch test;
  std::vector<std::uint32_t> permutation;  // pixel permutation (permuted streams)
  std::vector<int> classes;                // original labels covered (split streams)
};

struct TaskStream {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::size_t classes = 0;  // shared output head width
  std::vector<Task> tasks;
};

// Fisher-Yates driven by xorshift so streams match on every platform.
inline std::vector<std::uint32_t> random_permutation(std::size_t n, XorShift32& rng) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next() % i;
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

namespace detail {
inline Example to_sequence(std::span<const double> flat, int label, std::size_t steps,
                           std::size_t features, const std::vector<std::uint32_t>* perm) {
  Example ex{Matrix(steps, features), label};
  auto out = ex.inputs.flat();
  for (std::size_t i = 0; i < steps * features; ++i) out[i] = perm ? flat[(*perm)[i]] : flat[i];
  return ex;
}
}  // namespace detail

// Task 0 is the identity permutation; every later task applies its own fixed
// random pixel permutation. Images are presented row by row.
inline TaskStream build_permuted_mnist(const LabeledSet& train, const LabeledSet& test,
                                       std::size_t n_tasks, std::uint32_t seed) {
  if (n_tasks < 1) throw ConfigError("permuted stream needs at least one task");
  if (train.image_rows == 0 || train.image_cols == 0 || train.dim() != test.dim() ||
      train.dim() != train.image_rows * train.image_cols) {
    throw ConfigError("permuted stream needs train and test images of one geometry");
  }
  TaskStream s{train.image_rows, train.image_cols, 10, {}};
  const std::size_t pixels = train.dim();
  XorShift32 rng(seed);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Task task;
    task.name = "permuted-" + std::to_string(t);
    if (t == 0) {
      task.permutation.resize(pixels);
      std::iota(task.permutation.begin(), task.permutation.end(), 0u);
    } else {
      task.permutation = random_permutation(pixels, rng);
    }
    for (std::size_t i = 0; i < train.size(); ++i)
      task.train.push_back(detail::to_sequence(train.samples.row(i), train.labels[i], s.steps,
                                               s.features, &task.permutation));
    for (std::size_t i = 0; i < test.size(); ++i)
      task.test.push_back(detail::to_sequence(test.samples.row(i), test.labels[i], s.steps,
                                              s.features, &task.permutation));
    s.tasks.push_back(std::move(task));
  }
  return s;
}

// Splits the label set, in ascending label order, into tasks of
// `classes_per_task` classes. Labels are remapped to their position inside
// the task so all tasks share one output head. Features are min-max scaled
// with the training range and reshaped to steps x features_per_step.
inline TaskStream build_split_features(const LabeledSet& train, const LabeledSet& test,
                                       std::size_t classes_per_task, std::size_t steps,
                                       std::size_t features_per_step) {
  if (classes_per_task == 0) throw ConfigError("classes_per_task must be positive");
  if (steps * features_per_step != train.dim() || train.dim() != test.dim()) {
    throw ConfigError("feature dimension " + std::to_string(train.dim()) +
                      " does not reshape to " + std::to_string(steps) + "x" +
                      std::to_string(features_per_step));
  }
  std::set<int> label_set(train.labels.begin(), train.labels.end());
  const std::vector<int> labels(label_set.begin(), label_set.end());
  if (labels.size() % classes_per_task != 0) {
    throw ConfigError(std::to_string(labels.size()) + " classes do not divide into tasks of " +
                      std::to_string(classes_per_task));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : train.samples.flat()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  auto normalized = [&](std::span<const double> row) {
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::clamp((row[i] - lo) / span, 0.0, 1.0);
    return out;
  };

  TaskStream s{steps, features_per_step, classes_per_task, {}};
  for (std::size_t first = 0; first < labels.size(); first += classes_per_task) {
    Task task;
    task.classes.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                        labels.begin() + static_cast<std::ptrdiff_t>(first + classes_per_task));
    task.name = "split-" + std::to_string(first / classes_per_task);
    auto local = [&](int label) -> std::optional<int> {
      auto it = std::find(task.classes.begin(), task.classes.end(), label);
      if (it == task.classes.end()) return std::nullopt;
      return static_cast<int>(it - task.classes.begin());
    };
    auto fill = [&](const LabeledSet& src, SequenceBatch& dst) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (auto l = local(src.labels[i])) {
          dst.push_back(detail::to_sequence(normalized(src.samples.row(i)), *l, steps,
                                            features_per_step, nullptr));
        }
      }
    };
    fill(train, task.train);
    fill(test, task.test);
    s.tasks.push_back(std::move(task));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Continual-learning run
// ---------------------------------------------------------------------------

// R[j][i] = accuracy on task i after training through task j; row j holds
// j + 1 entries.
struct AccuracyMatrix {
  std::size_t tasks = 0;
  std::vector<std::vector<double>> rows;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;
};

inline double mean_accuracy(const AccuracyMatrix& r) {
  if (r.tasks == 0 || r.rows.size() != r.tasks || r.rows.back().size() != r.tasks) {
    throw ConsistencyError("accuracy matrix is incomplete");
  }
  const auto& last = r.rows.back();
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

enum class BackendKind { reference, crossbar };

inline const char* to_string(BackendKind b) {
  return b == BackendKind::reference ? "reference" : "crossbar";
}

inline BackendKind backend_from_string(const std::string& s) {
  if (s == "reference") return BackendKind::reference;
  if (s == "crossbar") return BackendKind::crossbar;
  throw ConfigError("unknown backend '" + s + "' (expected reference or crossbar)");
}

struct ReplayConfig {
  bool enabled = true;
  std::size_t capacity_per_task = 600;  // total capacity = this x task count
  unsigned bits = 4;
  std::size_t per_step = 1;  // replayed examples per new example
};

struct ContinualConfig {
  std::size_t hidden = 100;
  double reset = 0.5;
  double update = 0.9;
  TrainConfig train{0.03, 0.43, true};
  std::size_t epochs = 1;
  bool shuffle = true;
  ReplayConfig replay;
  BackendKind backend = BackendKind::reference;
  DeviceParams device;
  AnalogFrontEnd frontend;
  HardwareConfig hardware;
  EnduranceProjection projection;
  std::uint64_t seed = 1;
  // Named streams that should not be derived from `seed`.
  std::map<std::string, std::uint32_t> seed_overrides;

  std::uint32_t named_seed(const std::string& stream) const {
    auto it = seed_overrides.find(stream);
    if (it == seed_overrides.end()) return derive_seed(seed, stream);
    if (it->second == 0) throw SeedError("seed for '" + stream + "' must be nonzero");
    return it->second;
  }

  void validate() const {
    if (hidden == 0) throw ConfigError("hidden size must be positive");
    if (!(reset >= 0.0 && reset <= 1.0 && update >= 0.0 && update <= 1.0)) {
      throw ConfigError("reset and update coefficients must lie in [0,1]");
    }
    train.validate();
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (replay.enabled && (replay.capacity_per_task == 0 || replay.bits < 1 || replay.bits > 8)) {
      throw ConfigError("replay needs positive capacity and 1..8 bits");
    }
    device.validate();
    frontend.validate(device);
    hardware.validate();
  }
};

using AnyBackend = std::variant<ReferenceBackend, CrossbarNetwork>;

inline const CountGrid& hidden_write_counts(const AnyBackend& b) {
  if (auto* r = std::get_if<ReferenceBackend>(&b)) return r->hidden_writes();
  return std::get<CrossbarNetwork>(b).hidden_array().write_counts();
}

inline const CountGrid& readout_write_counts(const AnyBackend& b) {
  if (auto* r = std::get_if<ReferenceBackend>(&b)) return r->readout_writes();
  return std::get<CrossbarNetwork>(b).readout_array().write_counts();
}

// Classification accuracy from features alone; no task identity is passed.
template <class Backend>
double evaluate(Backend& net, const SequenceBatch& test) {
  if (test.empty()) return 0.0;
  std::size_t correct = 0;
  for (const Example& ex : test) {
    if (argmax(net.forward(ex.inputs).y_hat) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double evaluate(AnyBackend& net, const SequenceBatch& test) {
  return std::visit([&](auto& b) { return evaluate(b, test); }, net);
}

struct StepLog {
  std::uint64_t step = 0;
  std::uint32_t task = 0;
  double loss = 0.0;
  std::uint64_t weight_writes = 0;
  std::uint32_t replayed = 0;

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

struct TaskSnapshot {
  std::uint32_t task = 0;
  std::uint64_t updates = 0;
  std::uint64_t total_writes = 0;
  double mean_writes = 0.0;
  double overstress_fraction = 0.0;

  friend bool operator==(const TaskSnapshot&, const TaskSnapshot&) = default;
};

struct ContinualSeeds {
  std::uint32_t weights, feedback, sampler, quantizer, replay_draw, shuffle;
  HardwareSeeds hardware;

  static ContinualSeeds from_config(const ContinualConfig& c) {
    return {c.named_seed("weights"),     c.named_seed("feedback"),
            c.named_seed("sampler"),     c.named_seed("quantizer"),
            c.named_seed("replay_draw"), c.named_seed("shuffle"),
            {c.named_seed("read_noise"), c.named_seed("write_noise"), c.named_seed("device_spread")}};
  }
};

inline const std::vector<std::string>& seed_stream_names() {
  static const std::vector<std::string> names{
      "weights",    "feedback",    "sampler",       "quantizer",   "replay_draw",
      "shuffle",    "read_noise",  "write_noise",   "device_spread", "permutations", "wbs_sweep"};
  return names;
}

// Everything that changes while a run progresses. Checkpoints persist exactly
// this plus the configuration.
struct RunState {
  NetworkDims dims;
  AnyBackend backend;
  ReservoirSampler sampler;
  ReplayBuffer buffer;
  XorShift32 quantizer_rng;
  XorShift32 replay_rng;
  XorShift32 shuffle_rng;
  std::uint32_t task = 0;
  std::uint32_t epoch = 0;
  std::uint64_t position = 0;        // index into `order`
  std::vector<std::uint32_t> order;  // presentation order of the current epoch
  AccuracyMatrix accuracy;
  std::vector<StepLog> steps;
  std::vector<TaskSnapshot> snapshots;
  std::uint64_t updates = 0;
  std::uint64_t weight_writes = 0;  // sum of nonzero weight updates issued
};

inline RunState initial_run_state(const NetworkDims& dims, std::size_t n_tasks,
                                  const ContinualConfig& cfg) {
  cfg.validate();
  if (n_tasks == 0) throw ConfigError("task stream is empty");
  const ContinualSeeds seeds = ContinualSeeds::from_config(cfg);
  NetworkParams params = init_network(dims, cfg.reset, cfg.update, seeds.weights, seeds.feedback);
  AnyBackend backend = cfg.backend == BackendKind::reference
                           ? AnyBackend(std::in_place_type<ReferenceBackend>, std::move(params))
                           : AnyBackend(std::in_place_type<CrossbarNetwork>, params, cfg.device,
                                        cfg.frontend, cfg.hardware, seeds.hardware);
  const std::size_t capacity = std::max<std::size_t>(1, cfg.replay.capacity_per_task * n_tasks);
  return RunState{dims,
                  std::move(backend),
                  ReservoirSampler(capacity, XorShift32(seeds.sampler)),
                  ReplayBuffer(capacity),
                  XorShift32(seeds.quantizer),
                  XorShift32(seeds.replay_draw),
                  XorShift32(seeds.shuffle),
                  0, 0, 0, {},
                  AccuracyMatrix{n_tasks, {}},
                  {}, {}, 0, 0};
}

inline NetworkDims stream_dims(const TaskStream& stream, std::size_t hidden) {
  return {stream.features, hidden, stream.classes, stream.steps};
}

inline RunState initial_run_state(const TaskStream& stream, const ContinualConfig& cfg) {
  return initial_run_state(stream_dims(stream, cfg.hidden), stream.tasks.size(), cfg);
}

// Domain-incremental training loop. Each step trains on one new example plus
// `replay.per_step` examples drawn from the replay buffer, then offers the
// new example (stochastically quantized) to the reservoir. After the last
// epoch of a task every task seen so far is evaluated.
class ContinualRun {
 public:
  ContinualRun(const TaskStream& stream, ContinualConfig cfg)
      : stream_(stream), cfg_(std::move(cfg)), state_(initial_run_state(stream_, cfg_)) {
    begin_epoch();
  }

  // Resumes from a restored state.
  ContinualRun(const TaskStream& stream, ContinualConfig cfg, RunState state)
      : stream_(stream), cfg_(std::move(cfg)), state_(std::move(state)) {
    cfg_.validate();
    if (state_.accuracy.tasks != stream_.tasks.size()) {
      throw ConsistencyError("checkpoint was taken on a stream with a different task count");
    }
    const NetworkDims d = stream_dims(stream_, cfg_.hidden);
    if (d.inputs != state_.dims.inputs || d.hidden != state_.dims.hidden ||
        d.outputs != state_.dims.outputs || d.steps != state_.dims.steps) {
      throw ConsistencyError("checkpoint network shape does not match the task stream");
    }
  }

  bool done() const { return state_.task >= stream_.tasks.size(); }
  const RunState& state() const { return state_; }
  const ContinualConfig& config() const { return cfg_; }
  const TaskStream& stream() const { return stream_; }

  // Runs at most `max_steps` training steps (task-end evaluations are free).
  void run(std::uint64_t max_steps = std::numeric_limits<std::uint64_t>::max()) {
    for (std::uint64_t i = 0; i < max_steps && !done(); ++i) step();
  }

  void step() {
    if (done()) return;
    const Task& task = stream_.tasks[state_.task];
    const Example& fresh = task.train[state_.order[state_.position]];

    SequenceBatch batch{fresh};
    if (cfg_.replay.enabled && state_.buffer.occupancy() > 0 && cfg_.replay.per_step > 0) {
      SequenceBatch replayed = sample_replay_batch(state_.buffer, cfg_.replay.per_step, state_.replay_rng);
      batch.insert(batch.end(), std::make_move_iterator(replayed.begin()),
                   std::make_move_iterator(replayed.end()));
    }
    const StepReport rep = std::visit(
        [&](auto& b) { return train_step(b, std::span<const Example>(batch), cfg_.train); },
        state_.backend);
    state_.steps.push_back({state_.updates, state_.task, rep.loss, rep.weight_writes,
                            static_cast<std::uint32_t>(batch.size() - 1)});
    ++state_.updates;
    state_.weight_writes += rep.weight_writes;

    if (cfg_.replay.enabled) {
      reservoir_offer(state_.sampler, state_.buffer,
                      quantize_example(fresh, cfg_.replay.bits, state_.quantizer_rng));
    }

    if (++state_.position == state_.order.size()) {
      state_.position = 0;
      if (++state_.epoch == cfg_.epochs) {
        finish_task();
        state_.epoch = 0;
        ++state_.task;
      }
      if (!done()) begin_epoch();
    }
  }

  double mean_accuracy() const { return m2ru::mean_accuracy(state_.accuracy); }

  WriteStats write_stats() const {
    return collect_write_stats({std::cref(hidden_write_counts(state_.backend)),
                                std::cref(readout_write_counts(state_.backend))},
                               state_.updates, cfg_.projection);
  }

 private:
  void begin_epoch() {
    const std::size_t n = stream_.tasks[state_.task].train.size();
    if (n == 0) throw ConfigError("task " + std::to_string(state_.task) + " has no training data");
    if (cfg_.shuffle) {
      state_.order = random_permutation(n, state_.shuffle_rng);
    } else {
      state_.order.resize(n);
      std::iota(state_.order.begin(), state_.order.end(), 0u);
    }
  }

  void finish_task() {
    std::vector<double> row;
    for (std::uint32_t i = 0; i <= state_.task; ++i) {
      row.push_back(evaluate(state_.backend, stream_.tasks[i].test));
    }
    state_.accuracy.rows.push_back(std::move(row));
    const WriteStats ws = write_stats();
    std::uint64_t total = 0;
    for (auto c : ws.counts) total += c;
    state_.snapshots.push_back({state_.task, state_.updates, total, ws.mean, ws.overstress_fraction});
  }

  const TaskStream& stream_;
  ContinualConfig cfg_;
  RunState state_;
};

}  // namespace m2ru
