#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "m2ru/dataset_io.hpp"
#include "m2ru/harness.hpp"
#include "m2ru/latency.hpp"

namespace m2ru {

struct DatasetConfig {
  std::string kind = "permuted_mnist";  // or "split_features"
  // permuted_mnist: train = first train_count samples of images/labels; test =
  // the next test_count samples, or the first test_count of test_* if given.
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  std::size_t train_count = 5000;
  std::size_t test_count = 1000;
  std::size_t tasks = 3;
  // split_features
  std::string train_features;
  std::string test_features;
  std::size_t classes_per_task = 2;
  std::size_t steps = 16;
  std::size_t features_per_step = 32;
};

struct WbsSweepConfig {
  std::vector<unsigned> bits{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::size_t> sizes{16, 32, 64, 128};
  std::size_t pairs = 200;
};

struct LatencySweepConfig {
  std::vector<unsigned> bits{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<std::size_t> hidden{16, 32, 64, 100, 128};
  std::size_t n_hidden = 100;  // reference point for the bit sweep
  std::size_t n_inputs = 28;
  double calibration_target_s = 1.85e-6;
};

struct RunConfig {
  ContinualConfig continual;
  DatasetConfig dataset;
  LatencyModelParams latency;
  LatencySweepConfig latency_sweep;
  WbsSweepConfig wbs_sweep;
  std::string output_dir = "out";
  std::filesystem::path base_dir;  // relative dataset paths resolve against this

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }

  void validate() const {
    continual.validate();
    latency.validate();
    if (dataset.kind != "permuted_mnist" && dataset.kind != "split_features") {
      throw ConfigError("dataset.kind must be permuted_mnist or split_features");
    }
    if (dataset.kind == "permuted_mnist") {
      if (dataset.test_images.empty() != dataset.test_labels.empty()) {
        throw ConfigError("dataset.test_images and dataset.test_labels go together");
      }
      if (dataset.tasks < 1) throw ConfigError("dataset.tasks must be at least 1");
      if (dataset.train_count == 0 || dataset.test_count == 0) {
        throw ConfigError("dataset train/test counts must be positive");
      }
    }
    for (const auto& [name, v] : continual.seed_overrides) {
      if (v == 0) throw SeedError("seeds." + name + " must be nonzero");
    }
  }

  // Checks that every input file is named and exists, before any compute
  // starts. Analysis-only configs may leave the dataset out.
  void check_paths() const {
    std::vector<std::string> paths;
    if (dataset.kind == "permuted_mnist") {
      if (dataset.images.empty() || dataset.labels.empty()) {
        throw ConfigError("dataset.images and dataset.labels are required");
      }
      paths = {dataset.images, dataset.labels};
      if (!dataset.test_images.empty()) {
        paths.push_back(dataset.test_images);
        paths.push_back(dataset.test_labels);
      }
    } else {
      if (dataset.train_features.empty() || dataset.test_features.empty()) {
        throw ConfigError("dataset.train_features and dataset.test_features are required");
      }
      paths = {dataset.train_features, dataset.test_features};
    }
    for (const auto& p : paths) {
      if (!std::filesystem::exists(resolve(p))) {
        throw ConfigError("dataset file not found: " + resolve(p).string());
      }
    }
  }
};

namespace detail {

using nlohmann::json;

// Reads keys from one JSON object and rejects any key it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    const std::string at = child(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + " must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + " must be a number");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError(at + " must be non-negative");
        const auto u = v.get<std::uint64_t>();
        if (u > std::numeric_limits<T>::max()) throw ConfigError(at + " is out of range");
        out = static_cast<T>(u);
      } else {
        out = v.get<T>();
      }
    } else {
      if (!v.is_array()) throw ConfigError(at + " must be an array");
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const json wrapped = json::object({{"v", v[i]}});
        Section one(wrapped, at + "[" + std::to_string(i) + "]");
        typename T::value_type e{};
        one.get("v", e);
        out.push_back(e);
      }
    }
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + child(k.c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::Section;
  RunConfig c;
  c.base_dir = base_dir;
  ContinualConfig& cc = c.continual;
  Section root(j, "");
  root.get("seed", cc.seed);
  root.get("output_dir", c.output_dir);
  std::string backend = to_string(cc.backend);
  root.get("backend", backend);
  cc.backend = backend_from_string(backend);

  if (auto* s = root.sub("seeds")) {
    Section sec(*s, "seeds");
    for (const auto& name : seed_stream_names()) {
      std::uint32_t v = 0;
      if (s->contains(name)) {
        sec.get(name.c_str(), v);
        cc.seed_overrides[name] = v;
      }
    }
    sec.finish();
  }
  if (auto* s = root.sub("network")) {
    Section sec(*s, "network");
    sec.get("hidden", cc.hidden);
    sec.get("reset", cc.reset);
    sec.get("update", cc.update);
    sec.finish();
  }
  if (auto* s = root.sub("trainer")) {
    Section sec(*s, "trainer");
    sec.get("learning_rate", cc.train.learning_rate);
    sec.get("keep_ratio", cc.train.keep_ratio);
    sec.get("train_biases", cc.train.train_biases);
    sec.get("epochs", cc.epochs);
    sec.get("shuffle", cc.shuffle);
    sec.finish();
  }
  if (auto* s = root.sub("replay")) {
    Section sec(*s, "replay");
    sec.get("enabled", cc.replay.enabled);
    sec.get("capacity_per_task", cc.replay.capacity_per_task);
    sec.get("bits", cc.replay.bits);
    sec.get("per_step", cc.replay.per_step);
    sec.finish();
  }
  if (auto* s = root.sub("device")) {
    Section sec(*s, "device");
    DeviceParams& d = cc.device;
    sec.get("r_on", d.r_on);
    sec.get("r_off", d.r_off);
    sec.get("v_set_reset_max", d.v_set_reset_max);
    sec.get("v_threshold", d.v_threshold);
    sec.get("cycle_variability", d.cycle_variability);
    sec.get("write_variability", d.write_variability);
    sec.get("device_variability", d.device_variability);
    sec.get("endurance_limit", d.endurance_limit);
    sec.finish();
  }
  if (auto* s = root.sub("frontend")) {
    Section sec(*s, "frontend");
    AnalogFrontEnd& f = cc.frontend;
    sec.get("pulse_width", f.pulse_width);
    sec.get("feedback_cap", f.feedback_cap);
    sec.get("hold_cap", f.hold_cap);
    sec.get("max_current", f.max_current);
    sec.get("bit_voltage", f.bit_voltage);
    sec.get("input_bits", f.input_bits);
    sec.get("conversion_time", f.conversion_time);
    sec.get("leakage_resistance", f.leakage_resistance);
    sec.get("bias_current", f.bias_current);
    sec.finish();
  }
  if (auto* s = root.sub("hardware")) {
    Section sec(*s, "hardware");
    HardwareConfig& h = cc.hardware;
    sec.get("adc_bits", h.adc_bits);
    sec.get("hidden_adc_shift", h.hidden_adc_shift);
    sec.get("hidden_weight_range", h.hidden_weight_range);
    sec.get("readout_weight_range", h.readout_weight_range);
    sec.get("variability", h.variability);
    sec.get("ratio_variability", h.ratio_variability);
    sec.get("tiling", h.tiling);
    sec.get("tiles", h.tiles);
    sec.get("interp_slot_cycles", h.interp_slot_cycles);
    sec.finish();
  }
  if (auto* s = root.sub("reliability")) {
    Section sec(*s, "reliability");
    EnduranceProjection& p = cc.projection;
    sec.get("update_rate_hz", p.update_rate_hz);
    sec.get("horizon_years", p.horizon_years);
    std::string basis = to_string(p.basis);
    sec.get("basis", basis);
    p.basis = rate_basis_from_string(basis);
    sec.finish();
  }
  if (auto* s = root.sub("dataset")) {
    Section sec(*s, "dataset");
    DatasetConfig& d = c.dataset;
    sec.get("kind", d.kind);
    sec.get("images", d.images);
    sec.get("labels", d.labels);
    sec.get("test_images", d.test_images);
    sec.get("test_labels", d.test_labels);
    sec.get("train_count", d.train_count);
    sec.get("test_count", d.test_count);
    sec.get("tasks", d.tasks);
    sec.get("train_features", d.train_features);
    sec.get("test_features", d.test_features);
    sec.get("classes_per_task", d.classes_per_task);
    sec.get("steps", d.steps);
    sec.get("features_per_step", d.features_per_step);
    sec.finish();
  }
  if (auto* s = root.sub("latency")) {
    Section sec(*s, "latency");
    LatencyModelParams& l = c.latency;
    sec.get("clock_hz", l.clock_hz);
    sec.get("input_bits", l.input_bits);
    sec.get("stream_cycles_per_bit", l.stream_cycles_per_bit);
    sec.get("adc_conversion_s", l.adc_conversion_s);
    sec.get("tiling", l.tiling);
    sec.get("tiles", l.tiles);
    sec.get("interp_slot_cycles", l.interp_slot_cycles);
    sec.get("fixed_overhead_cycles", l.fixed_overhead_cycles);
    LatencySweepConfig& w = c.latency_sweep;
    sec.get("sweep_bits", w.bits);
    sec.get("sweep_hidden", w.hidden);
    sec.get("n_hidden", w.n_hidden);
    sec.get("n_inputs", w.n_inputs);
    sec.get("calibration_target_s", w.calibration_target_s);
    sec.finish();
  }
  if (auto* s = root.sub("wbs_sweep")) {
    Section sec(*s, "wbs_sweep");
    sec.get("bits", c.wbs_sweep.bits);
    sec.get("sizes", c.wbs_sweep.sizes);
    sec.get("pairs", c.wbs_sweep.pairs);
    sec.finish();
  }
  root.finish();
  // Endurance is a device property; the projection reads it from there.
  cc.projection.endurance_limit = cc.device.endurance_limit;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return parse_run_config(j, path.parent_path());
}

inline nlohmann::json to_json(const RunConfig& c) {
  const ContinualConfig& cc = c.continual;
  nlohmann::json j;
  j["seed"] = cc.seed;
  j["output_dir"] = c.output_dir;
  j["backend"] = to_string(cc.backend);
  if (!cc.seed_overrides.empty()) j["seeds"] = cc.seed_overrides;
  j["network"] = {{"hidden", cc.hidden}, {"reset", cc.reset}, {"update", cc.update}};
  j["trainer"] = {{"learning_rate", cc.train.learning_rate},
                  {"keep_ratio", cc.train.keep_ratio},
                  {"train_biases", cc.train.train_biases},
                  {"epochs", cc.epochs},
                  {"shuffle", cc.shuffle}};
  j["replay"] = {{"enabled", cc.replay.enabled},
                 {"capacity_per_task", cc.replay.capacity_per_task},
                 {"bits", cc.replay.bits},
                 {"per_step", cc.replay.per_step}};
  const DeviceParams& d = cc.device;
  j["device"] = {{"r_on", d.r_on},
                 {"r_off", d.r_off},
                 {"v_set_reset_max", d.v_set_reset_max},
                 {"v_threshold", d.v_threshold},
                 {"cycle_variability", d.cycle_variability},
                 {"write_variability", d.write_variability},
                 {"device_variability", d.device_variability},
                 {"endurance_limit", d.endurance_limit}};
  const AnalogFrontEnd& f = cc.frontend;
  j["frontend"] = {{"pulse_width", f.pulse_width},
                   {"feedback_cap", f.feedback_cap},
                   {"hold_cap", f.hold_cap},
                   {"max_current", f.max_current},
                   {"bit_voltage", f.bit_voltage},
                   {"input_bits", f.input_bits},
                   {"conversion_time", f.conversion_time},
                   {"leakage_resistance", f.leakage_resistance},
                   {"bias_current", f.bias_current}};
  const HardwareConfig& h = cc.hardware;
  j["hardware"] = {{"adc_bits", h.adc_bits},
                   {"hidden_adc_shift", h.hidden_adc_shift},
                   {"hidden_weight_range", h.hidden_weight_range},
                   {"readout_weight_range", h.readout_weight_range},
                   {"variability", h.variability},
                   {"ratio_variability", h.ratio_variability},
                   {"tiling", h.tiling},
                   {"tiles", h.tiles},
                   {"interp_slot_cycles", h.interp_slot_cycles}};
  j["reliability"] = {{"update_rate_hz", cc.projection.update_rate_hz},
                      {"horizon_years", cc.projection.horizon_years},
                      {"basis", to_string(cc.projection.basis)}};
  const DatasetConfig& ds = c.dataset;
  nlohmann::json dj{{"kind", ds.kind}};
  if (ds.kind == "permuted_mnist") {
    dj.update({{"images", ds.images},
               {"labels", ds.labels},
               {"train_count", ds.train_count},
               {"test_count", ds.test_count},
               {"tasks", ds.tasks}});
    if (!ds.test_images.empty()) dj.update({{"test_images", ds.test_images}, {"test_labels", ds.test_labels}});
  } else {
    dj.update({{"train_features", ds.train_features},
               {"test_features", ds.test_features},
               {"classes_per_task", ds.classes_per_task},
               {"steps", ds.steps},
               {"features_per_step", ds.features_per_step}});
  }
  j["dataset"] = dj;
  const LatencyModelParams& l = c.latency;
  j["latency"] = {{"clock_hz", l.clock_hz},
                  {"input_bits", l.input_bits},
                  {"stream_cycles_per_bit", l.stream_cycles_per_bit},
                  {"adc_conversion_s", l.adc_conversion_s},
                  {"tiling", l.tiling},
                  {"tiles", l.tiles},
                  {"interp_slot_cycles", l.interp_slot_cycles},
                  {"fixed_overhead_cycles", l.fixed_overhead_cycles},
                  {"sweep_bits", c.latency_sweep.bits},
                  {"sweep_hidden", c.latency_sweep.hidden},
                  {"n_hidden", c.latency_sweep.n_hidden},
                  {"n_inputs", c.latency_sweep.n_inputs},
                  {"calibration_target_s", c.latency_sweep.calibration_target_s}};
  j["wbs_sweep"] = {{"bits", c.wbs_sweep.bits}, {"sizes", c.wbs_sweep.sizes}, {"pairs", c.wbs_sweep.pairs}};
  return j;
}

// Builds the task stream a config describes.
inline TaskStream load_task_stream(const RunConfig& c) {
  c.check_paths();
  const DatasetConfig& d = c.dataset;
  if (d.kind == "permuted_mnist") {
    LabeledSet all = load_idx(c.resolve(d.images), c.resolve(d.labels));
    LabeledSet train = all.slice(0, d.train_count);
    LabeledSet test = d.test_images.empty()
                          ? all.slice(d.train_count, d.test_count)
                          : load_idx(c.resolve(d.test_images), c.resolve(d.test_labels)).slice(0, d.test_count);
    return build_permuted_mnist(train, test, d.tasks, c.continual.named_seed("permutations"));
  }
  return build_split_features(load_features(c.resolve(d.train_features)),
                              load_features(c.resolve(d.test_features)), d.classes_per_task, d.steps,
                              d.features_per_step);
}

}  // namespace m2ru
