#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "m2ru/config.hpp"
#include "m2ru/harness.hpp"
#include "m2ru/latency.hpp"
#include "m2ru/reliability.hpp"

namespace m2ru {

// Every float leaves the program with nine significant digits.
inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// JSON number carrying the nine-digit value.
inline nlohmann::json num9(double v) {
  if (!std::isfinite(v)) return fmt9(v);
  return std::stod(fmt9(v));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
  if (!f) throw ConfigError("write failed: " + path.string());
}

inline std::string steps_csv(const RunState& s) {
  std::string out = "step,task,loss,weight_writes,replayed\n";
  for (const auto& l : s.steps) {
    out += std::to_string(l.step) + ',' + std::to_string(l.task) + ',' + fmt9(l.loss) + ',' +
           std::to_string(l.weight_writes) + ',' + std::to_string(l.replayed) + '\n';
  }
  return out;
}

// One row per finished task; entries for tasks not yet seen are empty.
inline std::string accuracy_csv(const AccuracyMatrix& r) {
  std::string out = "after_task";
  for (std::size_t i = 0; i < r.tasks; ++i) out += ",task_" + std::to_string(i);
  out += '\n';
  for (std::size_t j = 0; j < r.rows.size(); ++j) {
    out += std::to_string(j);
    for (std::size_t i = 0; i < r.tasks; ++i) out += ',' + (i < r.rows[j].size() ? fmt9(r.rows[j][i]) : "");
    out += '\n';
  }
  return out;
}

inline std::string cdf_csv(const std::vector<CdfPoint>& cdf) {
  std::string out = "writes,fraction\n";
  for (const auto& p : cdf) out += std::to_string(p.writes) + ',' + fmt9(p.fraction) + '\n';
  return out;
}

inline nlohmann::json lifespan_json(const LifespanEstimate& e, RateBasis basis) {
  return {{"basis", to_string(basis)},
          {"update_rate_hz", num9(e.update_rate_hz)},
          {"endurance_limit", num9(e.endurance_limit)},
          {"writes_per_device_per_update", num9(e.writes_per_device_per_update)},
          {"seconds", num9(e.seconds)},
          {"years", num9(e.years)},
          {"unbounded", e.unbounded}};
}

inline nlohmann::json run_summary(const ContinualRun& run, const LatencyModelParams& latency) {
  const RunState& s = run.state();
  const ContinualConfig& cfg = run.config();
  nlohmann::json j;
  j["backend"] = to_string(cfg.backend);
  j["tasks"] = s.accuracy.tasks;
  j["complete"] = run.done();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : s.accuracy.rows) {
    nlohmann::json r = nlohmann::json::array();
    for (double v : row) r.push_back(num9(v));
    rows.push_back(r);
  }
  j["accuracy_matrix"] = rows;
  j["mean_accuracy"] = run.done() ? num9(run.mean_accuracy()) : nlohmann::json(nullptr);
  j["updates"] = s.updates;
  j["sparsified_weight_writes"] = s.weight_writes;

  const WriteStats ws = run.write_stats();
  std::uint64_t device_writes = 0;
  for (auto c : ws.counts) device_writes += c;
  j["device_writes"] = device_writes;
  j["devices"] = ws.counts.size();
  j["mean_writes_per_device"] = num9(ws.mean);
  j["overstress_fraction"] = num9(ws.overstress_fraction);
  j["horizon_years"] = num9(cfg.projection.horizon_years);
  j["lifespan"] = lifespan_json(
      project_lifespan(ws, cfg.projection.update_rate_hz, cfg.projection.endurance_limit, cfg.projection.basis),
      cfg.projection.basis);
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& t : s.snapshots) {
    snaps.push_back({{"task", t.task},
                     {"updates", t.updates},
                     {"device_writes", t.total_writes},
                     {"mean_writes_per_device", num9(t.mean_writes)},
                     {"overstress_fraction", num9(t.overstress_fraction)}});
  }
  j["write_snapshots"] = snaps;
  j["replay"] = {{"occupancy", s.buffer.occupancy()},
                 {"capacity", s.buffer.capacity()},
                 {"footprint_bytes", s.buffer.footprint_bytes()},
                 {"offers", s.sampler.seen()}};
  if (const auto* hw = std::get_if<CrossbarNetwork>(&s.backend)) {
    j["saturation_events"] = hw->hidden_array().saturation_events() + hw->readout_array().saturation_events();
    j["interpolation_cycles_per_step"] = hw->interpolation_cycles_per_step();
  }
  const LatencyBreakdown lb = estimate_latency(latency, s.dims.hidden, s.dims.inputs);
  j["latency"] = {{"cycles_per_step", lb.total_cycles},
                  {"seconds_per_step", num9(lb.seconds)},
                  {"seconds_per_sequence", num9(lb.seconds * static_cast<double>(s.dims.steps))}};
  return j;
}

// steps.csv, accuracy_matrix.csv, write_cdf.csv, summary.json, config.json.
inline void write_run_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const ContinualRun& run) {
  std::filesystem::create_directories(dir);
  write_text(dir / "steps.csv", steps_csv(run.state()));
  write_text(dir / "accuracy_matrix.csv", accuracy_csv(run.state().accuracy));
  write_text(dir / "write_cdf.csv", cdf_csv(run.write_stats().cdf));
  write_text(dir / "summary.json", run_summary(run, cfg.latency).dump(2) + "\n");
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
}

}  // namespace m2ru
