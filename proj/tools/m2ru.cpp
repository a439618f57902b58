#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "m2ru/m2ru.hpp"

namespace fs = std::filesystem;
using namespace m2ru;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out;
  bool dry_run = false;
};

void add_common(CLI::App* app, CommonOptions& o, bool config_required) {
  auto* c = app->add_option("--config", o.config, "JSON run configuration");
  if (config_required) c->required();
  app->add_option("--seed", o.seed, "master seed (overrides the config)");
  app->add_option("--backend", o.backend, "reference or crossbar (overrides the config)");
  app->add_option("--out", o.out, "output directory (overrides the config)");
  app->add_flag("--dry-run", o.dry_run, "validate the configuration and exit");
}

RunConfig load_config(const CommonOptions& o, bool needs_dataset) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base;
  if (!o.config.empty()) {
    std::ifstream f(o.config);
    if (!f) throw ConfigError("cannot open config " + o.config);
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(o.config + ": " + e.what(), e.byte);
    }
    base = fs::path(o.config).parent_path();
  }
  if (o.seed) j["seed"] = *o.seed;
  if (!o.backend.empty()) j["backend"] = o.backend;
  if (!o.out.empty()) j["output_dir"] = o.out;
  RunConfig cfg = parse_run_config(j, base);
  if (needs_dataset) cfg.check_paths();
  return cfg;
}

void say(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

int cmd_run(const CommonOptions& o, std::optional<std::uint64_t> stop_after, const std::string& checkpoint_out,
            const std::string& resume) {
  RunConfig cfg = load_config(o, true);
  if (o.dry_run) {
    say("config ok");
    return 0;
  }
  const TaskStream stream = load_task_stream(cfg);
  std::optional<ContinualRun> run;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (ck.config != to_json(cfg)) {
      throw CheckpointError("checkpoint " + resume + " was written with a different configuration");
    }
    run.emplace(stream, cfg.continual, std::move(ck.state));
  } else {
    run.emplace(stream, cfg.continual);
  }

  std::uint64_t budget = stop_after.value_or(std::numeric_limits<std::uint64_t>::max());
  std::size_t reported = run->state().accuracy.rows.size();
  while (!run->done() && budget > 0) {
    run->step();
    --budget;
    const auto& rows = run->state().accuracy.rows;
    if (rows.size() > reported) {
      reported = rows.size();
      std::string line = "task " + std::to_string(reported - 1) + " done:";
      for (double a : rows.back()) line += " " + fmt9(a);
      say(line);
    }
  }
  if (!checkpoint_out.empty()) {
    save_checkpoint(checkpoint_out, cfg, run->state());
    say("checkpoint written to " + checkpoint_out);
  }
  write_run_outputs(cfg.output_dir, cfg, *run);
  if (run->done()) say("mean accuracy " + fmt9(run->mean_accuracy()));
  say("outputs in " + cfg.output_dir);
  return 0;
}

double rel_l2(const Vector& approx, const Vector& exact) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    num += (approx[i] - exact[i]) * (approx[i] - exact[i]);
    den += exact[i] * exact[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

int cmd_wbs_sweep(const CommonOptions& o) {
  RunConfig cfg = load_config(o, false);
  if (o.dry_run) {
    say("config ok");
    return 0;
  }
  const ContinualConfig& cc = cfg.continual;
  XorShift32 rng(cc.named_seed("wbs_sweep"));
  std::string csv = "bits,size,stochastic_rel_err,truncation_rel_err,wbs_ideal_rel_err,wbs_device_rel_err\n";
  for (std::size_t n : cfg.wbs_sweep.sizes) {
    for (unsigned bits : cfg.wbs_sweep.bits) {
      double sto = 0, tru = 0, ideal = 0, dev = 0;
      AnalogFrontEnd fe = cc.frontend;
      fe.input_bits = bits;
      for (std::size_t p = 0; p < cfg.wbs_sweep.pairs; ++p) {
        Matrix w(n, n);
        for (double& v : w.flat()) v = rng.uniform(-1.0, 1.0);
        Vector x(n), xs(n), xt(n);
        for (std::size_t i = 0; i < n; ++i) {
          x[i] = rng.uniform01();
          xs[i] = dequantize(stochastic_quantize(x[i], bits, rng.uniform01()), bits);
          xt[i] = dequantize(truncate_quantize(x[i], bits), bits);
        }
        Vector exact(n, 0.0), ys(n, 0.0), yt(n, 0.0);
        accumulate_vec_mat(x, w, exact);
        accumulate_vec_mat(xs, w, ys);
        accumulate_vec_mat(xt, w, yt);
        sto += rel_l2(ys, exact);
        tru += rel_l2(yt, exact);

        const StreamedInput in = encode_inputs(x, bits);
        const CrossbarArray xb = map_weights(w, cc.device.ideal(), 1.0);
        Vector v = wbs_matvec(xb, fe, in, ReadNoise{});
        const double unit = wbs_volts_per_unit(xb, fe);
        for (double& e : v) e /= unit;
        ideal += rel_l2(v, exact);

        CrossbarArray noisy = map_weights(w, cc.device, 1.0);
        noisy.draw_device_offsets(cc.device.device_variability, rng);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < n; ++c)
            noisy.set_conductance(r, c, noisy.reference_conductance(r) +
                                            (noisy.conductance(r, c) - noisy.reference_conductance(r)) *
                                                noisy.device_offsets()(r, c));
        Vector vn = wbs_matvec(noisy, fe, in, ReadNoise{cc.device.cycle_variability, &rng});
        for (double& e : vn) e /= unit;
        dev += rel_l2(vn, exact);
      }
      const double k = static_cast<double>(cfg.wbs_sweep.pairs);
      csv += std::to_string(bits) + ',' + std::to_string(n) + ',' + fmt9(sto / k) + ',' + fmt9(tru / k) + ',' +
             fmt9(ideal / k) + ',' + fmt9(dev / k) + '\n';
    }
  }
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "wbs_sweep.csv", csv);
  write_text(fs::path(cfg.output_dir) / "config.json", to_json(cfg).dump(2) + "\n");
  say("outputs in " + cfg.output_dir);
  return 0;
}

int cmd_reliability(const CommonOptions& o) {
  RunConfig cfg = load_config(o, true);
  if (o.dry_run) {
    say("config ok");
    return 0;
  }
  const TaskStream stream = load_task_stream(cfg);
  ContinualConfig dense = cfg.continual;
  dense.train.keep_ratio = 1.0;
  ContinualRun sparse_run(stream, cfg.continual);
  sparse_run.run();
  say("sparsified run done");
  ContinualRun dense_run(stream, dense);
  dense_run.run();
  say("dense run done");
  const EnduranceProjection& proj = cfg.continual.projection;
  const SparsificationReport r = sparsification_comparison(dense_run.write_stats(), sparse_run.write_stats(), proj);

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_text(dir / "write_cdf_dense.csv", cdf_csv(r.cdf_before));
  write_text(dir / "write_cdf_sparse.csv", cdf_csv(r.cdf_after));
  nlohmann::json j{{"keep_ratio", num9(cfg.continual.train.keep_ratio)},
                   {"mean_writes_dense", num9(r.mean_before)},
                   {"mean_writes_sparse", num9(r.mean_after)},
                   {"mean_reduction_pct", num9(r.mean_reduction_pct)},
                   {"overstress_dense", num9(r.overstress_before)},
                   {"overstress_sparse", num9(r.overstress_after)},
                   {"horizon_years", num9(proj.horizon_years)},
                   {"lifespan_dense", lifespan_json(r.lifespan_before, proj.basis)},
                   {"lifespan_sparse", lifespan_json(r.lifespan_after, proj.basis)},
                   {"mean_accuracy_dense", num9(dense_run.mean_accuracy())},
                   {"mean_accuracy_sparse", num9(sparse_run.mean_accuracy())}};
  write_text(dir / "reliability.json", j.dump(2) + "\n");
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  say("mean writes per device: dense " + fmt9(r.mean_before) + ", sparse " + fmt9(r.mean_after) + " (" +
      fmt9(r.mean_reduction_pct) + "% fewer)");
  return 0;
}

int cmd_latency(const CommonOptions& o, bool calibrate) {
  RunConfig cfg = load_config(o, false);
  if (o.dry_run) {
    say("config ok");
    return 0;
  }
  LatencyModelParams p = cfg.latency;
  const LatencySweepConfig& s = cfg.latency_sweep;
  if (calibrate) {
    p.fixed_overhead_cycles = calibrate_overhead(p, s.n_hidden, s.n_inputs, s.calibration_target_s);
    say("calibrated fixed_overhead_cycles = " + std::to_string(p.fixed_overhead_cycles));
  }
  std::string bits_csv = "input_bits,cycles,seconds\n";
  for (unsigned b : s.bits) {
    LatencyModelParams q = p;
    q.input_bits = b;
    const auto lb = estimate_latency(q, s.n_hidden, s.n_inputs);
    bits_csv += std::to_string(b) + ',' + std::to_string(lb.total_cycles) + ',' + fmt9(lb.seconds) + '\n';
  }
  std::string hidden_csv = "hidden,tiling,interp_cycles,cycles,seconds\n";
  for (bool tiling : {true, false}) {
    for (std::size_t nh : s.hidden) {
      LatencyModelParams q = p;
      q.tiling = tiling;
      const auto lb = estimate_latency(q, nh, s.n_inputs);
      hidden_csv += std::to_string(nh) + ',' + (tiling ? "1" : "0") + ',' + std::to_string(lb.interp_cycles) + ',' +
                    std::to_string(lb.total_cycles) + ',' + fmt9(lb.seconds) + '\n';
    }
  }
  const auto ref = estimate_latency(p, s.n_hidden, s.n_inputs);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_text(dir / "latency_bits.csv", bits_csv);
  write_text(dir / "latency_hidden.csv", hidden_csv);
  nlohmann::json j{{"fixed_overhead_cycles", p.fixed_overhead_cycles},
                   {"n_hidden", s.n_hidden},
                   {"input_bits", p.input_bits},
                   {"stream_cycles", ref.stream_cycles},
                   {"adc_cycles", ref.adc_cycles},
                   {"interp_cycles", ref.interp_cycles},
                   {"total_cycles", ref.total_cycles},
                   {"seconds", num9(ref.seconds)}};
  write_text(dir / "latency.json", j.dump(2) + "\n");
  say("latency at n_h=" + std::to_string(s.n_hidden) + ": " + std::to_string(ref.total_cycles) + " cycles, " +
      fmt9(ref.seconds) + " s");
  return 0;
}

int cmd_checkpoint_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const RunState& s = ck.state;
  nlohmann::json j{{"format_version", kCheckpointVersion},
                   {"backend", std::holds_alternative<ReferenceBackend>(s.backend) ? "reference" : "crossbar"},
                   {"task", s.task},
                   {"epoch", s.epoch},
                   {"position", s.position},
                   {"updates", s.updates},
                   {"completed_tasks", s.accuracy.rows.size()},
                   {"tasks", s.accuracy.tasks},
                   {"replay_occupancy", s.buffer.occupancy()},
                   {"replay_offers", s.sampler.seen()},
                   {"config", ck.config}};
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

int cmd_checkpoint_verify(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint not found: " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const Checkpoint ck = decode_checkpoint(bytes);
  if (encode_checkpoint(ck.config, ck.state) != bytes) {
    throw CheckpointError("checkpoint does not re-encode to identical bytes");
  }
  std::printf("ok\n");
  return 0;
}

const char* error_kind(const Error& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const SeedError*>(&e)) return "seed";
  if (dynamic_cast<const OverrangeError*>(&e)) return "overrange";
  return "internal";
}

int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SeedError*>(&e)) return 2;
  if (dynamic_cast<const ParseError*>(&e)) return 3;
  if (dynamic_cast<const CheckpointError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"m2ru: memristive MiRU accelerator simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts, sweep_opts, rel_opts, lat_opts;
  std::optional<std::uint64_t> stop_after;
  std::string checkpoint_out, resume;
  auto* run = app.add_subcommand("run", "continual-learning experiment");
  add_common(run, run_opts, true);
  run->add_option("--stop-after", stop_after, "stop after this many training steps");
  run->add_option("--checkpoint", checkpoint_out, "write a checkpoint when the run stops");
  run->add_option("--resume", resume, "continue from a checkpoint");

  auto* sweep = app.add_subcommand("wbs-sweep", "quantized and streamed matrix-vector error sweep");
  add_common(sweep, sweep_opts, false);

  auto* rel = app.add_subcommand("reliability", "write CDF and lifespan with and without sparsification");
  add_common(rel, rel_opts, true);

  bool calibrate = false;
  auto* lat = app.add_subcommand("latency", "latency model sweeps");
  add_common(lat, lat_opts, false);
  lat->add_flag("--calibrate", calibrate, "fit the fixed overhead to calibration_target_s first");

  std::string ck_path;
  auto* ck = app.add_subcommand("checkpoint", "checkpoint tools");
  ck->require_subcommand(1);
  auto* inspect = ck->add_subcommand("inspect", "print checkpoint contents");
  inspect->add_option("path", ck_path)->required();
  auto* verify = ck->add_subcommand("verify", "check integrity and re-encoding");
  verify->add_option("path", ck_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts, stop_after, checkpoint_out, resume);
    if (*sweep) return cmd_wbs_sweep(sweep_opts);
    if (*rel) return cmd_reliability(rel_opts);
    if (*lat) return cmd_latency(lat_opts, calibrate);
    if (*inspect) return cmd_checkpoint_inspect(ck_path);
    if (*verify) return cmd_checkpoint_verify(ck_path);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error [parse @%zu]: %s\n", e.location(), e.what());
    return exit_code(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", error_kind(e), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [system]: %s\n", e.what());
    return 1;
  }
  return 0;
}
