#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "m2ru/config.hpp"
#include "m2ru/dataset_io.hpp"
#include "m2ru/harness.hpp"

namespace m2ru {

// Layout: "M2RUCKPT", u32 format version, payload, u32 CRC-32 of everything
// before it. Integers are little-endian; doubles are stored as their IEEE-754
// bit patterns so a round trip is exact.
inline constexpr char kCheckpointMagic[8] = {'M', '2', 'R', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { b_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    b_.insert(b_.end(), s.begin(), s.end());
  }
  void bytes(const std::vector<std::uint8_t>& v) {
    u64(v.size());
    b_.insert(b_.end(), v.begin(), v.end());
  }
  void vec(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void mat(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double x : m.flat()) f64(x);
  }
  void grid(const CountGrid& g) {
    u64(g.rows);
    u64(g.cols);
    for (auto c : g.counts) u64(c);
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    b_.insert(b_.end(), c, c + n);
  }
  std::vector<std::uint8_t>& data() { return b_; }

 private:
  std::vector<std::uint8_t> b_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::size_t begin, std::size_t end)
      : b_(b), pos_(begin), end_(end) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t elem_bytes) {
    const std::uint64_t n = u64();
    if (elem_bytes > 0 && n > (end_ - pos_) / elem_bytes) fail("length field " + std::to_string(n) + " overruns the file");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    const auto* p = take(n);
    return std::string(p, p + n);
  }
  std::vector<std::uint8_t> bytes() {
    const std::size_t n = count(1);
    const auto* p = take(n);
    return std::vector<std::uint8_t>(p, p + n);
  }
  Vector vec() {
    Vector v(count(8));
    for (double& x : v) x = f64();
    return v;
  }
  Matrix mat() {
    const std::size_t r = count(0), c = count(0);
    if (c != 0 && r > (end_ - pos_) / 8 / c) fail("matrix overruns the file");
    Matrix m(r, c);
    for (double& x : m.flat()) x = f64();
    return m;
  }
  CountGrid grid() {
    const std::size_t r = count(0), c = count(0);
    if (c != 0 && r > (end_ - pos_) / 8 / c) fail("counter grid overruns the file");
    CountGrid g(r, c);
    for (auto& x : g.counts) x = u64();
    return g;
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == end_; }

  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError("corrupt checkpoint at byte " + std::to_string(pos_) + ": " + why);
  }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > end_ - pos_) fail("unexpected end of data");
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_;
  std::size_t end_;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_array(ByteWriter& w, const CrossbarArray& a) {
  w.mat(a.conductances());
  w.mat(a.device_offsets());
  w.grid(a.write_counts());
  w.u64(a.saturation_events());
}

inline void read_array(ByteReader& r, CrossbarArray& a) {
  Matrix g = r.mat();
  Matrix off = r.mat();
  CountGrid writes = r.grid();
  const std::uint64_t sat = r.u64();
  try {
    a.restore(std::move(g), std::move(off), std::move(writes), sat);
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("crossbar shape mismatch: ") + e.what());
  }
}

}  // namespace detail

struct Checkpoint {
  nlohmann::json config;  // echo of the RunConfig the run was started with
  RunState state;
};

inline std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& config, const RunState& s) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(config.dump());
  w.u64(s.dims.inputs);
  w.u64(s.dims.hidden);
  w.u64(s.dims.outputs);
  w.u64(s.dims.steps);
  w.u64(s.accuracy.tasks);

  if (const auto* ref = std::get_if<ReferenceBackend>(&s.backend)) {
    const NetworkParams& p = ref->params();
    w.u8(static_cast<std::uint8_t>(BackendKind::reference));
    w.mat(p.feedback_matrix());
    w.mat(p.input_weights);
    w.mat(p.recurrent_weights);
    w.mat(p.readout_weights);
    w.vec(p.hidden_bias);
    w.vec(p.readout_bias);
    w.f64(p.reset);
    w.f64(p.update);
    w.grid(ref->hidden_writes());
    w.grid(ref->readout_writes());
  } else {
    const auto& hw = std::get<CrossbarNetwork>(s.backend);
    w.u8(static_cast<std::uint8_t>(BackendKind::crossbar));
    w.mat(*hw.read_params().feedback);
    detail::write_array(w, hw.hidden_array());
    detail::write_array(w, hw.readout_array());
    w.vec(hw.hidden_bias());
    w.vec(hw.readout_bias());
    w.u32(hw.read_rng().state());
    w.u32(hw.write_rng().state());
    w.vec(hw.front_end().bit_ratios());
  }

  w.u64(s.sampler.capacity());
  w.u64(s.sampler.seen());
  w.u32(s.sampler.rng().state());
  w.u64(s.sampler.last_draw());
  w.u64(s.buffer.capacity());
  w.u64(s.buffer.occupancy());
  for (const auto& q : s.buffer.slots()) {
    w.u64(q.steps());
    w.u64(q.features());
    w.u32(q.bits());
    w.i64(q.label());
    w.bytes(q.packed());
  }
  w.u32(s.quantizer_rng.state());
  w.u32(s.replay_rng.state());
  w.u32(s.shuffle_rng.state());

  w.u32(s.task);
  w.u32(s.epoch);
  w.u64(s.position);
  w.u64(s.order.size());
  for (auto o : s.order) w.u32(o);
  w.u64(s.accuracy.rows.size());
  for (const auto& row : s.accuracy.rows) w.vec(row);
  w.u64(s.steps.size());
  for (const auto& l : s.steps) {
    w.u64(l.step);
    w.u32(l.task);
    w.f64(l.loss);
    w.u64(l.weight_writes);
    w.u32(l.replayed);
  }
  w.u64(s.snapshots.size());
  for (const auto& t : s.snapshots) {
    w.u32(t.task);
    w.u64(t.updates);
    w.u64(t.total_writes);
    w.f64(t.mean_writes);
    w.f64(t.overstress_fraction);
  }
  w.u64(s.updates);
  w.u64(s.weight_writes);

  auto& b = w.data();
  w.u32(detail::crc32_of(b.data(), b.size()));
  return std::move(b);
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& b) {
  constexpr std::size_t header = sizeof kCheckpointMagic + 4;
  if (b.size() < header + 4 || std::memcmp(b.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t body_end = b.size() - 4;
  detail::ByteReader trailer(b, body_end, b.size());
  const std::uint32_t stored_crc = trailer.u32();
  const std::uint32_t crc = detail::crc32_of(b.data(), body_end);
  if (crc != stored_crc) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "checkpoint checksum mismatch (stored 0x%08x, computed 0x%08x)",
                  stored_crc, crc);
    throw CheckpointError(buf);
  }
  detail::ByteReader r(b, sizeof kCheckpointMagic, body_end);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("incompatible checkpoint format version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }

  nlohmann::json config;
  try {
    config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("embedded config: ") + e.what());
  }
  RunConfig cfg = parse_run_config(config);
  NetworkDims dims;
  dims.inputs = r.count(0);
  dims.hidden = r.count(0);
  dims.outputs = r.count(0);
  dims.steps = r.count(0);
  const std::size_t tasks = r.count(0);
  if (dims.hidden != cfg.continual.hidden) r.fail("hidden size disagrees with the embedded config");

  // Rebuild the seeded initial state, then overwrite everything that evolves.
  RunState s = initial_run_state(dims, tasks, cfg.continual);
  const auto kind = static_cast<BackendKind>(r.u8());
  if (kind != cfg.continual.backend) r.fail("backend disagrees with the embedded config");
  const Matrix feedback = r.mat();
  if (kind == BackendKind::reference) {
    auto& ref = std::get<ReferenceBackend>(s.backend);
    if (feedback != ref.params().feedback_matrix()) r.fail("feedback matrix does not match its seed");
    NetworkParams p = ref.params();
    p.input_weights = r.mat();
    p.recurrent_weights = r.mat();
    p.readout_weights = r.mat();
    p.hidden_bias = r.vec();
    p.readout_bias = r.vec();
    p.reset = r.f64();
    p.update = r.f64();
    CountGrid hidden = r.grid();
    CountGrid readout = r.grid();
    try {
      p.validate();
    } catch (const Error& e) {
      r.fail(e.what());
    }
    if (hidden.rows != dims.inputs + dims.hidden || hidden.cols != dims.hidden ||
        readout.rows != dims.hidden || readout.cols != dims.outputs) {
      r.fail("write counter shape mismatch");
    }
    ref.restore(std::move(p), std::move(hidden), std::move(readout));
  } else {
    auto& hw = std::get<CrossbarNetwork>(s.backend);
    if (feedback != *hw.read_params().feedback) r.fail("feedback matrix does not match its seed");
    detail::read_array(r, hw.mutable_hidden_array());
    detail::read_array(r, hw.mutable_readout_array());
    Vector hb = r.vec();
    Vector ob = r.vec();
    const std::uint32_t read_state = r.u32();
    const std::uint32_t write_state = r.u32();
    Vector ratios = r.vec();
    try {
      hw.restore_digital(std::move(hb), std::move(ob), XorShift32(read_state), XorShift32(write_state),
                         std::move(ratios));
    } catch (const Error& e) {
      r.fail(e.what());
    }
  }

  const std::size_t capacity = r.count(0);
  if (capacity != s.sampler.capacity()) r.fail("replay capacity disagrees with the embedded config");
  const std::uint64_t seen = r.u64();
  const std::uint32_t sampler_state = r.u32();
  const std::uint64_t last_draw = r.u64();
  try {
    s.sampler.restore(seen, XorShift32(sampler_state), last_draw);
  } catch (const SeedError& e) {
    r.fail(e.what());
  }
  if (r.count(0) != s.buffer.capacity()) r.fail("buffer capacity mismatch");
  const std::size_t occupancy = r.count(0);
  if (occupancy > s.buffer.capacity()) r.fail("buffer occupancy exceeds capacity");
  for (std::size_t i = 0; i < occupancy; ++i) {
    const std::size_t steps = r.count(0), features = r.count(0);
    const unsigned bits = r.u32();
    const std::int64_t label = r.i64();
    try {
      s.buffer.store(i, QuantizedExample::from_packed(steps, features, bits, static_cast<int>(label), r.bytes()));
    } catch (const Error& e) {
      r.fail(e.what());
    }
  }
  try {
    s.quantizer_rng = XorShift32(r.u32());
    s.replay_rng = XorShift32(r.u32());
    s.shuffle_rng = XorShift32(r.u32());
  } catch (const SeedError& e) {
    r.fail(e.what());
  }

  s.task = r.u32();
  s.epoch = r.u32();
  s.position = r.u64();
  s.order.resize(r.count(4));
  for (auto& o : s.order) o = r.u32();
  s.accuracy.rows.resize(r.count(8));
  for (auto& row : s.accuracy.rows) row = r.vec();
  s.steps.resize(r.count(32));
  for (auto& l : s.steps) {
    l.step = r.u64();
    l.task = r.u32();
    l.loss = r.f64();
    l.weight_writes = r.u64();
    l.replayed = r.u32();
  }
  s.snapshots.resize(r.count(36));
  for (auto& t : s.snapshots) {
    t.task = r.u32();
    t.updates = r.u64();
    t.total_writes = r.u64();
    t.mean_writes = r.f64();
    t.overstress_fraction = r.f64();
  }
  s.updates = r.u64();
  s.weight_writes = r.u64();
  if (!r.at_end()) r.fail("trailing bytes before the checksum");
  if (s.task > tasks || (s.task < tasks && s.position >= s.order.size())) r.fail("cursor out of range");
  return Checkpoint{std::move(config), std::move(s)};
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const RunState& s) {
  write_bytes(path, encode_checkpoint(to_json(cfg), s));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(b);
}

}  // namespace m2ru
