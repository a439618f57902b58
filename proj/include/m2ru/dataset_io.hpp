#pragma once

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "m2ru/errors.hpp"
#include "m2ru/harness.hpp"
#include "m2ru/tensor.hpp"

namespace m2ru {

// Reads a whole file; gzip input is inflated transparently.
inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("file not found: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw ConfigError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string why = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw ParseError("cannot decompress " + path.string() + ": " + why, out.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {
inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                               const std::string& what) {
  if (off + 4 > b.size()) {
    throw ParseError(what + ": header truncated at byte " + std::to_string(b.size()) +
                         " (need " + std::to_string(off + 4) + " bytes)",
                     b.size());
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void check_magic(const std::vector<std::uint8_t>& b, std::uint32_t want, const std::string& what) {
  const std::uint32_t magic = read_be32(b, 0, what);
  if (magic != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x (expected 0x%08x)", magic, want);
    throw ParseError(what + ": " + buf + " at byte 0", 0);
  }
}

inline void check_payload(const std::vector<std::uint8_t>& b, std::size_t header, std::size_t want,
                          const std::string& what) {
  const std::size_t have = b.size() - header;
  if (have < want) {
    throw ParseError(what + ": truncated payload, expected " + std::to_string(want) +
                         " bytes after the header but found " + std::to_string(have) +
                         " (file ends at byte " + std::to_string(b.size()) + ")",
                     b.size());
  }
  if (have > want) {
    throw ParseError(what + ": " + std::to_string(have - want) + " trailing bytes after the payload",
                     header + want);
  }
}
}  // namespace detail

// Images scaled to [0,1]; labels are left empty.
inline LabeledSet parse_idx_images(const std::vector<std::uint8_t>& b, const std::string& what = "idx images") {
  detail::check_magic(b, kIdxImagesMagic, what);
  const std::size_t count = detail::read_be32(b, 4, what);
  const std::size_t rows = detail::read_be32(b, 8, what);
  const std::size_t cols = detail::read_be32(b, 12, what);
  detail::check_payload(b, 16, count * rows * cols, what);
  LabeledSet s{Matrix(count, rows * cols), {}, rows, cols};
  auto flat = s.samples.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = b[16 + i] / 255.0;
  return s;
}

inline std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& b, const std::string& what = "idx labels") {
  detail::check_magic(b, kIdxLabelsMagic, what);
  const std::size_t count = detail::read_be32(b, 4, what);
  detail::check_payload(b, 8, count, what);
  return std::vector<int>(b.begin() + 8, b.end());
}

inline LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  LabeledSet s = parse_idx_images(read_file_bytes(images), images.string());
  std::vector<int> l = parse_idx_labels(read_file_bytes(labels), labels.string());
  if (l.size() != s.size()) {
    throw ParseError(labels.string() + ": label count " + std::to_string(l.size()) +
                         " does not match image count " + std::to_string(s.size()),
                     4);
  }
  s.labels = std::move(l);
  return s;
}

inline std::vector<std::uint8_t> encode_idx_images(const std::vector<std::vector<std::uint8_t>>& images,
                                                   std::uint32_t rows, std::uint32_t cols) {
  std::vector<std::uint8_t> b;
  auto be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  };
  be32(kIdxImagesMagic);
  be32(static_cast<std::uint32_t>(images.size()));
  be32(rows);
  be32(cols);
  for (const auto& img : images) {
    require_size(img.size(), std::size_t{rows} * cols, "idx image");
    b.insert(b.end(), img.begin(), img.end());
  }
  return b;
}

inline std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(kIdxLabelsMagic >> s));
  const auto n = static_cast<std::uint32_t>(labels.size());
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(n >> s));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw ConfigError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Delimited feature files: one sample per line, features then an integer
// label, separated by commas (whitespace around fields is ignored).
// ---------------------------------------------------------------------------

inline LabeledSet parse_features(std::istream& in, const std::string& what = "features") {
  LabeledSet s;
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError(what + ":" + std::to_string(line_no) + ": " + why, line_no);
  };
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    row.clear();
    std::size_t start = 0;
    while (true) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      std::size_t a = line.find_first_not_of(" \t", start);
      std::size_t z = line.find_last_not_of(" \t", end == 0 ? 0 : end - 1);
      if (a == std::string::npos || a >= end || z < a) throw fail("empty field");
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(line.data() + a, line.data() + z + 1, v);
      if (ec != std::errc() || ptr != line.data() + z + 1) {
        throw fail("non-numeric field '" + line.substr(a, z + 1 - a) + "'");
      }
      if (!std::isfinite(v)) throw fail("non-finite field");
      row.push_back(v);
      if (end == line.size()) break;
      start = end + 1;
    }
    if (row.size() < 2) throw fail("need at least one feature and a label");
    const double label = row.back();
    if (label != std::floor(label) || label < 0 || label > 1e6) throw fail("label must be a non-negative integer");
    if (dim == 0) dim = row.size() - 1;
    if (row.size() - 1 != dim) {
      throw fail("ragged row with " + std::to_string(row.size() - 1) + " features, expected " +
                 std::to_string(dim));
    }
    values.insert(values.end(), row.begin(), row.end() - 1);
    s.labels.push_back(static_cast<int>(label));
  }
  s.samples = Matrix(s.labels.size(), dim);
  std::copy(values.begin(), values.end(), s.samples.flat().begin());
  return s;
}

inline LabeledSet load_features(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  return parse_features(in, path.string());
}

inline void save_features(const std::filesystem::path& path, const LabeledSet& s) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (double v : s.samples.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      f << buf;
    }
    f << s.labels[i] << '\n';
  }
  if (!f) throw ConfigError("write failed: " + path.string());
}

}  // namespace m2ru
