#pragma once

#include <filesystem>
#include <string>

#include "m2ru/m2ru.hpp"

namespace m2ru::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, double lo, double hi, XorShift32& rng) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.uniform(lo, hi);
  return m;
}

inline Example random_example(std::size_t steps, std::size_t features, std::size_t classes,
                              XorShift32& rng) {
  return {random_matrix(steps, features, 0.0, 1.0, rng), static_cast<int>(rng.next() % classes)};
}

inline NetworkParams small_net(std::size_t nx, std::size_t nh, std::size_t ny, std::uint32_t seed,
                               double reset = 0.5, double update = 0.5) {
  NetworkParams p = init_network({nx, nh, ny, 1}, reset, update, seed, seed + 1);
  XorShift32 rng(seed + 2);
  for (double& b : p.hidden_bias) b = rng.uniform(-0.2, 0.2);
  for (double& b : p.readout_bias) b = rng.uniform(-0.2, 0.2);
  return p;
}

// Synthetic images: class c lights up row c of a rows x cols grid, plus noise.
inline LabeledSet striped_images(std::size_t n, std::size_t rows, std::size_t cols, int classes,
                                 std::uint32_t seed) {
  XorShift32 rng(seed);
  LabeledSet s{Matrix(n, rows * cols), {}, rows, cols};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    auto row = s.samples.row(i);
    for (std::size_t p = 0; p < rows * cols; ++p) row[p] = 0.2 * rng.uniform01();
    for (std::size_t c = 0; c < cols; ++c) row[static_cast<std::size_t>(label) % rows * cols + c] = 0.9;
    s.labels.push_back(label);
  }
  return s;
}

inline ContinualConfig small_config(BackendKind backend = BackendKind::reference) {
  ContinualConfig c;
  c.hidden = 12;
  c.train = {0.05, 0.43, true};
  c.replay.capacity_per_task = 8;
  c.backend = backend;
  c.seed = 7;
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("m2ru_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace m2ru::testing
