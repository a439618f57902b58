#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2ru/errors.hpp"

namespace m2ru {

using Vector = std::vector<double>;

// Dense row-major matrix. Rows index the "from" side of a connection and
// columns the "to" side, so a layer computes y = x * M with x a row vector.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

// out[j] += sum_i x[i] * m(i, j)
inline void accumulate_vec_mat(std::span<const double> x, const Matrix& m, std::span<double> out) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += xi * r[j];
  }
}

// m += scale * a^T b
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b,
                      double scale = 1.0) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double ai = scale * a[i];
    if (ai == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += ai * b[j];
  }
}

inline std::size_t count_nonzero(std::span<const double> v) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; }));
}

}  // namespace m2ru

namespace m2ru {

// Per-device event counters laid out like the matrix they shadow.
struct CountGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint64_t> counts;

  CountGrid() = default;
  CountGrid(std::size_t r, std::size_t c) : rows(r), cols(c), counts(r * c, 0) {}

  std::uint64_t& operator()(std::size_t r, std::size_t c) { return counts[r * cols + c]; }
  std::uint64_t operator()(std::size_t r, std::size_t c) const { return counts[r * cols + c]; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  friend bool operator==(const CountGrid&, const CountGrid&) = default;
};

}  // namespace m2ru
