// sutalm/common.hpp

// Shared primitives: error types, a dense row-major matrix, log-domain
// arithmetic and deterministic seeding helpers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sutalm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Configuration file is malformed or contains unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Adaptation produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Pre-softmax frame scores, one row per frame and one column per class.
class LogitMatrix : public Matrix {
 public:
  LogitMatrix() = default;
  explicit LogitMatrix(Matrix values) : Matrix(std::move(values)) {}
  LogitMatrix(std::size_t frames, std::size_t classes, double fill = 0.0)
      : Matrix(frames, classes, fill) {}

  std::size_t frames() const { return rows(); }
  std::size_t classes() const { return cols(); }
};

/// log(exp(a) + exp(b)) without overflow.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Writes log-softmax of `in` (scaled by 1/temperature) into `out`.
inline void log_softmax(std::span<const double> in, std::span<double> out,
                        double temperature = 1.0) {
  double m = kNegInf;
  for (double x : in) m = std::max(m, x / temperature);
  double s = 0.0;
  for (double x : in) s += std::exp(x / temperature - m);
  const double norm = m + std::log(s);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / temperature - norm;
}

inline void softmax(std::span<const double> in, std::span<double> out,
                    double temperature = 1.0) {
  log_softmax(in, out, temperature);
  for (double& v : out) v = std::exp(v);
}

inline LogitMatrix log_softmax_rows(const LogitMatrix& z) {
  LogitMatrix out(z.frames(), z.classes());
  for (std::size_t l = 0; l < z.frames(); ++l) log_softmax(z.row(l), out.row(l));
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// SplitMix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Splits on single spaces, dropping empty tokens.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if (ch == ' ') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

inline std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace sutalm
