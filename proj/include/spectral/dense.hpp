// SPDX-License-Identifier: Apache-2.0
//
// Row-major dense matrices in double precision and the handful of kernels
// every other module is built from. All operations are pure and produce
// bit-identical results for identical inputs.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spectral/errors.hpp"

namespace spectral {

class DenseMatrix {
 public:
  DenseMatrix(std::size_t rows, std::size_t cols) : DenseMatrix(rows, cols, 0.0) {}

  DenseMatrix(std::size_t rows, std::size_t cols, double fill)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows, cols));
    }
  }

  /// Nested-list literal, e.g. `DenseMatrix{{1, 2}, {3, 4}}`.
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows)
      : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
    data_.reserve(checked_size(rows_, cols_));
    for (const auto& row : rows) {
      if (row.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer list");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  /// Construction from external input: additionally rejects NaN/Inf.
  static DenseMatrix from_values(std::size_t rows, std::size_t cols, std::vector<double> data) {
    DenseMatrix out(rows, cols, std::move(data));
    if (!out.all_finite()) throw ParseError("DenseMatrix: non-finite entry in external input");
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  static std::string shape_string(std::size_t rows, std::size_t cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("DenseMatrix: dimensions must be positive, got " + shape_string(rows, cols));
    }
    return rows * cols;
  }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline DenseMatrix identity(std::size_t n) {
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

inline DenseMatrix diagonal(std::span<const double> entries) {
  DenseMatrix out(entries.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) out(i, i) = entries[i];
  return out;
}

inline DenseMatrix diagonal(std::initializer_list<double> entries) {
  return diagonal(std::span<const double>(entries.begin(), entries.size()));
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline DenseMatrix scale(const DenseMatrix& a, double c) {
  DenseMatrix out = a;
  for (double& v : out.values()) v *= c;
  return out;
}

namespace detail {
inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}
}  // namespace detail

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "add");
  DenseMatrix out = a;
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

inline DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "subtract");
  DenseMatrix out = a;
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

/// c*I - a for square a.
inline DenseMatrix shifted_negation(const DenseMatrix& a, double c) {
  if (!a.is_square()) throw ShapeError("shifted_negation: expected square, got " + a.shape());
  DenseMatrix out = scale(a, -1.0);
  for (std::size_t i = 0; i < a.rows(); ++i) out(i, i) += c;
  return out;
}

/// Product a*b.
///
/// Loop order is i-k-j: every output entry (i, j) starts at +0.0 and
/// accumulates a(i,k)*b(k,j) for k = 0, 1, ..., in that order. The order is
/// part of the contract; results are reproducible bit for bit.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + a.shape() + " * " + b.shape() + ")");
  }
  const std::size_t m = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  DenseMatrix out(m, n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = pa[i * inner + k];
      const double* brow = pb + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a^T * b without materialising the transpose. Same accumulation order as
/// matmul(transpose(a), b).
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ (" + a.shape() + "^T * " + b.shape() + ")");
  }
  const std::size_t m = a.cols();
  const std::size_t inner = a.rows();
  const std::size_t n = b.cols();
  DenseMatrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto crow = out.row(i);
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a(k, i);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
  return out;
}

/// (x + x^T) / 2.
inline DenseMatrix symmetrize(const DenseMatrix& x) {
  if (!x.is_square()) throw ShapeError("symmetrize: expected square, got " + x.shape());
  DenseMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = 0.5 * (x(i, j) + x(j, i));
  return out;
}

/// Gram matrix on the smaller side: O^T O when rows >= cols, else O O^T.
inline DenseMatrix gram(const DenseMatrix& o) {
  DenseMatrix x = o.rows() >= o.cols() ? matmul_tn(o, o) : matmul(o, transpose(o));
  return symmetrize(x);
}

inline double frobenius_norm(const DenseMatrix& a) {
  double sum = 0.0;
  for (double v : a.values()) sum += v * v;
  return std::sqrt(sum);
}

/// ||a - b||_F.
inline double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "frobenius_distance");
  double sum = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// ||a - I||_F for square a.
inline double distance_to_identity(const DenseMatrix& a) {
  if (!a.is_square()) throw ShapeError("distance_to_identity: expected square, got " + a.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double d = a(i, j) - (i == j ? 1.0 : 0.0);
      sum += d * d;
    }
  }
  return std::sqrt(sum);
}

// ---------------------------------------------------------------------------
// Text format: first line "m n", then m lines of n values separated by single
// spaces. Values are written with 17 significant digits so a read/write cycle
// is lossless.

inline std::string format_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, end);
}

/// Shortest text that parses back to the same double.
inline std::string format_shortest(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline void write_matrix(std::ostream& os, const DenseMatrix& a) {
  os << a.rows() << ' ' << a.cols() << '\n';
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(a(i, j));
    }
    os << '\n';
  }
}

inline std::string to_text(const DenseMatrix& a) {
  std::ostringstream os;
  write_matrix(os, a);
  return os.str();
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  T value{};
  const char* first = field.data();
  if (!field.empty() && field.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("matrix text: line " + std::to_string(line_no) + ": cannot parse '" +
                     std::string(field) + "'");
  }
  return value;
}

}  // namespace detail

inline DenseMatrix read_matrix(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (!detail::split_fields(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("matrix text: empty input");
  auto header = detail::split_fields(line);
  if (header.size() != 2) throw ParseError("matrix text: header must be 'rows cols'");
  const auto rows = detail::parse_number<std::size_t>(header[0], line_no);
  const auto cols = detail::parse_number<std::size_t>(header[1], line_no);
  if (rows == 0 || cols == 0) throw ParseError("matrix text: dimensions must be positive");

  std::vector<double> data;
  data.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!next_line()) {
      throw ParseError("matrix text: expected " + std::to_string(rows) + " rows, got " +
                       std::to_string(r));
    }
    auto fields = detail::split_fields(line);
    if (fields.size() != cols) {
      throw ParseError("matrix text: line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " values, expected " + std::to_string(cols));
    }
    for (auto f : fields) data.push_back(detail::parse_number<double>(f, line_no));
  }
  if (next_line()) throw ParseError("matrix text: trailing data after row " + std::to_string(rows));
  return DenseMatrix::from_values(rows, cols, std::move(data));
}

inline DenseMatrix from_text(std::string_view text) {
  std::istringstream is{std::string(text)};
  return read_matrix(is);
}

}  // namespace spectral
