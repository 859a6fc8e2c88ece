#pragma once

// Dense row-major matrix and the handful of kernels the rest of the library
// is built from. Scalar type is a template parameter so the gradient checker
// can replay a double-precision model in extended precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lte/error.hpp"

namespace lte {

template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_,
                    "BasicMatrix: data length must equal rows * cols");
  }

  /// Row-wise literal: `Matrix::from_rows({{1, 2}, {3, 4}})`.
  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    BasicMatrix out(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      detail::require(row.size() == c, "from_rows: ragged rows");
      std::copy(row.begin(), row.end(), out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return out;
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  static BasicMatrix diagonal(std::span<const T> values) {
    BasicMatrix out(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out(i, i) = values[i];
    return out;
  }

  static BasicMatrix zeros_like(const BasicMatrix& other) {
    return BasicMatrix(other.rows(), other.cols());
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const BasicMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  template <class U>
  BasicMatrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicMatrix& operator+=(const BasicMatrix& o) {
    check_same(o, "operator+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  BasicMatrix& operator-=(const BasicMatrix& o) {
    check_same(o, "operator-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  BasicMatrix& operator*=(T c) {
    for (auto& v : data_) v *= c;
    return *this;
  }

  /// this += c * o
  BasicMatrix& add_scaled(const BasicMatrix& o, T c) {
    check_same(o, "add_scaled");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += c * o.data_[k];
    return *this;
  }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  void check_same(const BasicMatrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string() +
                              " vs " + o.shape_string());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;

template <class T>
BasicMatrix<T> operator+(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  a += b;
  return a;
}

template <class T>
BasicMatrix<T> operator-(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  a -= b;
  return a;
}

template <class T>
BasicMatrix<T> operator*(T c, BasicMatrix<T> a) {
  a *= c;
  return a;
}

template <class T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: inner dimensions differ (" + a.shape_string() + " x " +
                            b.shape_string() + ")");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicMatrix<T> out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a(i, p);
      if (aip == T{}) continue;
      const T* brow = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

/// a^T b without materializing the transpose.
template <class T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ContractViolation("matmul_tn: row counts differ (" + a.shape_string() + ", " +
                            b.shape_string() + ")");
  }
  BasicMatrix<T> out(a.cols(), b.cols());
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const T* arow = a.row(p).data();
    const T* brow = b.row(p).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T api = arow[i];
      if (api == T{}) continue;
      T* orow = out.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += api * brow[j];
    }
  }
  return out;
}

/// a b^T without materializing the transpose.
template <class T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ContractViolation("matmul_nt: column counts differ (" + a.shape_string() + ", " +
                            b.shape_string() + ")");
  }
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* brow = b.row(j).data();
      T acc{};
      for (std::size_t p = 0; p < a.cols(); ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

template <class T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class T>
T frobenius_norm(const BasicMatrix<T>& a) {
  // Scaled accumulation avoids overflow for large entries.
  T scale{}, ssq{1};
  for (T v : a.values()) {
    if (v == T{}) continue;
    const T av = std::abs(v);
    if (scale < av) {
      ssq = T{1} + ssq * (scale / av) * (scale / av);
      scale = av;
    } else {
      ssq += (av / scale) * (av / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

template <class T>
T max_abs(const BasicMatrix<T>& a) {
  T m{};
  for (T v : a.values()) m = std::max(m, static_cast<T>(std::abs(v)));
  return m;
}

template <class T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
  T m{};
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) m = std::max(m, static_cast<T>(std::abs(av[k] - bv[k])));
  return m;
}

/// Sum of elementwise products (Frobenius inner product).
template <class T>
T frobenius_dot(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.same_shape(b), "frobenius_dot: shape mismatch");
  T acc{};
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) acc += av[k] * bv[k];
  return acc;
}

template <class T>
bool all_finite(const BasicMatrix<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](T v) { return std::isfinite(v); });
}

/// Columns [first, first + count) as a new matrix.
template <class T>
BasicMatrix<T> column_block(const BasicMatrix<T>& a, std::size_t first, std::size_t count) {
  detail::require(first + count <= a.cols(), "column_block: range exceeds columns");
  BasicMatrix<T> out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, first + j);
  return out;
}

/// Rows [first, first + count) as a new matrix.
template <class T>
BasicMatrix<T> row_block(const BasicMatrix<T>& a, std::size_t first, std::size_t count) {
  detail::require(first + count <= a.rows(), "row_block: range exceeds rows");
  BasicMatrix<T> out(count, a.cols());
  for (std::size_t i = 0; i < count; ++i)
    std::copy(a.row(first + i).begin(), a.row(first + i).end(), out.row(i).begin());
  return out;
}

}  // namespace lte
