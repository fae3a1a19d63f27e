// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxda/error.hpp"

namespace ctxda {

/// Dense row-major matrix. Column vectors are rows x 1 matrices; batched
/// activations keep one sequence per column.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  static Matrix column(std::span<const T> values) {
    return Matrix(values.size(), 1, std::vector<T>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(T(0)); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  Matrix transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    }
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be positive");
    }
    return rows * cols;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
std::string shape_string(const Matrix<T>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename T>
void require_finite(const Matrix<T>& m, const char* what) {
  if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

// The three accumulate-products below keep the innermost loop contiguous
// and accumulate every output element in ascending order of the reduction
// index, so the result of one column never depends on the other columns.

/// c += a * b
template <typename T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols()) {
    throw ShapeError("gemm_nn: " + shape_string(a) + " * " + shape_string(b) + " -> " +
                     shape_string(c));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* ar = a.row(i).data();
      T acc = c[i];
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * b[p];
      c[i] = acc;
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    T* cr = c.row(i).data();
    const T* ar = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      const T* br = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

/// c += a^T * b
template <typename T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
    throw ShapeError("gemm_tn: " + shape_string(a) + "^T * " + shape_string(b) + " -> " +
                     shape_string(c));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (n == 1) {
    T* cv = c.values().data();
    for (std::size_t p = 0; p < k; ++p) {
      const T* ar = a.row(p).data();
      const T bv = b[p];
      for (std::size_t i = 0; i < m; ++i) cv[i] += ar[i] * bv;
    }
    return;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.row(p).data();
    const T* br = b.row(p).data();
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ar[i];
      T* cr = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

/// c += a * b^T
template <typename T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows()) {
    throw ShapeError("gemm_nt: " + shape_string(a) + " * " + shape_string(b) + "^T -> " +
                     shape_string(c));
  }
  if (a.cols() == 1) {
    // outer product
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const T av = a[i];
      T* cr = c.row(i).data();
      const T* bv = b.values().data();
      for (std::size_t j = 0; j < b.rows(); ++j) cr[j] += av * bv[j];
    }
    return;
  }
  gemm_nn(a, b.transposed(), c);
}

/// Adds the column vector `bias` to every column of `m`.
template <typename T>
void add_column_broadcast(Matrix<T>& m, const Matrix<T>& bias) {
  if (bias.rows() != m.rows() || bias.cols() != 1) {
    throw ShapeError("bias " + shape_string(bias) + " for " + shape_string(m));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T bv = bias[r];
    for (T& v : m.row(r)) v += bv;
  }
}

/// bias += sum over columns of m
template <typename T>
void accumulate_row_sums(const Matrix<T>& m, Matrix<T>& bias) {
  if (bias.rows() != m.rows() || bias.cols() != 1) {
    throw ShapeError("bias " + shape_string(bias) + " for " + shape_string(m));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T acc = bias[r];
    for (T v : m.row(r)) acc += v;
    bias[r] = acc;
  }
}

}  // namespace ctxda
