// aspool/matrix.hpp
//
// Copyright 2026 The aspool Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ASPOOL_MATRIX_HPP_
#define ASPOOL_MATRIX_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aspool/errors.hpp"

namespace aspool {

using Vector = std::vector<double>;

inline bool AllFinite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Dense row-major matrix of doubles.
///
/// Always at least 1x1. The checked constructors reject NaN/Inf; the
/// arithmetic helpers below do not re-check their outputs.
class Matrix {
 public:
  Matrix() : rows_(1), cols_(1), data_(1, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0)
      throw DimensionError("Matrix: rows and cols must be >= 1");
    data_.assign(rows * cols, 0.0);
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0)
      throw DimensionError("Matrix: rows and cols must be >= 1");
    if (data_.size() != rows * cols)
      throw DimensionError("Matrix: data size " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    if (!AllFinite(data_)) throw DimensionError("Matrix: non-finite entry");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0)
      throw DimensionError("Matrix: rows and cols must be >= 1");
    data_.reserve(rows_ * cols_);
    for (const auto &r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    if (!AllFinite(data_)) throw DimensionError("Matrix: non-finite entry");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double> &data() const { return data_; }

  void SetZero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool operator==(const Matrix &o) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline void RequireSameShape(const Matrix &a, const Matrix &b, const char *who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(who) + ": shape mismatch");
}

// y += alpha * x
inline void Axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

namespace internal {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> View(const Matrix &m) {
  return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())};
}

inline Eigen::Map<RowMajor> View(Matrix &m) {
  return {m.flat().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())};
}

}  // namespace internal

/// out = a * b^T, the affine-layer product.
inline Matrix MatMulTransB(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.cols()) throw DimensionError("MatMulTransB: inner dims");
  Matrix out(a.rows(), b.rows());
  internal::View(out).noalias() = internal::View(a) * internal::View(b).transpose();
  return out;
}

/// out = a * b
inline Matrix MatMul(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows()) throw DimensionError("MatMul: inner dims");
  Matrix out(a.rows(), b.cols());
  internal::View(out).noalias() = internal::View(a) * internal::View(b);
  return out;
}

/// out += a^T * b
inline void AddMatTransAMat(const Matrix &a, const Matrix &b, Matrix *out) {
  if (a.rows() != b.rows() || out->rows() != a.cols() || out->cols() != b.cols())
    throw DimensionError("AddMatTransAMat: dims");
  internal::View(*out).noalias() += internal::View(a).transpose() * internal::View(b);
}

inline Matrix Transpose(const Matrix &a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double MaxAbsDiff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("MaxAbsDiff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Stacks the rows of several matrices with equal column counts.
inline Matrix VStack(std::span<const Matrix> parts) {
  if (parts.empty()) throw EmptyInputError("VStack: no parts");
  std::size_t rows = 0;
  const std::size_t cols = parts[0].cols();
  for (const auto &p : parts) {
    if (p.cols() != cols) throw DimensionError("VStack: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const auto &p : parts) {
    std::copy(p.flat().begin(), p.flat().end(),
              out.flat().begin() + static_cast<std::ptrdiff_t>(r * cols));
    r += p.rows();
  }
  return out;
}

/// Copies rows [begin, begin + count) into a new matrix.
inline Matrix RowRange(const Matrix &m, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > m.rows())
    throw DimensionError("RowRange: out of range");
  Matrix out(count, m.cols());
  auto src = m.flat().subspan(begin * m.cols(), count * m.cols());
  std::copy(src.begin(), src.end(), out.flat().begin());
  return out;
}

}  // namespace aspool

#endif  // ASPOOL_MATRIX_HPP_
