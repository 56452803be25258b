// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splitq/errors.hpp"

namespace splitq {

/// Dense row-major matrix of doubles. Zero-width or zero-height matrices are
/// allowed so that an empty channel group still has a well-defined shape.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw DimensionError("matrix value count " + std::to_string(values_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for matrix");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {values_.data() + r * cols_, cols_};
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// C = A * B. Each entry accumulates over k in ascending order, so results are
/// reproducible bit for bit.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const Matrix bt = transpose(b);
  Matrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.cols(); ++j) {
      const double* br = bt.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ar[k] * br[k];
      c(i, j) = acc;
    }
  }
  return c;
}

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}
}  // namespace detail

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += bv[i];
  return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "subtract");
  Matrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.values()) v *= s;
  return c;
}

inline Matrix& operator+=(Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  return a;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

/// ||a - b||_F / ||b||_F, falling back to the absolute error when b is zero.
inline double relative_frobenius_error(const Matrix& a, const Matrix& b) {
  const double diff = frobenius_norm(a - b);
  const double ref = frobenius_norm(b);
  return ref > 0.0 ? diff / ref : diff;
}

inline Matrix gather_columns(const Matrix& x, std::span<const std::size_t> cols) {
  Matrix out(x.rows(), cols.size());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(i, cols[j]);
  return out;
}

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void scatter_columns(Matrix& dst, std::span<const std::size_t> cols, const Matrix& src) {
  if (src.rows() != dst.rows() || src.cols() != cols.size())
    throw DimensionError("scatter_columns: source shape does not match index set");
  for (std::size_t i = 0; i < dst.rows(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) dst(i, cols[j]) = src(i, j);
}

inline void scatter_rows(Matrix& dst, std::span<const std::size_t> rows, const Matrix& src) {
  if (src.cols() != dst.cols() || src.rows() != rows.size())
    throw DimensionError("scatter_rows: source shape does not match index set");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto s = src.row(i);
    std::copy(s.begin(), s.end(), dst.row(rows[i]).begin());
  }
}

/// Inverse by LU decomposition with partial pivoting. Throws NumericalError on
/// an exactly singular pivot.
inline Matrix lu_inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("lu_inverse: matrix is not square");
  const std::size_t n = a.rows();
  Matrix lu = a;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (lu(pivot, k) == 0.0) throw NumericalError("lu_inverse: matrix is singular");
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      std::swap(perm[k], perm[pivot]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      lu(i, k) /= lu(k, k);
      const double f = lu(i, k);
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }

  Matrix inv(n, n);
  std::vector<double> col(n);
  for (std::size_t c = 0; c < n; ++c) {
    // Solve L y = P e_c, then U x = y.
    for (std::size_t i = 0; i < n; ++i) col[i] = perm[i] == c ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) col[i] -= lu(i, j) * col[j];
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = i + 1; j < n; ++j) col[i] -= lu(i, j) * col[j];
      col[i] /= lu(i, i);
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, c) = col[i];
  }
  return inv;
}

/// Token modality. The numeric values are the on-disk encoding.
enum class ModalityTag : std::uint8_t { Text = 0, Vision = 1 };

/// Token-by-channel activations with one modality tag per token row.
class ActivationBatch {
 public:
  ActivationBatch() = default;

  ActivationBatch(Matrix data, std::vector<ModalityTag> tags)
      : data_(std::move(data)), tags_(std::move(tags)) {
    if (tags_.size() != data_.rows())
      throw DimensionError("activation batch: tag count does not match token count");
    if (data_.rows() == 0) throw DimensionError("activation batch: needs at least one token");
  }

  const Matrix& data() const noexcept { return data_; }
  const std::vector<ModalityTag>& tags() const noexcept { return tags_; }
  std::size_t tokens() const noexcept { return data_.rows(); }
  std::size_t channels() const noexcept { return data_.cols(); }

  std::vector<std::size_t> rows_with(ModalityTag tag) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < tags_.size(); ++i)
      if (tags_[i] == tag) rows.push_back(i);
    return rows;
  }

  std::size_t count(ModalityTag tag) const {
    return static_cast<std::size_t>(std::count(tags_.begin(), tags_.end(), tag));
  }

  /// Sub-batch made of the given token rows, in the given order.
  ActivationBatch select(std::span<const std::size_t> rows) const {
    std::vector<ModalityTag> tags;
    tags.reserve(rows.size());
    for (std::size_t r : rows) tags.push_back(tags_[r]);
    return ActivationBatch(gather_rows(data_, rows), std::move(tags));
  }

  friend bool operator==(const ActivationBatch&, const ActivationBatch&) = default;

 private:
  Matrix data_;
  std::vector<ModalityTag> tags_;
};

}  // namespace splitq
