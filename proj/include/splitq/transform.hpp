// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"

namespace splitq {

/// Invertible right-multiplier P for the rewrite X W = (X P)(P^-1 W).
///
/// Diagonal transforms are parameterized by log|d| (plus a fixed sign) when
/// learned, so an update can never drive a scale through zero. Dense
/// transforms keep P and its LU inverse side by side.
class Transform {
 public:
  enum class Kind { Diagonal, Dense };

  static constexpr double kMinScale = 1e-6;
  static constexpr double kMaxScale = 1e6;
  static constexpr double kInverseTolerance = 1e-8;

  Transform() = default;

  static Transform identity(std::size_t dim, Kind kind = Kind::Diagonal) {
    if (kind == Kind::Dense) return dense(Matrix::identity(dim));
    return diagonal(std::vector<double>(dim, 1.0));
  }

  static Transform diagonal(std::vector<double> scales) {
    for (double d : scales) {
      const double a = std::abs(d);
      if (!(a >= kMinScale && a <= kMaxScale))
        throw ConfigError("diagonal transform scale " + std::to_string(d) + " outside [1e-6, 1e6]");
    }
    Transform t;
    t.kind_ = Kind::Diagonal;
    t.dim_ = scales.size();
    t.scales_ = std::move(scales);
    return t;
  }

  /// Builds d_i = sign_i * exp(log_i), clamping log_i into the allowed range.
  static Transform from_log_scales(const std::vector<double>& log_scales,
                                   const std::vector<double>& signs) {
    if (log_scales.size() != signs.size()) throw DimensionError("log-scale/sign length mismatch");
    std::vector<double> d(log_scales.size());
    const double lo = std::log(kMinScale);
    const double hi = std::log(kMaxScale);
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = std::clamp(std::exp(std::clamp(log_scales[i], lo, hi)), kMinScale, kMaxScale) *
             (signs[i] < 0 ? -1.0 : 1.0);
    return diagonal(std::move(d));
  }

  static Transform dense(Matrix p) {
    if (p.rows() != p.cols()) throw DimensionError("dense transform must be square");
    Matrix inv = lu_inverse(p);
    const Matrix check = matmul(p, inv);
    const std::size_t n = p.rows();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(check(i, j) - (i == j ? 1.0 : 0.0)) > kInverseTolerance)
          throw NumericalError("dense transform is too ill-conditioned to invert");
    Transform t;
    t.kind_ = Kind::Dense;
    t.dim_ = n;
    t.p_ = std::move(p);
    t.p_inv_ = std::move(inv);
    return t;
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }

  /// Diagonal entries d (Diagonal kind only).
  const std::vector<double>& scales() const { return scales_; }
  std::vector<double> log_scales() const {
    std::vector<double> l(scales_.size());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log(std::abs(scales_[i]));
    return l;
  }
  std::vector<double> signs() const {
    std::vector<double> s(scales_.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = scales_[i] < 0 ? -1.0 : 1.0;
    return s;
  }

  /// P and P^-1 as explicit matrices, for either kind.
  Matrix matrix() const {
    if (kind_ == Kind::Dense) return p_;
    Matrix m(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i) m(i, i) = scales_[i];
    return m;
  }
  Matrix inverse_matrix() const {
    if (kind_ == Kind::Dense) return p_inv_;
    Matrix m(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i) m(i, i) = 1.0 / scales_[i];
    return m;
  }

  friend bool operator==(const Transform&, const Transform&) = default;

 private:
  Kind kind_ = Kind::Diagonal;
  std::size_t dim_ = 0;
  std::vector<double> scales_;
  Matrix p_;
  Matrix p_inv_;
};

/// X * P.
inline Matrix apply_right(const Matrix& x, const Transform& t) {
  if (x.cols() != t.dim())
    throw DimensionError("apply_right: " + std::to_string(x.cols()) + " columns vs transform dim " +
                         std::to_string(t.dim()));
  if (t.kind() == Transform::Kind::Dense) return matmul(x, t.matrix());
  Matrix out = x;
  const auto& d = t.scales();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] *= d[j];
  }
  return out;
}

/// P^-1 * W.
inline Matrix apply_inv_left(const Matrix& w, const Transform& t) {
  if (w.rows() != t.dim())
    throw DimensionError("apply_inv_left: " + std::to_string(w.rows()) + " rows vs transform dim " +
                         std::to_string(t.dim()));
  if (t.kind() == Transform::Kind::Dense) return matmul(t.inverse_matrix(), w);
  Matrix out = w;
  const auto& d = t.scales();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (double& v : out.row(i)) v /= d[i];
  return out;
}

/// Mean squared error over all elements.
inline double recon_loss(const Matrix& y_hat, const Matrix& y_ref) {
  if (y_hat.rows() != y_ref.rows() || y_hat.cols() != y_ref.cols())
    throw DimensionError("recon_loss: shape mismatch");
  if (y_hat.empty()) return 0.0;
  double s = 0.0;
  auto a = y_hat.values();
  auto b = y_ref.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i];
    s += e * e;
  }
  return s / static_cast<double>(a.size());
}

/// Starting transform. Dense always starts at the identity. Diagonal starts at
/// the identity unless calibration activations are given, in which case
/// d_i = max(eps, max_t |X_ti|)^alpha, clamped to the allowed scale range.
/// alpha > 0 follows the channel magnitudes, alpha < 0 counteracts them.
inline Transform init_transform(std::size_t dim, Transform::Kind kind,
                                const Matrix* x_calib = nullptr, double alpha = 0.5) {
  if (dim == 0) return Transform::identity(0, kind);
  if (kind == Transform::Kind::Dense || x_calib == nullptr) return Transform::identity(dim, kind);
  if (x_calib->cols() != dim) throw DimensionError("init_transform: calibration width mismatch");
  std::vector<double> d(dim, 0.0);
  for (std::size_t r = 0; r < x_calib->rows(); ++r)
    for (std::size_t c = 0; c < dim; ++c) d[c] = std::max(d[c], std::abs((*x_calib)(r, c)));
  for (double& v : d)
    v = std::clamp(std::pow(std::max(v, Transform::kMinScale), alpha), Transform::kMinScale,
                   Transform::kMaxScale);
  return Transform::diagonal(std::move(d));
}

}  // namespace splitq
