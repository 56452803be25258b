// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"
#include "splitq/transform.hpp"

namespace splitq {

/// Rank-r factors W ~= U diag(sigma) Vt.
struct SvdFactors {
  Matrix u;                   // rows x r, orthonormal columns
  std::vector<double> sigma;  // descending, >= 0
  Matrix vt;                  // r x cols, orthonormal rows
};

namespace detail {

/// One-sided (Hestenes) Jacobi on a tall matrix: rotates column pairs of `a`
/// until they are mutually orthogonal, accumulating the rotations in `v`.
/// This diagonalizes the Gram matrix a^T a without forming it.
inline void hestenes_jacobi(Matrix& a, Matrix& v, std::size_t max_sweeps) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  v = Matrix::identity(n);
  constexpr double kTol = 1e-15;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p);
          const double aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericalError("truncated_svd: Jacobi sweeps did not converge");
}

/// Replaces columns flagged in `fill` with unit vectors orthogonal to all
/// other columns (Gram-Schmidt against the standard basis).
inline void complete_orthonormal(Matrix& q, const std::vector<bool>& fill) {
  const std::size_t m = q.rows();
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    if (!fill[j]) continue;
    for (; next_basis < m; ++next_basis) {
      std::vector<double> x(m, 0.0);
      x[next_basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < q.cols(); ++k) {
          if (k == j || (fill[k] && k > j)) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += q(i, k) * x[i];
          for (std::size_t i = 0; i < m; ++i) x[i] -= dot * q(i, k);
        }
      }
      double nrm = 0.0;
      for (double e : x) nrm += e * e;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) q(i, j) = x[i] / nrm;
        ++next_basis;
        break;
      }
    }
  }
}

}  // namespace detail

/// Best rank-r approximation factors. Left singular vectors are sign-fixed so
/// their first nonzero entry is positive.
inline SvdFactors truncated_svd(const Matrix& w, std::size_t r) {
  const std::size_t kmin = std::min(w.rows(), w.cols());
  if (r < 1 || r > kmin)
    throw ConfigError("truncated_svd: rank " + std::to_string(r) + " outside [1, " +
                      std::to_string(kmin) + "]");
  if (!all_finite(w)) throw NumericalError("truncated_svd: non-finite input");

  // Work on the tall orientation: a = W (m >= n) or a = W^T.
  const bool wide = w.rows() < w.cols();
  Matrix a = wide ? transpose(w) : w;
  Matrix v;
  detail::hestenes_jacobi(a, v, 60);

  const std::size_t n = a.cols();
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  // Tall-side vectors come from normalized columns of a; the other side from v.
  Matrix left(a.rows(), r);
  Matrix right(n, r);
  std::vector<double> sigma(r);
  std::vector<bool> fill(r, false);
  const double tiny = std::max(norms[order[0]], 1.0) * 1e-13;
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t j = order[k];
    sigma[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) right(i, k) = v(i, j);
    if (norms[j] > tiny) {
      for (std::size_t i = 0; i < a.rows(); ++i) left(i, k) = a(i, j) / norms[j];
    } else {
      fill[k] = true;
    }
  }
  detail::complete_orthonormal(left, fill);

  SvdFactors f;
  f.sigma = std::move(sigma);
  f.u = wide ? std::move(right) : std::move(left);
  f.vt = transpose(wide ? left : right);

  for (std::size_t k = 0; k < r; ++k) {
    double first = 0.0;
    for (std::size_t i = 0; i < f.u.rows() && first == 0.0; ++i)
      if (std::abs(f.u(i, k)) > 1e-14) first = f.u(i, k);
    if (first < 0.0) {
      for (std::size_t i = 0; i < f.u.rows(); ++i) f.u(i, k) = -f.u(i, k);
      for (std::size_t i = 0; i < f.vt.cols(); ++i) f.vt(k, i) = -f.vt(k, i);
    }
  }
  return f;
}

/// U diag(sigma) Vt.
inline Matrix reconstruct(const SvdFactors& f) {
  Matrix us = f.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= f.sigma[k];
  return matmul(us, f.vt);
}

/// Gated low-rank branch anchored to the main-path transform:
/// U* = P^-1 U_r, V* = diag(gate) Sigma_r V_r^T. Only the gate is learned.
struct LowRankBranch {
  Matrix u_basis;  // U_r, kept so U* can follow a changing transform
  Matrix u_star;   // P^-1 U_r
  Matrix v_base;   // Sigma_r V_r^T
  std::vector<double> gate;

  std::size_t rank() const noexcept { return gate.size(); }

  Matrix v_star() const {
    Matrix v = v_base;
    for (std::size_t k = 0; k < v.rows(); ++k)
      for (double& e : v.row(k)) e *= gate[k];
    return v;
  }

  /// U* V*.
  Matrix product() const { return matmul(u_star, v_star()); }

  friend bool operator==(const LowRankBranch&, const LowRankBranch&) = default;
};

inline LowRankBranch build_branch(const Matrix& w_m, const Transform& p_m, std::size_t r) {
  if (p_m.dim() != w_m.rows())
    throw DimensionError("build_branch: transform dim " + std::to_string(p_m.dim()) +
                         " vs weight rows " + std::to_string(w_m.rows()));
  SvdFactors f = truncated_svd(w_m, r);
  LowRankBranch b;
  b.u_basis = std::move(f.u);
  b.u_star = apply_inv_left(b.u_basis, p_m);
  b.v_base = f.vt;
  for (std::size_t k = 0; k < r; ++k)
    for (double& e : b.v_base.row(k)) e *= f.sigma[k];
  b.gate.assign(r, 1.0);
  return b;
}

/// Same branch re-anchored to a new transform.
inline LowRankBranch rebase_branch(LowRankBranch b, const Transform& p_m) {
  b.u_star = apply_inv_left(b.u_basis, p_m);
  return b;
}

/// Gradient of ||U* diag(g) v_base - target||_F^2 with respect to g.
inline std::vector<double> gate_gradient(const LowRankBranch& b, const Matrix& target) {
  const Matrix resid = b.product() - target;
  const Matrix ur = matmul(transpose(b.u_star), resid);  // r x D_out
  std::vector<double> g(b.rank(), 0.0);
  for (std::size_t k = 0; k < b.rank(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < ur.cols(); ++j) s += ur(k, j) * b.v_base(k, j);
    g[k] = 2.0 * s;
  }
  return g;
}

/// round-half-up(ratio * min(rows, cols)), at least 1 and at most min(rows, cols).
inline std::size_t rank_from_ratio(double ratio, std::size_t rows, std::size_t cols) {
  const std::size_t kmin = std::min(rows, cols);
  if (kmin == 0) return 0;
  const auto r = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(kmin) + 0.5));
  return std::clamp<std::size_t>(r, 1, kmin);
}

}  // namespace splitq
