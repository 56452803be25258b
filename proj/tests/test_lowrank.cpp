// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "splitq/lowrank.hpp"
#include "test_util.hpp"

#if SPLITQ_HAVE_EIGEN
#include <Eigen/SVD>
#endif

namespace splitq {
namespace {

using testing::random_matrix;

double orthonormality_residual(const Matrix& q) {
  return max_abs(matmul(transpose(q), q) - Matrix::identity(q.cols()));
}

TEST(TruncatedSvd, HandExamples) {
  const auto f = truncated_svd(Matrix::from_rows({{3, 0}, {0, 1}}), 2);
  EXPECT_NEAR(f.sigma[0], 3.0, 1e-14);
  EXPECT_NEAR(f.sigma[1], 1.0, 1e-14);
  EXPECT_LE(max_abs(reconstruct(f) - Matrix::from_rows({{3, 0}, {0, 1}})), 1e-14);

  const auto g = truncated_svd(Matrix::from_rows({{2, 0}, {0, 0}}), 1);
  ASSERT_EQ(g.sigma.size(), 1u);
  EXPECT_NEAR(g.sigma[0], 2.0, 1e-14);
  EXPECT_NEAR(g.u(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(g.u(1, 0), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(g.vt(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(g.vt(0, 1), 0.0, 1e-14);
}

TEST(TruncatedSvd, RankOutOfRange) {
  EXPECT_THROW(truncated_svd(Matrix(3, 2, 1.0), 0), ConfigError);
  EXPECT_THROW(truncated_svd(Matrix(3, 2, 1.0), 3), ConfigError);
}

TEST(TruncatedSvd, FactorInvariantsAndSignConvention) {
  Rng rng(61);
  for (int t = 0; t < 30; ++t) {
    const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64);
    const Matrix w = random_matrix(rng, m, n);
    const std::size_t r = 1 + rng.below(std::min(m, n));
    const auto f = truncated_svd(w, r);
    ASSERT_EQ(f.u.rows(), m);
    ASSERT_EQ(f.u.cols(), r);
    ASSERT_EQ(f.vt.rows(), r);
    ASSERT_EQ(f.vt.cols(), n);
    EXPECT_LE(orthonormality_residual(f.u), 1e-8);
    EXPECT_LE(orthonormality_residual(transpose(f.vt)), 1e-8);
    for (std::size_t k = 0; k < r; ++k) {
      EXPECT_GE(f.sigma[k], 0.0);
      if (k > 0) {
        EXPECT_LE(f.sigma[k], f.sigma[k - 1]);
      }
      for (std::size_t i = 0; i < m; ++i)
        if (f.u(i, k) != 0.0) {
          EXPECT_GT(f.u(i, k), 0.0);
          break;
        }
    }
  }
}

TEST(TruncatedSvd, FullRankIsExact) {
  Rng rng(62);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64);
    const Matrix w = random_matrix(rng, m, n);
    const auto f = truncated_svd(w, std::min(m, n));
    EXPECT_LE(frobenius_norm(w - reconstruct(f)), 1e-8 * frobenius_norm(w));
  }
}

TEST(TruncatedSvd, RankDeficientInput) {
  Rng rng(63);
  const Matrix w = matmul(random_matrix(rng, 12, 2), random_matrix(rng, 2, 9));
  const auto f = truncated_svd(w, 5);
  EXPECT_LE(orthonormality_residual(f.u), 1e-8);
  EXPECT_LE(orthonormality_residual(transpose(f.vt)), 1e-8);
  for (std::size_t k = 2; k < 5; ++k) EXPECT_LE(f.sigma[k], 1e-10 * f.sigma[0]);
  EXPECT_LE(frobenius_norm(w - reconstruct(f)), 1e-10 * frobenius_norm(w));
}

// Eckart-Young: the rank-r error equals the tail energy of the spectrum, and is
// nonincreasing in r.
TEST(TruncatedSvd, EckartYoung) {
  Rng rng(64);
  for (int t = 0; t < 10; ++t) {
    const std::size_t m = 2 + rng.below(30), n = 2 + rng.below(30);
    const Matrix w = random_matrix(rng, m, n);
    const std::size_t kmin = std::min(m, n);
    const auto full = truncated_svd(w, kmin);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r <= kmin; ++r) {
      const double err = frobenius_norm(w - reconstruct(truncated_svd(w, r)));
      double tail = 0.0;
      for (std::size_t k = r; k < kmin; ++k) tail += full.sigma[k] * full.sigma[k];
      EXPECT_NEAR(err, std::sqrt(tail), 1e-9 * frobenius_norm(w));
      EXPECT_LE(err, prev + 1e-12);
      prev = err;
    }
  }
}

#if SPLITQ_HAVE_EIGEN
TEST(TruncatedSvd, SingularValuesMatchEigen) {
  Rng rng(65);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64);
    const Matrix w = random_matrix(rng, m, n);
    Eigen::MatrixXd e(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) e(i, j) = w(i, j);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
    const auto f = truncated_svd(w, std::min(m, n));
    for (std::size_t k = 0; k < f.sigma.size(); ++k)
      EXPECT_NEAR(f.sigma[k], svd.singularValues()(static_cast<Eigen::Index>(k)), 1e-10 * f.sigma[0]);
  }
}
#endif

TEST(BuildBranch, IdentityTransformGivesSvdApproximation) {
  Rng rng(66);
  const Matrix w = random_matrix(rng, 20, 14);
  const auto id = Transform::identity(20);
  for (std::size_t r : {1u, 3u, 14u}) {
    const auto b = build_branch(w, id, r);
    EXPECT_EQ(b.gate, std::vector<double>(r, 1.0));
    EXPECT_LE(max_abs(b.product() - reconstruct(truncated_svd(w, r))), 1e-8);
  }
  EXPECT_LE(frobenius_norm(build_branch(w, id, 14).product() - w), 1e-8 * frobenius_norm(w));
}

TEST(BuildBranch, ZeroGateDisablesBranch) {
  Rng rng(67);
  auto b = build_branch(random_matrix(rng, 6, 5), Transform::identity(6), 3);
  b.gate.assign(3, 0.0);
  EXPECT_EQ(max_abs(b.product()), 0.0);
}

TEST(BuildBranch, TransformAnchoring) {
  Rng rng(68);
  const Matrix w = random_matrix(rng, 8, 6);
  std::vector<double> d(8);
  for (double& v : d) v = std::exp(rng.normal());
  const auto p = Transform::diagonal(d);
  const auto b = build_branch(w, p, 6);
  // With full rank and unit gates the branch is exactly P^-1 W.
  EXPECT_LE(max_abs(b.product() - apply_inv_left(w, p)), 1e-8 * max_abs(apply_inv_left(w, p)));
  const auto q = Transform::identity(8);
  EXPECT_LE(max_abs(rebase_branch(b, q).product() - w), 1e-8 * max_abs(w));
  EXPECT_THROW(build_branch(w, Transform::identity(7), 2), DimensionError);
}

TEST(GateGradient, MatchesCentralDifferences) {
  Rng rng(69);
  for (int t = 0; t < 10; ++t) {
    auto b = build_branch(random_matrix(rng, 10, 7), Transform::identity(10), 4);
    for (double& g : b.gate) g = 1.0 + 0.5 * rng.normal();
    const Matrix target = random_matrix(rng, 10, 7);
    const auto grad = gate_gradient(b, target);
    auto loss = [&](const LowRankBranch& x) {
      const double f = frobenius_norm(x.product() - target);
      return f * f;
    };
    for (std::size_t k = 0; k < b.rank(); ++k) {
      const double h = 1e-6;
      auto hi = b, lo = b;
      hi.gate[k] += h;
      lo.gate[k] -= h;
      const double fd = (loss(hi) - loss(lo)) / (2 * h);
      EXPECT_LE(std::abs(fd - grad[k]), 1e-5 * std::max(1.0, std::abs(grad[k])));
    }
  }
}

TEST(RankFromRatio, Rounding) {
  EXPECT_EQ(rank_from_ratio(0.02, 64, 64), 1u);
  EXPECT_EQ(rank_from_ratio(0.03, 100, 200), 3u);
  EXPECT_EQ(rank_from_ratio(0.02, 75, 80), 2u);  // 1.5 rounds up
  EXPECT_EQ(rank_from_ratio(0.0, 10, 10), 1u);
  EXPECT_EQ(rank_from_ratio(2.0, 10, 4), 4u);
  EXPECT_EQ(rank_from_ratio(0.5, 0, 4), 0u);
}

}  // namespace
}  // namespace splitq
