// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <clocale>

#include "splitq/report.hpp"
#include "test_util.hpp"

namespace splitq {
namespace {

using testing::random_batch;
using testing::random_matrix;

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(-2.5), "-2.5");
  EXPECT_EQ(format_double(1e-300), "1e-300");
  Rng rng(91);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::exp(20.0 * rng.normal());
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(FormatDouble, IgnoresLocale) {
  // A decimal-comma locale may be missing in minimal images; the check is
  // meaningful only where it exists.
  if (std::setlocale(LC_ALL, "de_DE.UTF-8") == nullptr) GTEST_SKIP() << "de_DE locale not installed";
  EXPECT_EQ(format_double(1.5), "1.5");
  std::setlocale(LC_ALL, "C");
}

TEST(CsvWriter, Layout) {
  CsvWriter csv({"a", "b", "c"});
  csv.preamble("seed", "7");
  csv.add_row(std::size_t{1}, 0.5, "x");
  csv.add_row(2, -1.0, std::string_view("y"));
  EXPECT_EQ(csv.str(), "# seed=7\na,b,c\n1,0.5,x\n2,-1,y\n");
  EXPECT_THROW(csv.add_row(1), DimensionError);
  EXPECT_THROW(csv.add_row(1, 2, 3, 4), DimensionError);
  EXPECT_EQ(csv.str(), "# seed=7\na,b,c\n1,0.5,x\n2,-1,y\n");
}

TEST(ChannelStats, PerModalityPeaks) {
  const ActivationBatch b(Matrix::from_rows({{1, -4}, {-3, 2}, {0.5, 0}}),
                          {ModalityTag::Text, ModalityTag::Vision, ModalityTag::Text});
  const auto s = channel_stats(b);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].text_max_abs, 1.0);
  EXPECT_EQ(s[0].vision_max_abs, 3.0);
  EXPECT_EQ(s[1].text_max_abs, 4.0);
  EXPECT_EQ(s[1].vision_max_abs, 2.0);
}

TEST(DecileMeans, HandExampleAndOrdering) {
  std::vector<double> v(20);
  for (std::size_t i = 0; i < 20; ++i) v[i] = static_cast<double>(19 - i);
  const auto d = decile_means(v);
  ASSERT_EQ(d.size(), 10u);
  for (std::size_t b = 0; b < 10; ++b) EXPECT_DOUBLE_EQ(d[b], 2.0 * b + 0.5);
  EXPECT_THROW(decile_means(std::vector<double>(9, 1.0)), DimensionError);

  Rng rng(92);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(10 + rng.below(100));
    for (double& e : x) e = std::abs(rng.normal());
    const auto m = decile_means(x);
    EXPECT_TRUE(std::is_sorted(m.begin(), m.end()));
    // Equal-count bins when 10 divides n, so the bin means average to the overall mean.
    if (x.size() % 10 == 0) {
      double all = 0.0, bins = 0.0;
      for (double e : x) all += e;
      for (double e : m) bins += e;
      EXPECT_NEAR(bins / 10.0, all / static_cast<double>(x.size()), 1e-12);
    }
  }
}

TEST(WeightError, ZeroAtFullPrecisionAndMatchesHandQuantization) {
  Rng rng(93);
  const std::size_t dim = 12;
  const Matrix w = random_matrix(rng, dim, 8);
  const auto batch = random_batch(rng, 4, 4, dim);
  LayerOptions opt;
  opt.cws = opt.mac = false;
  auto layer = build_layer(w, ChannelPartition::trivial(dim), opt, &batch);
  const Matrix b = apply_inv_left(w, layer.p_main);
  EXPECT_EQ(effective_main_weight(layer), fake_quantize(b, layer.weight_spec));
  const auto mae = main_weight_row_mae(layer);
  ASSERT_EQ(mae.size(), dim);
  const Matrix qb = fake_quantize(b, layer.weight_spec);
  for (std::size_t i = 0; i < dim; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 8; ++j) s += std::abs(b(i, j) - qb(i, j));
    EXPECT_DOUBLE_EQ(mae[i], s / 8.0);
  }
  layer.weight_spec = QuantSpec::full_precision(Granularity::PerChannel);
  for (double e : main_weight_row_mae(layer)) EXPECT_EQ(e, 0.0);
}

TEST(WeightError, SmoothingBranchReducesError) {
  // A dominant rank-one component inflates per-row scales; peeling it off
  // into the branch lowers the main-path weight error.
  Rng rng(94);
  const std::size_t dim = 32;
  Matrix w = random_matrix(rng, dim, 32, 0.1);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < 32; ++j) w(i, j) += 3.0 * std::sin(1.0 + i) * std::cos(2.0 + j);
  LayerOptions opt;
  opt.mac = false;
  opt.init = TransformInit::Identity;
  opt.weight_spec = QuantSpec::weight(3);
  opt.rank_ratio_cws = 1.0 / 32.0;
  auto with = build_layer(w, ChannelPartition::trivial(dim), opt);
  opt.cws = false;
  auto without = build_layer(w, ChannelPartition::trivial(dim), opt);
  auto total = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return s;
  };
  EXPECT_LT(total(main_weight_row_mae(with)), 0.5 * total(main_weight_row_mae(without)));
}

TEST(ReconReport, PerModality) {
  const ActivationBatch b(Matrix(3, 1), {ModalityTag::Text, ModalityTag::Vision, ModalityTag::Text});
  const Matrix y = Matrix::from_rows({{1, 0}, {2, 2}, {3, 0}});
  const Matrix r = Matrix::from_rows({{0, 0}, {0, 0}, {0, 0}});
  const auto rep = recon_report(y, r, b);
  EXPECT_DOUBLE_EQ(rep.mse_all, 18.0 / 6.0);
  EXPECT_DOUBLE_EQ(rep.mse_text, 10.0 / 4.0);
  EXPECT_DOUBLE_EQ(rep.mse_vision, 8.0 / 2.0);
  const ActivationBatch text_only(Matrix(1, 1), {ModalityTag::Text});
  EXPECT_EQ(recon_report(Matrix(1, 2), Matrix(1, 2), text_only).mse_vision, 0.0);
}

}  // namespace
}  // namespace splitq
