// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Modality-specific outlier channel decoupling.
//
// Vision outliers are picked by peak magnitude over vision tokens. Text
// outliers are picked among the remaining channels by how unstable their
// within-token percentile rank is across text tokens, measured as the
// within-cluster variance of a 1-D k-means fit to each channel's ranks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"
#include "splitq/partition.hpp"

namespace splitq {

struct MocdConfig {
  double ratio_vision = 0.02;
  double ratio_text = 0.02;
  std::size_t clusters_k = 3;
  std::size_t kmeans_max_iter = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ratio_vision >= 0.0 && ratio_vision <= 0.5))
      throw ConfigError("ratio_vision must be in [0, 0.5]");
    if (!(ratio_text >= 0.0 && ratio_text <= 0.5)) throw ConfigError("ratio_text must be in [0, 0.5]");
    if (clusters_k == 0) throw ConfigError("clusters_k must be positive");
    if (kmeans_max_iter == 0) throw ConfigError("kmeans_max_iter must be positive");
  }
};

/// round-half-up(ratio * dim).
inline std::size_t outlier_count(double ratio, std::size_t dim) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(dim) + 0.5));
}

/// s_v(c) = max over vision tokens of |X_ic|.
inline std::vector<double> vision_score(const ActivationBatch& batch) {
  const auto rows = batch.rows_with(ModalityTag::Vision);
  if (rows.empty()) throw FormatError("vision_score: batch has no vision tokens");
  std::vector<double> s(batch.channels(), 0.0);
  for (std::size_t r : rows) {
    auto row = batch.data().row(r);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = std::max(s[c], std::abs(row[c]));
  }
  return s;
}

/// Indices of the k largest scores, lower index first on ties, returned ascending.
inline std::vector<std::size_t> select_topk(const std::vector<double>& scores, std::size_t k) {
  if (k > scores.size())
    throw ConfigError("select_topk: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(scores.size()) + " scores");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Text-token x candidate-channel matrix of r_ic = |{j in C' : |X_ij| <= |X_ic|}| / |C'|.
inline Matrix percentile_rank(const ActivationBatch& batch, const std::vector<std::size_t>& candidates) {
  const auto rows = batch.rows_with(ModalityTag::Text);
  if (rows.empty()) throw FormatError("percentile_rank: batch has no text tokens");
  if (candidates.empty()) throw ConfigError("percentile_rank: candidate channel set is empty");
  const std::size_t n = candidates.size();
  Matrix ranks(rows.size(), n);
  std::vector<double> mags(n);
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto row = batch.data().row(rows[i]);
    for (std::size_t j = 0; j < n; ++j) mags[j] = std::abs(row[candidates[j]]);
    sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < n; ++j) {
      const auto le = std::upper_bound(sorted.begin(), sorted.end(), mags[j]) - sorted.begin();
      ranks(i, j) = static_cast<double>(le) / static_cast<double>(n);
    }
  }
  return ranks;
}

/// Result of a 1-D Lloyd fit.
struct KMeans1D {
  std::vector<double> centers;
  std::vector<std::size_t> assignment;  // per input value, in input order
  double within_variance = 0.0;         // mean squared distance to assigned center
};

/// Deterministic 1-D Lloyd's algorithm. Centers start at the (2j+1)/(2k)
/// quantiles of the sorted values; k shrinks to the number of distinct values.
/// Stops at an assignment fixed point or after max_iter rounds. Ties in
/// assignment go to the lower center.
inline KMeans1D kmeans_1d(const std::vector<double>& values, std::size_t k, std::size_t max_iter) {
  KMeans1D out;
  const std::size_t n = values.size();
  if (n == 0) return out;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::size_t uniq = 1;
  for (std::size_t i = 1; i < n; ++i)
    if (sorted[i] != sorted[i - 1]) ++uniq;
  k = std::max<std::size_t>(1, std::min(k, uniq));

  std::vector<double> centers(k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto pos = static_cast<std::size_t>(
        std::floor((2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(k)) *
                   static_cast<double>(n)));
    centers[j] = sorted[std::min(pos, n - 1)];
  }

  auto nearest = [&](double v) {
    std::size_t best = 0;
    double bd = std::abs(v - centers[0]);
    for (std::size_t j = 1; j < k; ++j) {
      const double d = std::abs(v - centers[j]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    return best;
  };

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) assign[i] = nearest(sorted[i]);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[assign[i]] += sorted[i];
      ++cnt[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j] > 0) centers[j] = sum[j] / static_cast<double>(cnt[j]);
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest(sorted[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed) break;
  }

  out.centers = centers;
  out.assignment.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = nearest(values[i]);
    out.assignment[i] = a;
    const double e = values[i] - centers[a];
    acc += e * e;
  }
  out.within_variance = acc / static_cast<double>(n);
  return out;
}

/// Per candidate channel, the within-cluster variance of its rank sequence.
/// The k-means initialization is deterministic, so `seed` does not change the
/// result; it is accepted for interface stability.
inline std::vector<double> text_score(const Matrix& ranks, std::size_t k, std::uint64_t seed = 0,
                                      std::size_t max_iter = 50) {
  (void)seed;
  if (k == 0) throw ConfigError("text_score: cluster count must be positive");
  if (k > ranks.rows())
    throw ConfigError("text_score: " + std::to_string(k) + " clusters for " +
                      std::to_string(ranks.rows()) + " text tokens");
  std::vector<double> scores(ranks.cols());
  std::vector<double> seq(ranks.rows());
  for (std::size_t c = 0; c < ranks.cols(); ++c) {
    for (std::size_t i = 0; i < ranks.rows(); ++i) seq[i] = ranks(i, c);
    scores[c] = kmeans_1d(seq, k, max_iter).within_variance;
  }
  return scores;
}

/// Vision outliers by magnitude, then text outliers among the rest by rank
/// instability; everything else forms the main set.
inline ChannelPartition build_partition(const ActivationBatch& batch, const MocdConfig& cfg) {
  cfg.validate();
  const std::size_t dim = batch.channels();
  const std::size_t kv = outlier_count(cfg.ratio_vision, dim);
  const std::size_t kt = outlier_count(cfg.ratio_text, dim);
  if (kv + kt > dim)
    throw ConfigError("build_partition: " + std::to_string(kv) + " vision + " + std::to_string(kt) +
                      " text outliers exceed " + std::to_string(dim) + " channels");

  std::vector<std::size_t> vision;
  if (kv > 0) {
    if (batch.count(ModalityTag::Vision) == 0)
      throw FormatError("build_partition: ratio_vision > 0 but the batch has no vision tokens");
    vision = select_topk(vision_score(batch), kv);
  }

  std::vector<std::size_t> text;
  if (kt > 0) {
    if (batch.count(ModalityTag::Text) == 0)
      throw FormatError("build_partition: ratio_text > 0 but the batch has no text tokens");
    std::vector<std::size_t> remaining;
    std::vector<bool> is_vision(dim, false);
    for (auto c : vision) is_vision[c] = true;
    for (std::size_t c = 0; c < dim; ++c)
      if (!is_vision[c]) remaining.push_back(c);
    const Matrix ranks = percentile_rank(batch, remaining);
    const std::size_t k = std::min(cfg.clusters_k, ranks.rows());
    const auto scores = text_score(ranks, k, cfg.seed, cfg.kmeans_max_iter);
    for (std::size_t j : select_topk(scores, kt)) text.push_back(remaining[j]);
  }
  return ChannelPartition::from_outliers(dim, std::move(text), std::move(vision));
}

/// |a ∩ b| / |a ∪ b|; two empty sets are identical (1.0).
inline double jaccard(std::vector<std::size_t> a, std::vector<std::size_t> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  if (a.empty() && b.empty()) return 1.0;
  std::vector<std::size_t> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  const std::size_t uni = a.size() + b.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

}  // namespace splitq
