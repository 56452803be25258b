// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"

namespace splitq {

/// Disjoint split of the input channels {0..dim-1} into a shared main set and
/// text- and vision-specific outlier sets. Every set is stored ascending.
struct ChannelPartition {
  std::vector<std::size_t> main;
  std::vector<std::size_t> text;
  std::vector<std::size_t> vision;
  std::size_t dim = 0;

  /// All channels in the main set.
  static ChannelPartition trivial(std::size_t dim) {
    ChannelPartition p;
    p.dim = dim;
    p.main.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) p.main[i] = i;
    return p;
  }

  /// Main set is the complement of the two outlier sets.
  static ChannelPartition from_outliers(std::size_t dim, std::vector<std::size_t> text,
                                        std::vector<std::size_t> vision) {
    ChannelPartition p;
    p.dim = dim;
    std::sort(text.begin(), text.end());
    std::sort(vision.begin(), vision.end());
    p.text = std::move(text);
    p.vision = std::move(vision);
    std::vector<bool> taken(dim, false);
    for (auto c : p.text)
      if (c < dim) taken[c] = true;
    for (auto c : p.vision)
      if (c < dim) taken[c] = true;
    for (std::size_t c = 0; c < dim; ++c)
      if (!taken[c]) p.main.push_back(c);
    p.validate();
    return p;
  }

  /// Checks ascending order, disjointness and coverage of {0..dim-1}.
  void validate() const {
    std::vector<int> owner(dim, 0);
    auto mark = [&](const std::vector<std::size_t>& set, const char* name) {
      for (std::size_t i = 0; i < set.size(); ++i) {
        if (set[i] >= dim)
          throw DimensionError(std::string("partition: ") + name + " index " +
                               std::to_string(set[i]) + " out of range");
        if (i > 0 && set[i] <= set[i - 1])
          throw DimensionError(std::string("partition: ") + name + " set is not strictly ascending");
        if (owner[set[i]]++ != 0)
          throw DimensionError("partition: channel " + std::to_string(set[i]) +
                               " assigned twice");
      }
    };
    mark(main, "main");
    mark(text, "text");
    mark(vision, "vision");
    for (std::size_t c = 0; c < dim; ++c)
      if (owner[c] == 0) throw DimensionError("partition: channel " + std::to_string(c) + " unassigned");
  }

  friend bool operator==(const ChannelPartition&, const ChannelPartition&) = default;
};

/// The three column (or row) blocks of a matrix split by a partition.
struct SplitMatrix {
  Matrix main;
  Matrix text;
  Matrix vision;
};

inline SplitMatrix split_columns(const Matrix& x, const ChannelPartition& p) {
  if (x.cols() != p.dim)
    throw DimensionError("split_columns: matrix has " + std::to_string(x.cols()) +
                         " columns, partition covers " + std::to_string(p.dim));
  return {gather_columns(x, p.main), gather_columns(x, p.text), gather_columns(x, p.vision)};
}

/// Inverse of split_columns.
inline Matrix merge_columns(const SplitMatrix& parts, const ChannelPartition& p) {
  Matrix x(parts.main.rows(), p.dim);
  scatter_columns(x, p.main, parts.main);
  scatter_columns(x, p.text, parts.text);
  scatter_columns(x, p.vision, parts.vision);
  return x;
}

/// Row split of a D_in x D_out weight, matching split_columns on activations.
inline SplitMatrix split_rows(const Matrix& w, const ChannelPartition& p) {
  if (w.rows() != p.dim)
    throw DimensionError("split_rows: matrix has " + std::to_string(w.rows()) +
                         " rows, partition covers " + std::to_string(p.dim));
  return {gather_rows(w, p.main), gather_rows(w, p.text), gather_rows(w, p.vision)};
}

inline Matrix merge_rows(const SplitMatrix& parts, const ChannelPartition& p) {
  Matrix w(p.dim, parts.main.cols());
  scatter_rows(w, p.main, parts.main);
  scatter_rows(w, p.text, parts.text);
  scatter_rows(w, p.vision, parts.vision);
  return w;
}

}  // namespace splitq
