// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/layer.hpp"
#include "splitq/matrix.hpp"
#include "splitq/quantizer.hpp"

namespace splitq {

/// Shortest round-trip decimal form; independent of the C locale.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Minimal CSV builder: a `# key=value` preamble, one header row, '\n' endings.
/// Fields are numbers or identifiers, so no quoting is done.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_strings(header); }

  CsvWriter& preamble(std::string_view key, std::string_view value) {
    pre_ += "# ";
    pre_ += key;
    pre_ += '=';
    pre_ += value;
    pre_ += '\n';
    return *this;
  }

  /// Appends one row; the field count must match the header.
  template <typename... Fields>
  void add_row(const Fields&... fields) {
    row_strings({cell(fields)...});
  }

  std::string str() const { return pre_ + body_; }

 private:
  void row_strings(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
      throw DimensionError("csv: row has " + std::to_string(cells.size()) + " fields, header has " +
                           std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) body_ += ',';
      body_ += cells[i];
    }
    body_ += '\n';
  }

  static std::string cell(double v) { return format_double(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return std::string(v); }

  std::size_t columns_;
  std::string pre_;
  std::string body_;
};

/// Peak |activation| per channel and modality (0 when a modality is absent).
struct ChannelStat {
  std::size_t channel = 0;
  double text_max_abs = 0.0;
  double vision_max_abs = 0.0;
};

inline std::vector<ChannelStat> channel_stats(const ActivationBatch& batch) {
  std::vector<ChannelStat> out(batch.channels());
  for (std::size_t c = 0; c < out.size(); ++c) out[c].channel = c;
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    const bool text = batch.tags()[i] == ModalityTag::Text;
    auto row = batch.data().row(i);
    for (std::size_t c = 0; c < out.size(); ++c) {
      double& slot = text ? out[c].text_max_abs : out[c].vision_max_abs;
      slot = std::max(slot, std::abs(row[c]));
    }
  }
  return out;
}

/// Weight that the main path effectively multiplies by: Q(P^-1 W_m), or with
/// weight smoothing Q(P^-1 W_m - U_s V_s) + Q(U_s) Q(V_s).
inline Matrix effective_main_weight(const SplitQLayer& layer) {
  const Matrix b = apply_inv_left(layer.w_main, layer.p_main);
  if (!layer.cws || !layer.branch_smooth) return fake_quantize(b, layer.weight_spec);
  const auto& br = *layer.branch_smooth;
  const Matrix resid = b - br.product();
  const QuantSpec aux = layer.aux_weight_spec();
  return fake_quantize(resid, layer.weight_spec) +
         matmul(fake_quantize(br.u_star, aux), fake_quantize(br.v_star(), aux));
}

/// Mean absolute error of each input channel (row) of the main-path weight.
inline std::vector<double> main_weight_row_mae(const SplitQLayer& layer) {
  const Matrix b = apply_inv_left(layer.w_main, layer.p_main);
  const Matrix err = b - effective_main_weight(layer);
  std::vector<double> mae(err.rows(), 0.0);
  for (std::size_t i = 0; i < err.rows(); ++i) {
    double s = 0.0;
    for (double e : err.row(i)) s += std::abs(e);
    mae[i] = err.cols() == 0 ? 0.0 : s / static_cast<double>(err.cols());
  }
  return mae;
}

/// Mean of `values` within each of `bins` equal-count bins after an ascending
/// sort. Bin b holds sorted positions [floor(b n / bins), floor((b+1) n / bins)).
inline std::vector<double> decile_means(std::vector<double> values, std::size_t bins = 10) {
  if (values.size() < bins)
    throw DimensionError("decile_means: " + std::to_string(values.size()) + " values for " +
                         std::to_string(bins) + " bins");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<double> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    out[b] = std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(lo),
                             values.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
             static_cast<double>(hi - lo);
  }
  return out;
}

/// Reconstruction MSE over all rows and per modality (0 for an absent modality).
struct ReconReport {
  double mse_all = 0.0;
  double mse_text = 0.0;
  double mse_vision = 0.0;
};

inline ReconReport recon_report(const Matrix& y, const Matrix& y_ref, const ActivationBatch& batch) {
  ReconReport r;
  r.mse_all = recon_loss(y, y_ref);
  auto part = [&](ModalityTag tag) {
    const auto rows = batch.rows_with(tag);
    if (rows.empty()) return 0.0;
    return recon_loss(gather_rows(y, rows), gather_rows(y_ref, rows));
  };
  r.mse_text = part(ModalityTag::Text);
  r.mse_vision = part(ModalityTag::Vision);
  return r;
}

}  // namespace splitq
