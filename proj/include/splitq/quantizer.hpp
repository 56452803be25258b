// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"

namespace splitq {

/// Which axis shares one scale/zero-point pair.
enum class Granularity {
  PerTensor,   // one group
  PerChannel,  // one group per column (output channel of a D_in x D_out weight)
  PerToken,    // one group per row
};

/// Uniform affine quantizer configuration.
///
/// `bits == kFullPrecision` turns the quantizer into the identity; the layer
/// tests rely on this mode because it makes the output cancellation identities
/// exact.
struct QuantSpec {
  static constexpr int kFullPrecision = std::numeric_limits<int>::max();

  int bits = 8;
  bool symmetric = true;
  Granularity granularity = Granularity::PerTensor;

  static QuantSpec full_precision(Granularity g = Granularity::PerTensor) {
    return {kFullPrecision, true, g};
  }
  /// Per-token asymmetric, the default for activations.
  static QuantSpec activation(int bits) { return {bits, false, Granularity::PerToken}; }
  /// Per-output-channel symmetric, the default for weights.
  static QuantSpec weight(int bits) { return {bits, true, Granularity::PerChannel}; }

  bool is_full_precision() const noexcept { return bits == kFullPrecision; }

  double q_min() const noexcept {
    return symmetric ? -(std::ldexp(1.0, bits - 1) - 1.0) : 0.0;
  }
  double q_max() const noexcept {
    return symmetric ? std::ldexp(1.0, bits - 1) - 1.0 : std::ldexp(1.0, bits) - 1.0;
  }

  void validate() const {
    if (!is_full_precision() && (bits < 2 || bits > 16))
      throw ConfigError("quantizer bits must be in [2, 16], got " + std::to_string(bits));
  }

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// Same spec with the bit width raised to at least `floor_bits`.
inline QuantSpec with_bit_floor(QuantSpec spec, int floor_bits) {
  if (!spec.is_full_precision()) spec.bits = std::max(spec.bits, floor_bits);
  return spec;
}

/// Scale and zero-point per group.
struct QuantParams {
  std::vector<double> scales;
  std::vector<std::int64_t> zero_points;
  Granularity granularity = Granularity::PerTensor;
};

namespace detail {

inline std::size_t group_count(const Matrix& m, Granularity g) {
  switch (g) {
    case Granularity::PerTensor: return 1;
    case Granularity::PerChannel: return m.cols();
    case Granularity::PerToken: return m.rows();
  }
  return 1;
}

inline std::size_t group_of(std::size_t r, std::size_t c, Granularity g) {
  switch (g) {
    case Granularity::PerTensor: return 0;
    case Granularity::PerChannel: return c;
    case Granularity::PerToken: return r;
  }
  return 0;
}

}  // namespace detail

/// Min/max calibration per group. The observed range is widened to include
/// zero, so a group of one sign never saturates against a clamped zero-point.
/// An all-zero group gets scale 1 and zero-point 0.
inline QuantParams compute_params(const Matrix& m, const QuantSpec& spec) {
  spec.validate();
  const std::size_t groups = detail::group_count(m, spec.granularity);
  std::vector<double> lo(groups, 0.0);
  std::vector<double> hi(groups, 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const std::size_t g = detail::group_of(r, c, spec.granularity);
      lo[g] = std::min(lo[g], m(r, c));
      hi[g] = std::max(hi[g], m(r, c));
    }
  }

  QuantParams p;
  p.granularity = spec.granularity;
  p.scales.assign(groups, 1.0);
  p.zero_points.assign(groups, 0);
  if (spec.is_full_precision()) return p;

  const double qmin = spec.q_min();
  const double qmax = spec.q_max();
  for (std::size_t g = 0; g < groups; ++g) {
    if (spec.symmetric) {
      const double amax = std::max(-lo[g], hi[g]);
      if (amax > 0.0) p.scales[g] = amax / qmax;
    } else if (hi[g] > lo[g]) {
      const double s = (hi[g] - lo[g]) / (qmax - qmin);
      p.scales[g] = s;
      p.zero_points[g] = static_cast<std::int64_t>(std::clamp(std::round(-lo[g] / s), qmin, qmax));
    }
  }
  return p;
}

namespace detail {

inline void check_params(const Matrix& m, const QuantParams& p, const QuantSpec& spec) {
  const std::size_t groups = group_count(m, spec.granularity);
  if (p.granularity != spec.granularity || p.scales.size() != groups ||
      p.zero_points.size() != groups)
    throw DimensionError("quantizer: parameter groups do not match tensor shape and granularity");
}

}  // namespace detail

/// (clamp(round(x/S) + z, q_min, q_max) - z) * S elementwise, rounding half
/// away from zero. When `in_range` is given it receives 1 where the clamp was
/// inactive and 0 where it saturated; this is the straight-through mask.
inline Matrix fake_quantize(const Matrix& m, const QuantParams& p, const QuantSpec& spec,
                            std::vector<std::uint8_t>* in_range = nullptr) {
  detail::check_params(m, p, spec);
  if (in_range) in_range->assign(m.size(), 1);
  if (spec.is_full_precision()) return m;

  const double qmin = spec.q_min();
  const double qmax = spec.q_max();
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const std::size_t g = detail::group_of(r, c, spec.granularity);
      const double s = p.scales[g];
      const double z = static_cast<double>(p.zero_points[g]);
      const double q = std::round(m(r, c) / s) + z;
      const double qc = std::clamp(q, qmin, qmax);
      if (in_range && qc != q) (*in_range)[r * m.cols() + c] = 0;
      out(r, c) = (qc - z) * s;
    }
  }
  return out;
}

/// Calibrate and quantize in one call.
inline Matrix fake_quantize(const Matrix& m, const QuantSpec& spec) {
  return fake_quantize(m, compute_params(m, spec), spec);
}

/// M - Q(M).
inline Matrix quant_error(const Matrix& m, const QuantParams& p, const QuantSpec& spec) {
  return m - fake_quantize(m, p, spec);
}

}  // namespace splitq
