// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Learnable-parameter packing and the analytic straight-through gradient of
// the reconstruction loss with respect to those parameters.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/layer.hpp"

namespace splitq {

/// Which parameter groups are free during calibration.
struct ParamSelection {
  bool p_main = true;
  bool p_text = true;
  bool p_vision = true;
  bool gates = true;
};

namespace detail {

/// Learnable coordinates of a transform: log|d| for Diagonal, entries of P for Dense.
inline void append_transform(std::vector<double>& out, const Transform& t) {
  if (t.kind() == Transform::Kind::Diagonal) {
    const auto l = t.log_scales();
    out.insert(out.end(), l.begin(), l.end());
  } else {
    const Matrix m = t.matrix();
    out.insert(out.end(), m.values().begin(), m.values().end());
  }
}

inline std::size_t transform_param_count(const Transform& t) {
  return t.kind() == Transform::Kind::Diagonal ? t.dim() : t.dim() * t.dim();
}

inline Transform read_transform(const Transform& t, std::span<const double> p) {
  if (t.kind() == Transform::Kind::Diagonal)
    return Transform::from_log_scales({p.begin(), p.end()}, t.signs());
  return Transform::dense(Matrix(t.dim(), t.dim(), {p.begin(), p.end()}));
}

inline bool gate_active(const SplitQLayer& layer, bool smooth) {
  return smooth ? (layer.cws && layer.branch_smooth) : (layer.mac && layer.branch_comp);
}

}  // namespace detail

/// Flattened parameter vector, in the order p_main, p_text, p_vision, smoothing
/// gate, compensation gate. Gates of disabled branches are not included.
inline std::vector<double> pack_params(const SplitQLayer& layer, const ParamSelection& sel) {
  std::vector<double> out;
  if (sel.p_main) detail::append_transform(out, layer.p_main);
  if (sel.p_text) detail::append_transform(out, layer.p_text);
  if (sel.p_vision) detail::append_transform(out, layer.p_vision);
  if (sel.gates) {
    if (detail::gate_active(layer, true))
      out.insert(out.end(), layer.branch_smooth->gate.begin(), layer.branch_smooth->gate.end());
    if (detail::gate_active(layer, false))
      out.insert(out.end(), layer.branch_comp->gate.begin(), layer.branch_comp->gate.end());
  }
  return out;
}

inline std::size_t param_count(const SplitQLayer& layer, const ParamSelection& sel) {
  std::size_t n = 0;
  if (sel.p_main) n += detail::transform_param_count(layer.p_main);
  if (sel.p_text) n += detail::transform_param_count(layer.p_text);
  if (sel.p_vision) n += detail::transform_param_count(layer.p_vision);
  if (sel.gates) {
    if (detail::gate_active(layer, true)) n += layer.branch_smooth->rank();
    if (detail::gate_active(layer, false)) n += layer.branch_comp->rank();
  }
  return n;
}

/// Inverse of pack_params. Branches are re-anchored to the new main transform.
inline SplitQLayer unpack_params(SplitQLayer layer, const ParamSelection& sel,
                                 std::span<const double> p) {
  if (p.size() != param_count(layer, sel)) throw DimensionError("unpack_params: wrong vector length");
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    auto s = p.subspan(at, n);
    at += n;
    return s;
  };
  if (sel.p_main) layer.p_main = detail::read_transform(layer.p_main, take(detail::transform_param_count(layer.p_main)));
  if (sel.p_text) layer.p_text = detail::read_transform(layer.p_text, take(detail::transform_param_count(layer.p_text)));
  if (sel.p_vision)
    layer.p_vision = detail::read_transform(layer.p_vision, take(detail::transform_param_count(layer.p_vision)));
  if (sel.gates) {
    if (detail::gate_active(layer, true)) {
      auto g = take(layer.branch_smooth->rank());
      layer.branch_smooth->gate.assign(g.begin(), g.end());
    }
    if (detail::gate_active(layer, false)) {
      auto g = take(layer.branch_comp->rank());
      layer.branch_comp->gate.assign(g.begin(), g.end());
    }
  }
  if (sel.p_main) {
    if (layer.branch_smooth) layer.branch_smooth = rebase_branch(*layer.branch_smooth, layer.p_main);
    if (layer.branch_comp) layer.branch_comp = rebase_branch(*layer.branch_comp, layer.p_main);
  }
  return layer;
}

namespace detail {

inline Matrix masked(Matrix g, const Mask& mask) {
  auto v = g.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
  return g;
}

/// d/dlog d_j of a term X diag(d): sum_i grad_ij * value_ij.
inline void accumulate_col_log(std::vector<double>& out, const Matrix& grad, const Matrix& value,
                               double sign) {
  for (std::size_t i = 0; i < grad.rows(); ++i)
    for (std::size_t j = 0; j < grad.cols(); ++j) out[j] += sign * grad(i, j) * value(i, j);
}

/// d/dlog d_j of a term diag(1/d) M: -sum_k grad_jk * value_jk.
inline void accumulate_row_log(std::vector<double>& out, const Matrix& grad, const Matrix& value) {
  for (std::size_t j = 0; j < grad.rows(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < grad.cols(); ++k) s += grad(j, k) * value(j, k);
    out[j] -= s;
  }
}

inline std::vector<double> gate_grad(const Matrix& d_vstar, const Matrix& v_base) {
  std::vector<double> g(v_base.rows(), 0.0);
  for (std::size_t k = 0; k < v_base.rows(); ++k)
    for (std::size_t j = 0; j < v_base.cols(); ++j) g[k] += d_vstar(k, j) * v_base(k, j);
  return g;
}

inline std::vector<double> outlier_path_grad(const OutlierPathState& s, const Matrix& g) {
  std::vector<double> out(s.act.value.cols(), 0.0);
  if (out.empty()) return out;
  const Matrix d_act = masked(matmul(g, transpose(s.weight.quant)), s.act.mask);
  const Matrix d_w = masked(matmul(transpose(s.act.quant), g), s.weight.mask);
  accumulate_col_log(out, d_act, s.act.value, 1.0);
  accumulate_row_log(out, d_w, s.weight.value);
  return out;
}

}  // namespace detail

/// Straight-through gradient of the loss with respect to pack_params(layer, sel),
/// given dL/dY for the forward pass that produced `s`. Quantizer scales are
/// treated as constants and rounding as the identity inside the clamp range.
/// Only Diagonal transforms are supported here.
inline std::vector<double> backward(const SplitQLayer& layer, const detail::ForwardState& s,
                                    const Matrix& dy, const ParamSelection& sel) {
  using detail::masked;
  auto require_diag = [](const Transform& t) {
    if (t.kind() != Transform::Kind::Diagonal)
      throw ConfigError("analytic gradients support diagonal transforms only");
  };
  if (sel.p_main) require_diag(layer.p_main);
  if (sel.p_text) require_diag(layer.p_text);
  if (sel.p_vision) require_diag(layer.p_vision);

  const auto& m = s.main;
  std::vector<double> g_main(m.act.value.cols(), 0.0);
  std::vector<double> g_smooth, g_comp;

  Matrix d_ahat = matmul(dy, transpose(m.residual.quant));
  const Matrix d_res = masked(matmul(transpose(m.act.quant), dy), m.residual.mask);
  Matrix d_b = d_res;
  Matrix d_a_direct(m.act.value.rows(), m.act.value.cols());

  if (layer.cws) {
    const LowRankBranch& br = *layer.branch_smooth;
    const Matrix dy_vt = matmul(dy, transpose(m.vs.quant));  // T x r
    d_ahat += matmul(dy_vt, transpose(m.us.quant));
    const Matrix d_us_hat = matmul(transpose(m.act.quant), dy_vt);
    const Matrix d_vs_hat = matmul(transpose(matmul(m.act.quant, m.us.quant)), dy);
    // residual = B - U_s V_s
    const Matrix d_us = masked(d_us_hat, m.us.mask) - matmul(d_res, transpose(m.vs.value));
    const Matrix d_vs = masked(d_vs_hat, m.vs.mask) - matmul(transpose(m.us.value), d_res);
    g_smooth = detail::gate_grad(d_vs, br.v_base);
    detail::accumulate_row_log(g_main, d_us, m.us.value);
  }

  if (layer.mac && !m.text_rows.empty()) {
    const LowRankBranch& br = *layer.branch_comp;
    const Matrix dy_t = gather_rows(dy, m.text_rows);
    const Matrix dyt_vt = matmul(dy_t, transpose(m.vc.quant));  // n_t x r
    const Matrix d_err = masked(matmul(dyt_vt, transpose(m.uc.quant)), m.err.mask);
    for (std::size_t i = 0; i < m.text_rows.size(); ++i) {
      auto a = d_a_direct.row(m.text_rows[i]);
      auto h = d_ahat.row(m.text_rows[i]);
      auto e = d_err.row(i);
      for (std::size_t j = 0; j < e.size(); ++j) {
        a[j] += e[j];
        h[j] -= e[j];
      }
    }
    const Matrix d_uc = masked(matmul(transpose(m.err.quant), dyt_vt), m.uc.mask);
    const Matrix d_vc = masked(matmul(transpose(matmul(m.err.quant, m.uc.quant)), dy_t), m.vc.mask);
    g_comp = detail::gate_grad(d_vc, br.v_base);
    detail::accumulate_row_log(g_main, d_uc, m.uc.value);
  } else if (layer.mac) {
    g_comp.assign(layer.branch_comp->rank(), 0.0);
  }

  Matrix d_a = d_a_direct + masked(d_ahat, m.act.mask);
  detail::accumulate_col_log(g_main, d_a, m.act.value, 1.0);
  detail::accumulate_row_log(g_main, d_b, m.b);

  std::vector<double> out;
  if (sel.p_main) out.insert(out.end(), g_main.begin(), g_main.end());
  if (sel.p_text) {
    auto g = detail::outlier_path_grad(s.text, dy);
    out.insert(out.end(), g.begin(), g.end());
  }
  if (sel.p_vision) {
    auto g = detail::outlier_path_grad(s.vision, dy);
    out.insert(out.end(), g.begin(), g.end());
  }
  if (sel.gates) {
    if (detail::gate_active(layer, true)) out.insert(out.end(), g_smooth.begin(), g_smooth.end());
    if (detail::gate_active(layer, false)) out.insert(out.end(), g_comp.begin(), g_comp.end());
  }
  return out;
}

/// dL/dY of the mean squared error.
inline Matrix mse_grad(const Matrix& y, const Matrix& y_ref) {
  Matrix g = y - y_ref;
  const double scale = y.empty() ? 0.0 : 2.0 / static_cast<double>(y.size());
  for (double& v : g.values()) v *= scale;
  return g;
}

/// Loss and straight-through gradient at the layer's current parameters.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline LossGrad loss_and_grad(const SplitQLayer& layer, const ActivationBatch& batch,
                              const Matrix& y_ref, const ParamSelection& sel) {
  detail::ForwardState st;
  const Matrix y = forward_traced(layer, batch, nullptr, &st);
  LossGrad out;
  out.loss = recon_loss(y, y_ref);
  out.grad = backward(layer, st, mse_grad(y, y_ref), sel);
  return out;
}

/// Central differences of the replayed straight-through surrogate around the
/// layer's current parameters. Works for any transform kind; used for Dense
/// transforms and as an independent check of `backward`.
inline LossGrad surrogate_fd_grad(const SplitQLayer& layer, const ActivationBatch& batch,
                                  const Matrix& y_ref, const ParamSelection& sel, double h = 1e-6) {
  detail::QuantTape tape(detail::QuantTape::Mode::Record);
  LossGrad out;
  out.loss = recon_loss(forward_traced(layer, batch, &tape, nullptr), y_ref);
  const std::vector<double> p0 = pack_params(layer, sel);
  out.grad.assign(p0.size(), 0.0);
  auto eval = [&](const std::vector<double>& p) {
    tape.start_replay();
    return recon_loss(forward_traced(unpack_params(layer, sel, p), batch, &tape, nullptr), y_ref);
  };
  std::vector<double> p = p0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(p0[i]));
    p[i] = p0[i] + step;
    const double up = eval(p);
    p[i] = p0[i] - step;
    const double down = eval(p);
    p[i] = p0[i];
    out.grad[i] = (up - down) / (2.0 * step);
  }
  return out;
}

}  // namespace splitq
