// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/lowrank.hpp"
#include "splitq/matrix.hpp"
#include "splitq/partition.hpp"
#include "splitq/quantizer.hpp"
#include "splitq/transform.hpp"

namespace splitq {

enum class TransformInit {
  Identity,
  Smooth,  // diagonal scales from calibration activation peaks
};

/// Knobs for assembling a layer from a full-precision weight.
struct LayerOptions {
  QuantSpec act_spec = QuantSpec::activation(4);
  QuantSpec weight_spec = QuantSpec::weight(4);
  bool cws = true;
  bool mac = true;
  double rank_ratio_cws = 0.02;
  double rank_ratio_mac = 0.03;
  int aux_bits_floor = 4;
  Transform::Kind transform_kind = Transform::Kind::Diagonal;
  TransformInit init = TransformInit::Smooth;
  double smooth_alpha = 0.5;

  void validate() const {
    act_spec.validate();
    weight_spec.validate();
    if (!(rank_ratio_cws > 0.0 && rank_ratio_cws <= 1.0)) throw ConfigError("rank_ratio_cws must be in (0, 1]");
    if (!(rank_ratio_mac > 0.0 && rank_ratio_mac <= 1.0)) throw ConfigError("rank_ratio_mac must be in (0, 1]");
    if (aux_bits_floor < 2 || aux_bits_floor > 16) throw ConfigError("aux_bits_floor must be in [2, 16]");
  }
};

/// Calibrated three-path quantized linear layer.
///
/// Main channels go through a shared transform with optional weight smoothing
/// (CWS) and text-only activation compensation (MAC); the text and vision
/// outlier channels each get their own transform and run at no fewer than
/// `aux_bits_floor` bits.
struct SplitQLayer {
  ChannelPartition partition;
  Matrix w_main, w_text, w_vision;
  Transform p_main, p_text, p_vision;
  std::optional<LowRankBranch> branch_smooth;
  std::optional<LowRankBranch> branch_comp;
  QuantSpec act_spec = QuantSpec::activation(4);
  QuantSpec weight_spec = QuantSpec::weight(4);
  int aux_bits_floor = 4;
  bool cws = false;
  bool mac = false;

  std::size_t d_out() const noexcept { return w_main.cols(); }
  QuantSpec aux_act_spec() const { return with_bit_floor(act_spec, aux_bits_floor); }
  QuantSpec aux_weight_spec() const { return with_bit_floor(weight_spec, aux_bits_floor); }

  void validate() const {
    partition.validate();
    act_spec.validate();
    weight_spec.validate();
    if (aux_bits_floor < 2 || aux_bits_floor > 16) throw ConfigError("layer: aux_bits_floor must be in [2, 16]");
    const std::size_t out = d_out();
    if (w_main.rows() != partition.main.size() || w_text.rows() != partition.text.size() ||
        w_vision.rows() != partition.vision.size())
      throw DimensionError("layer: split weight rows do not match the partition");
    if (w_text.cols() != out || w_vision.cols() != out)
      throw DimensionError("layer: split weights disagree on output width");
    if (p_main.dim() != w_main.rows() || p_text.dim() != w_text.rows() ||
        p_vision.dim() != w_vision.rows())
      throw DimensionError("layer: transform dims do not match path widths");
    auto check_branch = [&](const std::optional<LowRankBranch>& b, const char* name) {
      if (!b) return;
      if (b->u_star.rows() != w_main.rows() || b->v_base.cols() != out || b->u_basis.rows() != w_main.rows() ||
          b->u_basis.cols() != b->rank() ||
          b->u_star.cols() != b->rank() || b->v_base.rows() != b->rank() ||
          b->rank() > std::min(w_main.rows(), out))
        throw DimensionError(std::string("layer: ") + name + " branch shape mismatch");
    };
    check_branch(branch_smooth, "smoothing");
    check_branch(branch_comp, "compensation");
    if (cws && !branch_smooth) throw ConfigError("layer: CWS enabled without a smoothing branch");
    if (mac && !branch_comp) throw ConfigError("layer: MAC enabled without a compensation branch");
  }
};

/// Split W by the partition, initialize per-path transforms, and build the
/// low-rank branches that the enabled toggles need. `calib` feeds the Smooth
/// transform initialization and is ignored otherwise.
inline SplitQLayer build_layer(const Matrix& w, const ChannelPartition& partition,
                               const LayerOptions& opt, const ActivationBatch* calib = nullptr) {
  opt.validate();
  partition.validate();
  if (w.rows() != partition.dim)
    throw DimensionError("build_layer: weight has " + std::to_string(w.rows()) +
                         " input rows, partition covers " + std::to_string(partition.dim));

  SplitQLayer layer;
  layer.partition = partition;
  auto ws = split_rows(w, partition);
  layer.w_main = std::move(ws.main);
  layer.w_text = std::move(ws.text);
  layer.w_vision = std::move(ws.vision);
  layer.act_spec = opt.act_spec;
  layer.weight_spec = opt.weight_spec;
  layer.aux_bits_floor = opt.aux_bits_floor;
  layer.cws = opt.cws;
  layer.mac = opt.mac;

  std::optional<SplitMatrix> xs;
  if (opt.init == TransformInit::Smooth && calib != nullptr) {
    if (calib->channels() != partition.dim)
      throw DimensionError("build_layer: calibration batch width does not match the partition");
    xs = split_columns(calib->data(), partition);
  }
  auto make = [&](std::size_t dim, const Matrix* x) {
    return init_transform(dim, opt.transform_kind, xs ? x : nullptr, opt.smooth_alpha);
  };
  layer.p_main = make(layer.w_main.rows(), xs ? &xs->main : nullptr);
  layer.p_text = make(layer.w_text.rows(), xs ? &xs->text : nullptr);
  layer.p_vision = make(layer.w_vision.rows(), xs ? &xs->vision : nullptr);

  const std::size_t dm = layer.w_main.rows();
  if ((opt.cws || opt.mac) && dm == 0)
    throw ConfigError("build_layer: CWS/MAC need a nonempty main channel set");
  if (opt.cws)
    layer.branch_smooth =
        build_branch(layer.w_main, layer.p_main, rank_from_ratio(opt.rank_ratio_cws, dm, w.cols()));
  if (opt.mac)
    layer.branch_comp =
        build_branch(layer.w_main, layer.p_main, rank_from_ratio(opt.rank_ratio_mac, dm, w.cols()));
  layer.validate();
  return layer;
}

/// Y = X W, the full-precision target.
inline Matrix forward_reference(const Matrix& w, const ActivationBatch& batch) {
  return matmul(batch.data(), w);
}

namespace detail {

/// Records every quantizer application of one forward pass (offset Q(x) - x,
/// saturation mask, output). In replay mode each quantizer is replaced by
/// x -> x + recorded offset where the clamp was inactive and by the recorded
/// output where it saturated. That surrogate is smooth in the layer parameters
/// and its exact gradient is the straight-through gradient.
class QuantTape {
 public:
  enum class Mode { Record, Replay };

  explicit QuantTape(Mode mode = Mode::Record) : mode_(mode) {}

  void start_replay() {
    mode_ = Mode::Replay;
    cursor_ = 0;
  }

  Matrix quantize(const Matrix& x, const QuantSpec& spec, std::vector<std::uint8_t>& mask) {
    if (mode_ == Mode::Record) {
      Matrix q = fake_quantize(x, compute_params(x, spec), spec, &mask);
      records_.push_back({q - x, mask, q});
      return q;
    }
    if (cursor_ >= records_.size()) throw DimensionError("quant tape: replay past the recording");
    const Record& rec = records_[cursor_++];
    if (rec.offset.rows() != x.rows() || rec.offset.cols() != x.cols())
      throw DimensionError("quant tape: replay shape differs from the recording");
    mask = rec.mask;
    Matrix out(x.rows(), x.cols());
    auto o = out.values();
    auto xv = x.values();
    auto off = rec.offset.values();
    auto qv = rec.output.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = mask[i] ? xv[i] + off[i] : qv[i];
    return out;
  }

 private:
  struct Record {
    Matrix offset;
    std::vector<std::uint8_t> mask;
    Matrix output;
  };
  Mode mode_;
  std::size_t cursor_ = 0;
  std::vector<Record> records_;
};

using Mask = std::vector<std::uint8_t>;

/// A quantized operand: input, quantized value, straight-through mask.
struct QuantOperand {
  Matrix value;
  Matrix quant;
  Mask mask;
};

inline QuantOperand quantize_operand(Matrix value, const QuantSpec& spec, QuantTape* tape) {
  QuantOperand op;
  op.value = std::move(value);
  if (tape) {
    op.quant = tape->quantize(op.value, spec, op.mask);
  } else {
    op.quant = fake_quantize(op.value, compute_params(op.value, spec), spec, &op.mask);
  }
  return op;
}

struct OutlierPathState {
  Matrix x;
  QuantOperand act;     // X P
  QuantOperand weight;  // P^-1 W
};

struct MainPathState {
  Matrix x;
  QuantOperand act;       // X_m P_m
  Matrix b;               // P_m^-1 W_m
  QuantOperand residual;  // P_m^-1 W_m - U_s V_s, or P_m^-1 W_m without CWS
  QuantOperand us, vs;    // CWS factors
  std::vector<std::size_t> text_rows;
  QuantOperand err;     // (X_m P_m - Q(X_m P_m)) on text rows
  QuantOperand uc, vc;  // MAC factors
};

struct ForwardState {
  OutlierPathState text;
  OutlierPathState vision;
  MainPathState main;
  std::vector<ModalityTag> tags;
  Matrix y;
};

inline OutlierPathState run_outlier_path(Matrix x, const Matrix& w, const Transform& p,
                                         const QuantSpec& act_spec, const QuantSpec& weight_spec,
                                         QuantTape* tape, Matrix& y) {
  OutlierPathState s;
  s.x = std::move(x);
  s.act = quantize_operand(apply_right(s.x, p), act_spec, tape);
  s.weight = quantize_operand(apply_inv_left(w, p), weight_spec, tape);
  y = matmul(s.act.quant, s.weight.quant);
  return s;
}

}  // namespace detail

/// The quantized forward pass. `tape` (optional) records or replays the
/// quantizers; `state` (optional) receives the intermediates for backprop.
inline Matrix forward_traced(const SplitQLayer& layer, const ActivationBatch& batch,
                             detail::QuantTape* tape, detail::ForwardState* state) {
  if (batch.channels() != layer.partition.dim)
    throw DimensionError("forward: batch has " + std::to_string(batch.channels()) +
                         " channels, layer expects " + std::to_string(layer.partition.dim));
  if (layer.cws && !layer.branch_smooth) throw ConfigError("forward: CWS enabled without a branch");
  if (layer.mac && !layer.branch_comp) throw ConfigError("forward: MAC enabled without a branch");

  detail::ForwardState local;
  detail::ForwardState& s = state ? *state : local;
  auto xs = split_columns(batch.data(), layer.partition);
  const QuantSpec aux_act = layer.aux_act_spec();
  const QuantSpec aux_w = layer.aux_weight_spec();

  Matrix y_text, y_vision;
  s.text = detail::run_outlier_path(std::move(xs.text), layer.w_text, layer.p_text, aux_act, aux_w,
                                    tape, y_text);
  s.vision = detail::run_outlier_path(std::move(xs.vision), layer.w_vision, layer.p_vision, aux_act,
                                      aux_w, tape, y_vision);

  auto& m = s.main;
  m.x = std::move(xs.main);
  m.act = detail::quantize_operand(apply_right(m.x, layer.p_main), layer.act_spec, tape);
  m.b = apply_inv_left(layer.w_main, layer.p_main);

  Matrix y_main;
  if (layer.cws) {
    const LowRankBranch& br = *layer.branch_smooth;
    Matrix vs = br.v_star();
    m.residual = detail::quantize_operand(m.b - matmul(br.u_star, vs), layer.weight_spec, tape);
    m.us = detail::quantize_operand(br.u_star, aux_w, tape);
    m.vs = detail::quantize_operand(std::move(vs), aux_w, tape);
    y_main = matmul(m.act.quant, m.residual.quant);
    y_main += matmul(matmul(m.act.quant, m.us.quant), m.vs.quant);
  } else {
    m.residual = detail::quantize_operand(m.b, layer.weight_spec, tape);
    y_main = matmul(m.act.quant, m.residual.quant);
  }

  m.text_rows.clear();
  if (layer.mac) {
    m.text_rows = batch.rows_with(ModalityTag::Text);
    if (!m.text_rows.empty()) {
      const LowRankBranch& br = *layer.branch_comp;
      Matrix err = gather_rows(m.act.value, m.text_rows) - gather_rows(m.act.quant, m.text_rows);
      m.err = detail::quantize_operand(std::move(err), aux_act, tape);
      m.uc = detail::quantize_operand(br.u_star, aux_w, tape);
      m.vc = detail::quantize_operand(br.v_star(), aux_w, tape);
      const Matrix comp = matmul(matmul(m.err.quant, m.uc.quant), m.vc.quant);
      for (std::size_t i = 0; i < m.text_rows.size(); ++i) {
        auto dst = y_main.row(m.text_rows[i]);
        auto src = comp.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }

  // Fixed merge order: main, text, vision.
  Matrix y = y_main;
  y += y_text;
  y += y_vision;
  s.tags = batch.tags();
  if (state) s.y = y;
  return y;
}

inline Matrix forward(const SplitQLayer& layer, const ActivationBatch& batch) {
  return forward_traced(layer, batch, nullptr, nullptr);
}

}  // namespace splitq
