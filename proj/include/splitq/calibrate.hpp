// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/gradient.hpp"
#include "splitq/layer.hpp"
#include "splitq/mocd.hpp"
#include "splitq/synth.hpp"

namespace splitq {

enum class GradMode { Analytic, FiniteDifference };

struct CalibConfig {
  static constexpr std::size_t kMaxFiniteDifferenceParams = 4096;
  static constexpr std::size_t kMaxLearnableDenseDim = 32;

  std::size_t steps = 200;
  double learning_rate = 5e-3;
  std::uint64_t seed = 0;
  bool learn_p_main = true;
  bool learn_p_text = true;
  bool learn_p_vision = true;
  bool learn_gates = true;
  GradMode grad_mode = GradMode::Analytic;

  ParamSelection selection() const { return {learn_p_main, learn_p_text, learn_p_vision, learn_gates}; }

  void validate() const {
    if (steps == 0) throw ConfigError("calibration steps must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be positive");
  }
};

struct LossTrace {
  std::vector<double> losses;  // losses[0] is the starting point
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
};

struct CalibResult {
  SplitQLayer layer;
  LossTrace trace;
};

namespace detail {

inline void check_learnable(const SplitQLayer& layer, const CalibConfig& cfg) {
  const ParamSelection sel = cfg.selection();
  auto check = [&](bool on, const Transform& t, const char* name) {
    if (!on || t.kind() != Transform::Kind::Dense) return;
    if (cfg.grad_mode == GradMode::Analytic)
      throw ConfigError(std::string("dense transform ") + name +
                        " is learnable only with finite-difference gradients");
    if (t.dim() > CalibConfig::kMaxLearnableDenseDim)
      throw ConfigError(std::string("dense transform ") + name + " is too large to learn");
  };
  check(sel.p_main, layer.p_main, "p_main");
  check(sel.p_text, layer.p_text, "p_text");
  check(sel.p_vision, layer.p_vision, "p_vision");
  if (cfg.grad_mode == GradMode::FiniteDifference &&
      param_count(layer, sel) > CalibConfig::kMaxFiniteDifferenceParams)
    throw ConfigError("too many learnable parameters for finite-difference gradients");
}

}  // namespace detail

/// Gradient descent on the reconstruction MSE against X W, with a cosine-decayed
/// step size. Steps follow the gradient of log(loss), i.e. the raw gradient
/// divided by the current loss, so the learning rate does not depend on the
/// scale of the data.
/// Returns the parameters of the best step seen, including step 0.
inline CalibResult calibrate(const SplitQLayer& layer, const Matrix& w, const ActivationBatch& batch,
                             const CalibConfig& cfg) {
  cfg.validate();
  layer.validate();
  detail::check_learnable(layer, cfg);
  const Matrix y_ref = forward_reference(w, batch);
  const double ref_energy = recon_loss(y_ref, Matrix(y_ref.rows(), y_ref.cols()));
  double loss_scale = 0.0;
  const ParamSelection sel = cfg.selection();

  CalibResult result{layer, {}};
  SplitQLayer current = layer;
  std::vector<double> params = pack_params(current, sel);

  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    LossGrad lg;
    if (params.empty() || step == cfg.steps) {
      lg.loss = recon_loss(forward(current, batch), y_ref);
    } else if (cfg.grad_mode == GradMode::Analytic) {
      lg = loss_and_grad(current, batch, y_ref, sel);
    } else {
      lg = surrogate_fd_grad(current, batch, y_ref, sel);
    }
    if (!std::isfinite(lg.loss))
      throw NumericalError("calibration loss became non-finite at step " + std::to_string(step));
    result.trace.losses.push_back(lg.loss);
    if (lg.loss < result.trace.best_loss) {
      result.trace.best_loss = lg.loss;
      result.trace.best_step = step;
      result.layer = current;
    }
    if (params.empty() || step == cfg.steps) continue;
    loss_scale = std::max({lg.loss, 1e-12 * ref_energy, 1e-300});

    const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
    const double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = lg.grad[i] / loss_scale;
      if (!std::isfinite(g))
        throw NumericalError("calibration gradient became non-finite at step " + std::to_string(step));
      params[i] -= lr * g;
    }
    current = unpack_params(current, sel, params);
  }
  return result;
}

/// One row of a channel-selection stability table.
struct StabilityRow {
  std::size_t subset_size = 0;
  double mean_jaccard = 0.0;
  double std_jaccard = 0.0;
};

namespace detail {

/// Rows of one modality cut into consecutive blocks of `width` tokens; a
/// trailing partial block is dropped.
inline std::vector<std::vector<std::size_t>> token_blocks(const ActivationBatch& batch, ModalityTag tag,
                                                          std::size_t width) {
  const auto rows = batch.rows_with(tag);
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t i = 0; i + width <= rows.size(); i += width)
    blocks.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(i),
                        rows.begin() + static_cast<std::ptrdiff_t>(i + width));
  return blocks;
}

inline std::vector<std::size_t> outlier_union(const ChannelPartition& p) {
  std::vector<std::size_t> u = p.text;
  u.insert(u.end(), p.vision.begin(), p.vision.end());
  std::sort(u.begin(), u.end());
  return u;
}

}  // namespace detail

/// Jaccard similarity of the selected outlier channels (text and vision
/// together) between random calibration subsets and a reference subset.
///
/// A calibration sample is a block of `tokens_per_sample` consecutive text
/// tokens paired with a block of as many consecutive vision tokens, so a
/// subset of n samples holds n * tokens_per_sample tokens of each modality.
/// The reference subset is drawn once; each subset size then gets `trials`
/// fresh draws. All draws come from one generator seeded with `seed`.
inline std::vector<StabilityRow> stability_report(const ActivationBatch& batch, const MocdConfig& cfg,
                                                  const std::vector<std::size_t>& subset_sizes,
                                                  std::size_t reference_size, std::size_t trials,
                                                  std::uint64_t seed, std::size_t tokens_per_sample = 1) {
  if (tokens_per_sample == 0) throw ConfigError("stability: tokens_per_sample must be positive");
  const auto text_blocks = detail::token_blocks(batch, ModalityTag::Text, tokens_per_sample);
  const auto vision_blocks = detail::token_blocks(batch, ModalityTag::Vision, tokens_per_sample);
  const std::size_t available = std::min(text_blocks.size(), vision_blocks.size());
  auto check = [&](std::size_t n, const char* what) {
    if (n == 0 || n > available)
      throw ConfigError(std::string("stability: ") + what + " " + std::to_string(n) + " outside [1, " +
                        std::to_string(available) + "] available samples");
  };
  check(reference_size, "reference size");
  for (auto n : subset_sizes) check(n, "subset size");
  if (trials == 0) throw ConfigError("stability: trials must be positive");

  Rng rng(seed);
  auto draw = [&](std::size_t n) {
    std::vector<std::size_t> rows;
    for (const auto* blocks : {&text_blocks, &vision_blocks}) {
      std::vector<std::size_t> pick(blocks->size());
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      rng.shuffle(pick);
      for (std::size_t i = 0; i < n; ++i)
        rows.insert(rows.end(), (*blocks)[pick[i]].begin(), (*blocks)[pick[i]].end());
    }
    std::sort(rows.begin(), rows.end());
    return detail::outlier_union(build_partition(batch.select(rows), cfg));
  };

  const auto ref = draw(reference_size);
  std::vector<StabilityRow> table;
  for (std::size_t n : subset_sizes) {
    std::vector<double> sims;
    for (std::size_t t = 0; t < trials; ++t) sims.push_back(jaccard(ref, draw(n)));
    StabilityRow row;
    row.subset_size = n;
    row.mean_jaccard = std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
    double var = 0.0;
    for (double s : sims) var += (s - row.mean_jaccard) * (s - row.mean_jaccard);
    row.std_jaccard = std::sqrt(var / static_cast<double>(sims.size()));
    table.push_back(row);
  }
  return table;
}

}  // namespace splitq
