// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"

namespace splitq {

/// Seeded generator with portable uniform and normal draws. The standard
/// distributions are implementation-defined, so they are not used for
/// anything that ends up in a file.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal by Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Modality-heterogeneous activations with planted outlier channels.
///
/// Vision tokens are Gaussian, with the planted vision channels amplified.
/// In text tokens a planted channel is rank-unstable: for a fraction
/// `text_instability` of tokens (assigned in balanced, shuffled order) it jumps
/// between four levels of the token's own magnitude profile: near zero, the
/// 1/3 and 2/3 magnitude quantiles of the ordinary channels, and a dominant
/// `text_outlier_scale` times the token maximum. Remaining tokens are ordinary.
struct SynthConfig {
  std::size_t tokens_text = 64;
  std::size_t tokens_vision = 64;
  std::size_t dim = 64;
  std::vector<std::size_t> vision_outlier_channels;
  std::vector<std::size_t> text_outlier_channels;
  double vision_outlier_scale = 100.0;
  double text_instability = 0.8;
  double text_outlier_scale = 20.0;
  double base_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw ConfigError("synth: dim must be positive");
    if (tokens_text + tokens_vision == 0) throw ConfigError("synth: need at least one token");
    std::vector<bool> used(dim, false);
    auto check = [&](const std::vector<std::size_t>& set, const char* field) {
      for (auto c : set) {
        if (c >= dim)
          throw ConfigError(std::string("synth: ") + field + " index " + std::to_string(c) +
                            " out of range [0, " + std::to_string(dim) + ")");
        if (used[c])
          throw ConfigError(std::string("synth: ") + field + " channel " + std::to_string(c) +
                            " is planted twice");
        used[c] = true;
      }
    };
    check(vision_outlier_channels, "vision_outlier_channels");
    check(text_outlier_channels, "text_outlier_channels");
    if (!(vision_outlier_scale > 0.0)) throw ConfigError("synth: vision_outlier_scale must be positive");
    if (!(text_outlier_scale > 0.0)) throw ConfigError("synth: text_outlier_scale must be positive");
    if (!(text_instability >= 0.0 && text_instability <= 1.0))
      throw ConfigError("synth: text_instability must be in [0, 1]");
    if (!(base_sigma > 0.0)) throw ConfigError("synth: base_sigma must be positive");
  }
};

/// Text tokens first, then vision tokens.
inline ActivationBatch generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t t_text = cfg.tokens_text;
  const std::size_t total = t_text + cfg.tokens_vision;
  Matrix x(total, cfg.dim);
  for (double& v : x.values()) v = cfg.base_sigma * rng.normal();

  std::vector<ModalityTag> tags(total, ModalityTag::Text);
  for (std::size_t i = t_text; i < total; ++i) tags[i] = ModalityTag::Vision;

  for (std::size_t i = t_text; i < total; ++i)
    for (auto c : cfg.vision_outlier_channels) x(i, c) *= cfg.vision_outlier_scale;

  if (!cfg.text_outlier_channels.empty() && t_text > 0) {
    std::vector<bool> planted(cfg.dim, false);
    for (auto c : cfg.text_outlier_channels) planted[c] = true;
    for (auto c : cfg.vision_outlier_channels) planted[c] = true;

    const auto unstable = static_cast<std::size_t>(
        std::floor(cfg.text_instability * static_cast<double>(t_text) + 0.5));
    std::vector<std::vector<int>> levels;
    for (std::size_t k = 0; k < cfg.text_outlier_channels.size(); ++k) {
      std::vector<int> lv(t_text, -1);
      for (std::size_t i = 0; i < unstable; ++i) lv[i] = static_cast<int>(i % 4);
      rng.shuffle(lv);
      levels.push_back(std::move(lv));
    }

    std::vector<double> mags;
    for (std::size_t i = 0; i < t_text; ++i) {
      mags.clear();
      for (std::size_t c = 0; c < cfg.dim; ++c)
        if (!planted[c]) mags.push_back(std::abs(x(i, c)));
      if (mags.empty()) mags.push_back(cfg.base_sigma);
      std::sort(mags.begin(), mags.end());
      const std::size_t last = mags.size() - 1;
      auto quantile = [&](double q) {
        return mags[static_cast<std::size_t>(std::floor(q * static_cast<double>(last) + 0.5))];
      };
      for (std::size_t k = 0; k < cfg.text_outlier_channels.size(); ++k) {
        const int level = levels[k][i];
        if (level < 0) continue;
        double mag = 0.0;
        switch (level) {
          case 0: mag = 0.01 * mags.front(); break;
          case 1: mag = quantile(1.0 / 3.0) * (1.0 + 1e-3); break;
          case 2: mag = quantile(2.0 / 3.0) * (1.0 + 1e-3); break;
          default: mag = cfg.text_outlier_scale * mags.back(); break;
        }
        x(i, cfg.text_outlier_channels[k]) = rng.sign() * mag;
      }
    }
  }
  return ActivationBatch(std::move(x), std::move(tags));
}

/// Weight with a spiked spectrum: Gaussian noise of unit column energy plus a
/// few dominant rank-one components, as seen in trained projection weights.
struct WeightSynthConfig {
  std::size_t d_in = 64;
  std::size_t d_out = 64;
  std::vector<double> spike_strengths = {8.0, 5.0};
  std::uint64_t seed = 0;
};

inline Matrix generate_weight(const WeightSynthConfig& cfg) {
  if (cfg.d_in == 0 || cfg.d_out == 0) throw ConfigError("synth: weight dims must be positive");
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix w(cfg.d_in, cfg.d_out);
  const double noise = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
  for (double& v : w.values()) v = noise * rng.normal();
  auto unit = [&](std::size_t n) {
    std::vector<double> u(n);
    double s = 0.0;
    for (double& e : u) {
      e = rng.normal();
      s += e * e;
    }
    s = std::sqrt(s);
    for (double& e : u) e /= s;
    return u;
  };
  for (double strength : cfg.spike_strengths) {
    const auto u = unit(cfg.d_in);
    const auto v = unit(cfg.d_out);
    for (std::size_t i = 0; i < cfg.d_in; ++i)
      for (std::size_t j = 0; j < cfg.d_out; ++j) w(i, j) += strength * u[i] * v[j];
  }
  return w;
}

}  // namespace splitq
