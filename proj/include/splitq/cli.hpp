// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind tools/splitq. Each command is a function of
// (RunConfig, input files) that writes its outputs under cfg.out; nothing
// depends on wall time, locale or the environment.

#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitq/calibrate.hpp"
#include "splitq/errors.hpp"
#include "splitq/layer.hpp"
#include "splitq/layer_io.hpp"
#include "splitq/mocd.hpp"
#include "splitq/report.hpp"
#include "splitq/synth.hpp"
#include "splitq/tensor_io.hpp"

namespace splitq::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericalError = 3 };

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string activations;
  std::string weights;
  std::string layer;

  int wbits = 4;
  int abits = 4;
  bool mocd = true;
  bool cws = true;
  bool mac = true;
  double ratio_vision = 0.02;
  double ratio_text = 0.02;
  std::size_t clusters = 3;
  double rank_cws = 0.02;
  double rank_mac = 0.03;
  std::string transform = "diagonal";

  std::size_t steps = 200;
  double lr = 5e-3;
  std::string grad_mode = "analytic";

  std::size_t dim = 64;
  std::size_t tokens_text = 64;
  std::size_t tokens_vision = 64;
  std::size_t d_out = 64;
  std::vector<std::size_t> vision_channels = {7};
  std::vector<std::size_t> text_channels = {21};
  double vision_scale = 100.0;
  double text_instability = 0.8;
  double text_scale = 20.0;

  std::vector<std::size_t> sizes = {32, 64};
  std::size_t reference = 128;
  std::size_t trials = 20;
  std::size_t tokens_per_sample = 1;

  bool ablation = false;
};

/// "inf" (any case) selects the identity quantizer; otherwise an integer in [2, 16].
inline int parse_bits(const std::string& s, const char* what) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "inf") return QuantSpec::kFullPrecision;
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(std::string(what) + ": expected an integer or \"inf\", got \"" + s + "\"");
  if (v < 2 || v > 16) throw ConfigError(std::string(what) + " must be in [2, 16] or inf");
  return v;
}

inline std::string bits_string(int bits) {
  return bits == QuantSpec::kFullPrecision ? "inf" : std::to_string(bits);
}

namespace detail {

using json = nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for \"") + key + "\"");
  }
}

inline void read_bits(const json& j, const char* key, int& dst) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_string()) {
    dst = parse_bits(v.get<std::string>(), key);
  } else if (v.is_number_integer()) {
    dst = parse_bits(std::to_string(v.get<long long>()), key);
  } else {
    throw ConfigError(std::string("config: bad value for \"") + key + "\"");
  }
}

}  // namespace detail

/// Applies a JSON object of config keys on top of `cfg`. Unknown keys are errors.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  static const char* const kKeys[] = {
      "seed", "out", "activations", "weights", "layer", "wbits", "abits", "mocd", "cws", "mac",
      "ratio_vision", "ratio_text", "clusters", "rank_cws", "rank_mac", "transform", "steps", "lr",
      "grad_mode", "dim", "tokens_text", "tokens_vision", "d_out", "vision_channels", "text_channels",
      "vision_scale", "text_instability", "text_scale", "sizes", "reference", "trials",
      "tokens_per_sample", "ablation"};
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : kKeys) known = known || item.key() == k;
    if (!known) throw ConfigError("config: unknown key \"" + item.key() + "\"");
  }
  using detail::read_key;
  read_key(j, "seed", cfg.seed);
  read_key(j, "out", cfg.out);
  read_key(j, "activations", cfg.activations);
  read_key(j, "weights", cfg.weights);
  read_key(j, "layer", cfg.layer);
  detail::read_bits(j, "wbits", cfg.wbits);
  detail::read_bits(j, "abits", cfg.abits);
  read_key(j, "mocd", cfg.mocd);
  read_key(j, "cws", cfg.cws);
  read_key(j, "mac", cfg.mac);
  read_key(j, "ratio_vision", cfg.ratio_vision);
  read_key(j, "ratio_text", cfg.ratio_text);
  read_key(j, "clusters", cfg.clusters);
  read_key(j, "rank_cws", cfg.rank_cws);
  read_key(j, "rank_mac", cfg.rank_mac);
  read_key(j, "transform", cfg.transform);
  read_key(j, "steps", cfg.steps);
  read_key(j, "lr", cfg.lr);
  read_key(j, "grad_mode", cfg.grad_mode);
  read_key(j, "dim", cfg.dim);
  read_key(j, "tokens_text", cfg.tokens_text);
  read_key(j, "tokens_vision", cfg.tokens_vision);
  read_key(j, "d_out", cfg.d_out);
  read_key(j, "vision_channels", cfg.vision_channels);
  read_key(j, "text_channels", cfg.text_channels);
  read_key(j, "vision_scale", cfg.vision_scale);
  read_key(j, "text_instability", cfg.text_instability);
  read_key(j, "text_scale", cfg.text_scale);
  read_key(j, "sizes", cfg.sizes);
  read_key(j, "reference", cfg.reference);
  read_key(j, "trials", cfg.trials);
  read_key(j, "tokens_per_sample", cfg.tokens_per_sample);
  read_key(j, "ablation", cfg.ablation);
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  apply_config_json(cfg, j);
}

inline MocdConfig mocd_config(const RunConfig& cfg) {
  MocdConfig m;
  m.ratio_vision = cfg.ratio_vision;
  m.ratio_text = cfg.ratio_text;
  m.clusters_k = cfg.clusters;
  m.seed = cfg.seed;
  m.validate();
  return m;
}

inline LayerOptions layer_options(const RunConfig& cfg) {
  LayerOptions o;
  o.act_spec = QuantSpec::activation(cfg.abits);
  o.weight_spec = QuantSpec::weight(cfg.wbits);
  o.cws = cfg.cws;
  o.mac = cfg.mac;
  o.rank_ratio_cws = cfg.rank_cws;
  o.rank_ratio_mac = cfg.rank_mac;
  if (cfg.transform == "diagonal") {
    o.transform_kind = Transform::Kind::Diagonal;
  } else if (cfg.transform == "dense") {
    o.transform_kind = Transform::Kind::Dense;
  } else {
    throw ConfigError("transform must be \"diagonal\" or \"dense\", got \"" + cfg.transform + "\"");
  }
  o.validate();
  return o;
}

inline CalibConfig calib_config(const RunConfig& cfg) {
  CalibConfig c;
  c.steps = cfg.steps;
  c.learning_rate = cfg.lr;
  c.seed = cfg.seed;
  if (cfg.grad_mode == "analytic") {
    c.grad_mode = GradMode::Analytic;
  } else if (cfg.grad_mode == "fd") {
    c.grad_mode = GradMode::FiniteDifference;
  } else {
    throw ConfigError("grad_mode must be \"analytic\" or \"fd\", got \"" + cfg.grad_mode + "\"");
  }
  // Dense transforms are only learnable through finite differences.
  if (cfg.transform == "dense" && c.grad_mode == GradMode::Analytic) {
    c.learn_p_main = c.learn_p_text = c.learn_p_vision = false;
  }
  c.validate();
  return c;
}

namespace detail {

inline std::filesystem::path out_dir(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("out: output directory must not be empty");
  std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

inline const std::string& require_path(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  return path;
}

inline ChannelPartition select_partition(const RunConfig& cfg, const ActivationBatch& batch) {
  if (!cfg.mocd) return ChannelPartition::trivial(batch.channels());
  return build_partition(batch, mocd_config(cfg));
}

inline std::string seed_string(const RunConfig& cfg) { return std::to_string(cfg.seed); }

}  // namespace detail

/// gen: synthetic activations and a matching weight.
inline void cmd_gen(const RunConfig& cfg, std::ostream& log) {
  SynthConfig s;
  s.tokens_text = cfg.tokens_text;
  s.tokens_vision = cfg.tokens_vision;
  s.dim = cfg.dim;
  s.vision_outlier_channels = cfg.vision_channels;
  s.text_outlier_channels = cfg.text_channels;
  s.vision_outlier_scale = cfg.vision_scale;
  s.text_instability = cfg.text_instability;
  s.text_outlier_scale = cfg.text_scale;
  s.seed = cfg.seed;
  s.validate();
  WeightSynthConfig w;
  w.d_in = cfg.dim;
  w.d_out = cfg.d_out;
  w.seed = cfg.seed;

  const auto dir = detail::out_dir(cfg);
  save_tensor(dir / "activations.spqt", generate(s));
  save_tensor(dir / "weights.spqt", generate_weight(w));
  log << "gen seed=" << cfg.seed << " wrote " << (dir / "activations.spqt").string() << " and "
      << (dir / "weights.spqt").string() << '\n';
}

/// select: channel partition plus per-channel peak magnitudes.
inline void cmd_select(const RunConfig& cfg, std::ostream& log) {
  const auto batch = load_batch(detail::require_path(cfg.activations, "--activations"));
  const auto partition = detail::select_partition(cfg, batch);
  const auto dir = detail::out_dir(cfg);

  nlohmann::json j = partition_to_json(partition);
  j["seed"] = cfg.seed;
  detail::write_text(dir / "partition.json", j.dump(2) + "\n");

  CsvWriter csv({"channel", "set", "text_max_abs", "vision_max_abs"});
  csv.preamble("seed", detail::seed_string(cfg));
  std::vector<const char*> set_of(partition.dim, "main");
  for (auto c : partition.text) set_of[c] = "text";
  for (auto c : partition.vision) set_of[c] = "vision";
  for (const auto& st : channel_stats(batch))
    csv.add_row(st.channel, set_of[st.channel], st.text_max_abs, st.vision_max_abs);
  detail::write_text(dir / "channel_stats.csv", csv.str());
  log << "select seed=" << cfg.seed << " text=" << partition.text.size()
      << " vision=" << partition.vision.size() << " wrote " << (dir / "partition.json").string() << '\n';
}

namespace detail {

inline CalibResult build_and_calibrate(const RunConfig& cfg, const Matrix& w, const ActivationBatch& batch,
                                       const ChannelPartition& partition, LayerOptions opt) {
  const SplitQLayer layer = build_layer(w, partition, opt, &batch);
  return calibrate(layer, w, batch, calib_config(cfg));
}

}  // namespace detail

/// calibrate: build the layer, learn transforms and gates, save both.
inline void cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  const auto batch = load_batch(detail::require_path(cfg.activations, "--activations"));
  const auto w = load_matrix(detail::require_path(cfg.weights, "--weights"));
  if (w.rows() != batch.channels())
    throw DimensionError("weights have " + std::to_string(w.rows()) + " input rows, activations have " +
                         std::to_string(batch.channels()) + " channels");
  const auto partition = detail::select_partition(cfg, batch);
  const auto result = detail::build_and_calibrate(cfg, w, batch, partition, layer_options(cfg));

  const auto dir = detail::out_dir(cfg);
  save_layer(dir / "layer", result.layer);
  CsvWriter csv({"step", "loss"});
  csv.preamble("seed", detail::seed_string(cfg))
      .preamble("best_step", std::to_string(result.trace.best_step))
      .preamble("best_loss", format_double(result.trace.best_loss));
  for (std::size_t i = 0; i < result.trace.losses.size(); ++i) csv.add_row(i, result.trace.losses[i]);
  detail::write_text(dir / "loss_trace.csv", csv.str());
  log << "calibrate seed=" << cfg.seed << " initial=" << format_double(result.trace.losses.front())
      << " best=" << format_double(result.trace.best_loss) << " at step " << result.trace.best_step << '\n';
}

/// Ablation rows in the order baseline, +MOCD, +CWS, +MAC.
struct AblationRow {
  std::string name;
  ReconReport report;
};

/// Each configuration is built from the same full-precision weight and
/// calibrated with the same settings. The baseline keeps every channel on the
/// shared main path with no low-rank branches.
inline std::vector<AblationRow> ablation_grid(const RunConfig& cfg, const Matrix& w, const ActivationBatch& batch,
                                              const QuantSpec& act_spec, const QuantSpec& weight_spec) {
  const Matrix y_ref = forward_reference(w, batch);
  const ChannelPartition mocd = build_partition(batch, mocd_config(cfg));
  struct Setting {
    const char* name;
    bool mocd, cws, mac;
  };
  const Setting settings[] = {{"baseline", false, false, false},
                              {"mocd", true, false, false},
                              {"mocd_cws", true, true, false},
                              {"mocd_cws_mac", true, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& s : settings) {
    LayerOptions opt = layer_options(cfg);
    opt.act_spec = act_spec;
    opt.weight_spec = weight_spec;
    opt.cws = s.cws;
    opt.mac = s.mac;
    const auto partition = s.mocd ? mocd : ChannelPartition::trivial(batch.channels());
    const auto result = detail::build_and_calibrate(cfg, w, batch, partition, opt);
    rows.push_back({s.name, recon_report(forward(result.layer, batch), y_ref, batch)});
  }
  return rows;
}

/// eval: reconstruction error, weight error deciles, optional ablation grid.
inline void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto layer = load_layer(detail::require_path(cfg.layer, "--layer"));
  const auto batch = load_batch(detail::require_path(cfg.activations, "--activations"));
  const Matrix w = merge_rows({layer.w_main, layer.w_text, layer.w_vision}, layer.partition);
  const auto report = recon_report(forward(layer, batch), forward_reference(w, batch), batch);
  const auto dir = detail::out_dir(cfg);

  CsvWriter eval({"metric", "value"});
  eval.preamble("seed", detail::seed_string(cfg))
      .preamble("wbits", bits_string(layer.weight_spec.bits))
      .preamble("abits", bits_string(layer.act_spec.bits));
  eval.add_row("mse_all", report.mse_all);
  eval.add_row("mse_text", report.mse_text);
  eval.add_row("mse_vision", report.mse_vision);
  detail::write_text(dir / "eval.csv", eval.str());

  const auto mae = main_weight_row_mae(layer);
  if (mae.size() >= 10) {
    CsvWriter dec({"decile", "mean_mae"});
    dec.preamble("seed", detail::seed_string(cfg));
    const auto means = decile_means(mae);
    for (std::size_t b = 0; b < means.size(); ++b) dec.add_row(b + 1, means[b]);
    detail::write_text(dir / "weight_error_deciles.csv", dec.str());
  } else {
    log << "eval: fewer than 10 main channels, skipping weight error deciles\n";
  }

  if (cfg.ablation) {
    CsvWriter abl({"config", "mse_all", "mse_text", "mse_vision"});
    abl.preamble("seed", detail::seed_string(cfg)).preamble("steps", std::to_string(cfg.steps));
    for (const auto& row : ablation_grid(cfg, w, batch, layer.act_spec, layer.weight_spec))
      abl.add_row(row.name, row.report.mse_all, row.report.mse_text, row.report.mse_vision);
    detail::write_text(dir / "ablation.csv", abl.str());
  }
  log << "eval seed=" << cfg.seed << " mse=" << format_double(report.mse_all) << '\n';
}

/// stability: Jaccard similarity of channel selections across subset sizes.
inline void cmd_stability(const RunConfig& cfg, std::ostream& log) {
  const auto batch = load_batch(detail::require_path(cfg.activations, "--activations"));
  const auto table = stability_report(batch, mocd_config(cfg), cfg.sizes, cfg.reference, cfg.trials, cfg.seed,
                                      cfg.tokens_per_sample);
  const auto dir = detail::out_dir(cfg);
  CsvWriter csv({"subset_size", "mean_jaccard", "std"});
  csv.preamble("seed", detail::seed_string(cfg))
      .preamble("reference", std::to_string(cfg.reference))
      .preamble("trials", std::to_string(cfg.trials))
      .preamble("tokens_per_sample", std::to_string(cfg.tokens_per_sample));
  for (const auto& row : table) csv.add_row(row.subset_size, row.mean_jaccard, row.std_jaccard);
  detail::write_text(dir / "stability.csv", csv.str());
  log << "stability seed=" << cfg.seed << " wrote " << (dir / "stability.csv").string() << '\n';
}

/// Runs `fn` and maps library exceptions to exit codes, reporting to `err`.
inline int run_guarded(const std::function<void()>& fn, std::ostream& err) {
  try {
    fn();
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace splitq::cli
