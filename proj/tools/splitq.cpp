// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitq/cli.hpp"

namespace {

using splitq::cli::RunConfig;

// Flag values land in a scratch RunConfig; after the config file is read they
// are copied over it, but only for flags given on the command line.
struct FlagBinder {
  CLI::App* app;
  RunConfig& flags;
  std::vector<std::function<void(RunConfig&)>>& apply;

  template <typename T>
  void opt(const std::string& name, T RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_option(name, flags.*field, help);
    apply.push_back([o, field, &fl = flags](RunConfig& cfg) {
      if (o->count() > 0) cfg.*field = fl.*field;
    });
  }

  void bits(const std::string& name, int RunConfig::*field, std::string& scratch, const std::string& help) {
    CLI::Option* o = app->add_option(name, scratch, help);
    apply.push_back([o, field, &scratch, name](RunConfig& cfg) {
      if (o->count() > 0) cfg.*field = splitq::cli::parse_bits(scratch, name.c_str());
    });
  }

  void negate(const std::string& name, bool RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_flag(name, help);
    apply.push_back([o, field](RunConfig& cfg) {
      if (o->count() > 0) cfg.*field = false;
    });
  }

  void set(const std::string& name, bool RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_flag(name, help);
    apply.push_back([o, field](RunConfig& cfg) {
      if (o->count() > 0) cfg.*field = true;
    });
  }
};

struct Command {
  std::string config_path;
  std::string wbits, abits;
  RunConfig flags;
  std::vector<std::function<void(RunConfig&)>> apply;
  std::function<void(const RunConfig&, std::ostream&)> run;
};

void add_common(FlagBinder& b, Command& c) {
  b.app->add_option("--config", c.config_path, "JSON config file; command-line flags take precedence");
  b.opt("--seed", &RunConfig::seed, "seed for every random draw");
  b.opt("--out", &RunConfig::out, "output directory");
  b.bits("--wbits", &RunConfig::wbits, c.wbits, "weight bits (2-16 or inf)");
  b.bits("--abits", &RunConfig::abits, c.abits, "activation bits (2-16 or inf)");
  b.negate("--no-mocd", &RunConfig::mocd, "keep every channel on the main path");
  b.negate("--no-cws", &RunConfig::cws, "disable the weight smoothing branch");
  b.negate("--no-mac", &RunConfig::mac, "disable text activation compensation");
  b.opt("--ratio-vision", &RunConfig::ratio_vision, "fraction of channels kept as vision outliers");
  b.opt("--ratio-text", &RunConfig::ratio_text, "fraction of channels kept as text outliers");
  b.opt("--clusters", &RunConfig::clusters, "k for the rank clustering of text channels");
  b.opt("--rank-cws", &RunConfig::rank_cws, "smoothing branch rank as a fraction of full rank");
  b.opt("--rank-mac", &RunConfig::rank_mac, "compensation branch rank as a fraction of full rank");
  b.opt("--activations", &RunConfig::activations, "activation batch (.spqt)");
  b.opt("--weights", &RunConfig::weights, "weight matrix (.spqt)");
  b.opt("--layer", &RunConfig::layer, "calibrated layer directory");
  b.opt("--steps", &RunConfig::steps, "calibration steps");
  b.opt("--lr", &RunConfig::lr, "calibration learning rate");
  b.opt("--grad-mode", &RunConfig::grad_mode, "analytic or fd");
  b.opt("--transform", &RunConfig::transform, "diagonal or dense");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SplitQ post-training quantization toolkit"};
  app.require_subcommand(1);

  Command gen, select, calibrate, eval, stability;
  gen.run = splitq::cli::cmd_gen;
  select.run = splitq::cli::cmd_select;
  calibrate.run = splitq::cli::cmd_calibrate;
  eval.run = splitq::cli::cmd_eval;
  stability.run = splitq::cli::cmd_stability;

  struct Entry {
    const char* name;
    const char* help;
    Command* cmd;
  };
  const Entry entries[] = {
      {"gen", "write synthetic activations.spqt and weights.spqt", &gen},
      {"select", "choose outlier channels; write partition.json and channel_stats.csv", &select},
      {"calibrate", "build and calibrate a layer; write layer/ and loss_trace.csv", &calibrate},
      {"eval", "reconstruction error, weight error deciles, optional ablation grid", &eval},
      {"stability", "Jaccard stability of channel selection across subset sizes", &stability},
  };
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    FlagBinder b{sub, e.cmd->flags, e.cmd->apply};
    add_common(b, *e.cmd);
    const std::string name = e.name;
    if (name == "gen") {
      b.opt("--dim", &RunConfig::dim, "channel count");
      b.opt("--tokens-text", &RunConfig::tokens_text, "text token count");
      b.opt("--tokens-vision", &RunConfig::tokens_vision, "vision token count");
      b.opt("--d-out", &RunConfig::d_out, "weight output width");
      b.opt("--vision-channels", &RunConfig::vision_channels, "planted vision outlier channels");
      b.opt("--text-channels", &RunConfig::text_channels, "planted text outlier channels");
      b.opt("--vision-scale", &RunConfig::vision_scale, "vision outlier amplification");
      b.opt("--text-instability", &RunConfig::text_instability, "fraction of rank-unstable text tokens");
      b.opt("--text-scale", &RunConfig::text_scale, "dominant level of text outliers");
    } else if (name == "eval") {
      b.set("--ablation", &RunConfig::ablation, "also run the baseline/MOCD/CWS/MAC grid");
    } else if (name == "stability") {
      b.opt("--sizes", &RunConfig::sizes, "subset sizes in samples");
      b.opt("--reference", &RunConfig::reference, "reference subset size in samples");
      b.opt("--trials", &RunConfig::trials, "draws per subset size");
      b.opt("--tokens-per-sample", &RunConfig::tokens_per_sample, "tokens of each modality per sample");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? splitq::cli::kOk : splitq::cli::kConfigError;
  }

  for (const auto& e : entries) {
    if (!app.got_subcommand(e.name)) continue;
    Command& c = *e.cmd;
    return splitq::cli::run_guarded(
        [&] {
          RunConfig cfg;
          if (!c.config_path.empty()) splitq::cli::load_config_file(cfg, c.config_path);
          for (const auto& f : c.apply) f(cfg);
          c.run(cfg, std::cout);
        },
        std::cerr);
  }
  return splitq::cli::kConfigError;
}
