// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Runs the acceptance checks and prints one PASS/FAIL line per criterion.
// Exit status is nonzero if any criterion fails. Each criterion also has a
// wall-clock budget, which counts toward its verdict.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splitq/cli.hpp"
#include "splitq/splitq.hpp"

namespace {

using namespace splitq;

struct Verdict {
  bool pass = true;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

ActivationBatch random_batch(Rng& rng, std::size_t text, std::size_t vision, std::size_t dim, double scale = 1.0) {
  std::vector<ModalityTag> tags;
  for (std::size_t i = 0; i < text + vision; ++i) tags.push_back(i < text ? ModalityTag::Text : ModalityTag::Vision);
  rng.shuffle(tags);
  return ActivationBatch(random_matrix(rng, text + vision, dim, scale), std::move(tags));
}

Transform random_transform(Rng& rng, std::size_t n, Transform::Kind kind) {
  if (kind == Transform::Kind::Dense) {
    Matrix p = random_matrix(rng, n, n, 0.3 / std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1))));
    for (std::size_t i = 0; i < n; ++i) p(i, i) += 1.0;
    return Transform::dense(p);
  }
  std::vector<double> d(n);
  for (double& v : d) v = rng.sign() * std::exp(rng.normal());
  return Transform::diagonal(d);
}

ChannelPartition random_partition(Rng& rng, std::size_t dim) {
  for (;;) {
    std::vector<std::size_t> text, vision;
    for (std::size_t c = 0; c < dim; ++c) {
      const auto r = rng.below(5);
      if (r == 0) text.push_back(c);
      if (r == 1) vision.push_back(c);
    }
    if (!text.empty() && !vision.empty() && text.size() + vision.size() < dim)
      return ChannelPartition::from_outliers(dim, text, vision);
  }
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// Criterion 1
Verdict partition_correctness() {
  Rng rng(1);
  int bad = 0, draws = 0;
  while (draws < 1000) {
    const std::size_t dim = 2 + rng.below(63);
    MocdConfig cfg;
    cfg.ratio_vision = 0.5 * rng.uniform();
    cfg.ratio_text = 0.5 * rng.uniform();
    cfg.clusters_k = 1 + rng.below(5);
    cfg.seed = rng.below(1000);
    if (outlier_count(cfg.ratio_vision, dim) + outlier_count(cfg.ratio_text, dim) > dim) continue;
    const auto batch = random_batch(rng, 1 + rng.below(16), 1 + rng.below(16), dim, std::exp(rng.normal()));
    ++draws;
    const auto p = build_partition(batch, cfg);
    std::vector<int> owner(dim, 0);
    for (const auto* set : {&p.main, &p.text, &p.vision})
      for (auto c : *set) owner[c] += 1;
    const bool cover = std::all_of(owner.begin(), owner.end(), [](int o) { return o == 1; });
    const bool sizes = p.vision.size() == outlier_count(cfg.ratio_vision, dim) &&
                       p.text.size() == outlier_count(cfg.ratio_text, dim);
    const bool det = build_partition(batch, cfg) == p;
    if (!(cover && sizes && det)) ++bad;
  }
  return {bad == 0, std::to_string(draws - bad) + "/" + std::to_string(draws) + " draws valid"};
}

// Criterion 2
Verdict quantizer_contracts() {
  Rng rng(2);
  int failures = 0;
  const Granularity grans[] = {Granularity::PerTensor, Granularity::PerChannel, Granularity::PerToken};
  for (int t = 0; t < 200; ++t) {
    const Matrix x = random_matrix(rng, 1 + rng.below(16), 1 + rng.below(16));
    const Granularity g = grans[rng.below(3)];
    const bool sym = rng.below(2) == 0;
    const int bits = 2 + static_cast<int>(rng.below(15));
    const QuantSpec spec{bits, sym, g};
    const QuantParams p = compute_params(x, spec);
    const Matrix q = fake_quantize(x, p, spec);
    if (!(fake_quantize(q, p, spec) == q)) ++failures;
    std::vector<std::uint8_t> mask;
    fake_quantize(x, p, spec, &mask);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const std::size_t k = r * x.cols() + c;
        const double s = p.scales[detail::group_of(r, c, g)];
        if (mask[k] && std::abs(q(r, c) - x(r, c)) > 0.5 * s * (1 + 1e-12)) ++failures;
      }
  }
  // Fidelity on unit-scale data, symmetric per-tensor. Monotonicity is a
  // statistical property: for a handful of elements the b+1 grid can land
  // farther from the data than the b grid, so matrices are 16x16.
  double worst16 = 0.0;
  int mono = 0;
  for (int t = 0; t < 200; ++t) {
    const Matrix x = random_matrix(rng, 16, 16);
    worst16 = std::max(worst16, relative_frobenius_error(fake_quantize(x, {16, true, Granularity::PerTensor}), x));
    double prev = std::numeric_limits<double>::infinity();
    for (int b = 2; b <= 16; ++b) {
      const double mse = recon_loss(fake_quantize(x, QuantSpec{b, true, Granularity::PerTensor}), x);
      if (mse > prev) ++mono;
      prev = mse;
    }
  }
  if (worst16 >= 1e-3) ++failures;
  return {failures == 0 && mono == 0, "contract violations " + std::to_string(failures) + ", monotonicity violations " +
                                           std::to_string(mono) + ", worst 16-bit rel error " + fmt("%.2e", worst16)};
}

// Criterion 3
Verdict computational_invariance() {
  Rng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const Matrix x = random_matrix(rng, 16, n);
    const Matrix w = random_matrix(rng, n, 1 + rng.below(64));
    const Matrix ref = matmul(x, w);
    for (auto kind : {Transform::Kind::Dense, Transform::Kind::Diagonal}) {
      const auto p = random_transform(rng, n, kind);
      worst = std::max(worst, relative_frobenius_error(matmul(apply_right(x, p), apply_inv_left(w, p)), ref));
    }
  }
  return {worst <= 1e-8, "worst relative error " + fmt("%.2e", worst)};
}

SplitQLayer scrambled_layer(Rng& rng, const Matrix& w, const ChannelPartition& part, LayerOptions opt) {
  SplitQLayer layer = build_layer(w, part, opt);
  layer.p_main = random_transform(rng, layer.w_main.rows(), opt.transform_kind);
  layer.p_text = random_transform(rng, layer.w_text.rows(), opt.transform_kind);
  layer.p_vision = random_transform(rng, layer.w_vision.rows(), opt.transform_kind);
  for (auto* br : {&layer.branch_smooth, &layer.branch_comp}) {
    if (!*br) continue;
    **br = rebase_branch(**br, layer.p_main);
    for (double& g : (*br)->gate) g = rng.normal();
  }
  return layer;
}

// Criterion 4
Verdict cancellation_oracle() {
  Rng rng(4);
  double worst = 0.0;
  int cases = 0;
  for (int combo = 0; combo < 8; ++combo) {
    const bool mocd = combo & 1, cws = combo & 2, mac = combo & 4;
    for (int t = 0; t < 50; ++t) {
      const std::size_t dim = 4 + rng.below(61);
      const auto part = mocd ? random_partition(rng, dim) : ChannelPartition::trivial(dim);
      const Matrix w = random_matrix(rng, dim, 1 + rng.below(64));
      const auto batch = random_batch(rng, 1 + rng.below(16), 1 + rng.below(16), dim, 5.0);
      LayerOptions opt;
      opt.act_spec = QuantSpec::full_precision(Granularity::PerToken);
      opt.weight_spec = QuantSpec::full_precision(Granularity::PerChannel);
      opt.cws = cws;
      opt.mac = mac;
      opt.rank_ratio_cws = opt.rank_ratio_mac = 0.1 + 0.4 * rng.uniform();
      opt.transform_kind = rng.below(2) ? Transform::Kind::Dense : Transform::Kind::Diagonal;
      const auto layer = scrambled_layer(rng, w, part, opt);
      worst = std::max(worst, relative_frobenius_error(forward(layer, batch), forward_reference(w, batch)));
      ++cases;
    }
  }
  return {worst <= 1e-8, std::to_string(cases) + " instances, worst relative error " + fmt("%.2e", worst)};
}

// Criterion 5
Verdict mac_locality() {
  Rng rng(5);
  int bad = 0, text_moved = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 8 + rng.below(57);
    const Matrix w = random_matrix(rng, dim, 1 + rng.below(64));
    const auto batch = random_batch(rng, 1 + rng.below(16), 1 + rng.below(16), dim, 3.0);
    LayerOptions opt;
    const int bits = 2 + static_cast<int>(rng.below(4));
    opt.act_spec = QuantSpec::activation(bits);
    opt.weight_spec = QuantSpec::weight(bits);
    opt.cws = rng.below(2) == 0;
    opt.rank_ratio_mac = 0.1;
    auto on = build_layer(w, random_partition(rng, dim), opt, &batch);
    auto off = on;
    off.mac = false;
    const Matrix a = forward(on, batch), b = forward(off, batch);
    bool moved = false;
    for (std::size_t i = 0; i < batch.tokens(); ++i) {
      const bool same = std::equal(a.row(i).begin(), a.row(i).end(), b.row(i).begin());
      if (batch.tags()[i] == ModalityTag::Vision && !same) ++bad;
      if (batch.tags()[i] == ModalityTag::Text && !same) moved = true;
    }
    text_moved += moved;
  }
  return {bad == 0, std::to_string(bad) + " vision rows changed; MAC altered text rows in " +
                        std::to_string(text_moved) + "/100 instances"};
}

// Criterion 6
Verdict svd_and_branch() {
  Rng rng(6);
  int failures = 0;
  double worst_full = 0.0, worst_grad = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 2 + rng.below(40), n = 2 + rng.below(40);
    const Matrix w = random_matrix(rng, m, n);
    const std::size_t kmin = std::min(m, n);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r <= kmin; ++r) {
      const double err = frobenius_norm(w - reconstruct(truncated_svd(w, r)));
      if (err > prev + 1e-12) ++failures;
      prev = err;
    }
    worst_full = std::max(worst_full, prev / frobenius_norm(w));

    auto br = build_branch(w, Transform::identity(m), 1 + rng.below(kmin));
    for (double& g : br.gate) g = 1.0 + 0.5 * rng.normal();
    const Matrix target = random_matrix(rng, m, n);
    const auto grad = gate_gradient(br, target);
    for (std::size_t k = 0; k < br.rank(); ++k) {
      const double h = 1e-6;
      auto hi = br, lo = br;
      hi.gate[k] += h;
      lo.gate[k] -= h;
      const double fh = frobenius_norm(hi.product() - target), fl = frobenius_norm(lo.product() - target);
      const double fd = (fh * fh - fl * fl) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - grad[k]) / std::max(1.0, std::abs(grad[k])));
    }
  }
  const bool pass = failures == 0 && worst_full <= 1e-8 && worst_grad <= 1e-5;
  return {pass, "monotonicity violations " + std::to_string(failures) + ", full-rank error " +
                    fmt("%.2e", worst_full) + ", gate gradient error " + fmt("%.2e", worst_grad)};
}

SynthConfig two_plus_two(std::uint64_t seed, std::size_t text_tokens, std::size_t vision_tokens,
                         bool random_channels) {
  SynthConfig sc;
  sc.seed = seed;
  sc.tokens_text = text_tokens;
  sc.tokens_vision = vision_tokens;
  if (random_channels) {
    Rng pick(1000 + seed);
    std::vector<std::size_t> ch(64);
    for (std::size_t i = 0; i < 64; ++i) ch[i] = i;
    pick.shuffle(ch);
    sc.vision_outlier_channels = {ch[0], ch[1]};
    sc.text_outlier_channels = {ch[2], ch[3]};
    std::sort(sc.vision_outlier_channels.begin(), sc.vision_outlier_channels.end());
    std::sort(sc.text_outlier_channels.begin(), sc.text_outlier_channels.end());
  } else {
    sc.vision_outlier_channels = {3, 40};
    sc.text_outlier_channels = {17, 55};
  }
  return sc;
}

MocdConfig two_of_64() {
  MocdConfig mc;
  mc.ratio_text = mc.ratio_vision = 2.0 / 64.0;
  return mc;
}

// Criterion 7
Verdict planted_recovery() {
  int v_ok = 0, t_ok = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto sc = two_plus_two(s, 64, 64, true);
    const auto p = build_partition(generate(sc), two_of_64());
    v_ok += p.vision == sc.vision_outlier_channels;
    t_ok += p.text == sc.text_outlier_channels;
  }
  return {v_ok >= 99 && t_ok >= 90,
          "vision " + std::to_string(v_ok) + "/100, text " + std::to_string(t_ok) + "/100"};
}

struct Problem {
  ActivationBatch batch;
  Matrix w;
  ChannelPartition partition;
};

Problem problem(std::uint64_t seed) {
  Problem p{generate(two_plus_two(seed, 64, 64, false)), generate_weight({64, 64, {8.0, 5.0}, seed}), {}};
  p.partition = build_partition(p.batch, two_of_64());
  return p;
}

// Criterion 8
Verdict calibration_monotonicity() {
  int ok = 0;
  std::vector<double> improvement;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = problem(s);
    LayerOptions opt;
    const auto layer = build_layer(p.w, p.partition, opt, &p.batch);
    const auto r = calibrate(layer, p.w, p.batch, CalibConfig{});
    const double l0 = r.trace.losses.front();
    ok += r.trace.best_loss <= l0;
    improvement.push_back((l0 - r.trace.best_loss) / l0);
  }
  const double med = median(improvement);
  return {ok >= 19 && med >= 0.10,
          std::to_string(ok) + "/20 seeds non-worse, median improvement " + fmt("%.1f%%", 100 * med)};
}

// Criterion 9
Verdict ablation_ordering() {
  std::vector<std::vector<double>> mse(4);
  const char* names[] = {"baseline", "mocd", "mocd_cws", "mocd_cws_mac"};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = problem(s);
    for (int c = 0; c < 4; ++c) {
      LayerOptions opt;
      opt.act_spec = QuantSpec::activation(3);
      opt.weight_spec = QuantSpec::weight(3);
      opt.cws = c >= 2;
      opt.mac = c >= 3;
      const auto part = c == 0 ? ChannelPartition::trivial(64) : p.partition;
      const auto layer = build_layer(p.w, part, opt, &p.batch);
      mse[c].push_back(calibrate(layer, p.w, p.batch, CalibConfig{}).trace.best_loss);
    }
  }
  double m[4];
  std::string detail = "medians";
  for (int c = 0; c < 4; ++c) {
    m[c] = median(mse[c]);
    detail += std::string(" ") + names[c] + "=" + fmt("%.4g", m[c]);
  }
  return {m[0] > m[1] && m[1] > m[2] && m[2] > m[3], detail};
}

// Criterion 10
Verdict stability() {
  constexpr std::size_t kTokensPerSample = 4;
  std::vector<double> at32, at64;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto batch = generate(two_plus_two(s, 128 * kTokensPerSample, 128 * kTokensPerSample, false));
    const auto rows = stability_report(batch, two_of_64(), {32, 64}, 128, 20, s, kTokensPerSample);
    at32.push_back(rows[0].mean_jaccard);
    at64.push_back(rows[1].mean_jaccard);
  }
  const double m32 = median(at32), m64 = median(at64);
  const double lo32 = *std::min_element(at32.begin(), at32.end());
  return {m32 >= 0.8 && m64 >= 0.8, "median mean Jaccard 32 vs 128: " + fmt("%.3f", m32) +
                                         " (min " + fmt("%.3f", lo32) + "), 64 vs 128: " + fmt("%.3f", m64)};
}

// Criterion 11
Verdict cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "splitq_acceptance_cli";
  fs::remove_all(root);
  std::map<std::string, std::vector<std::uint8_t>> runs[2];
  int failures = 0;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = root / std::to_string(run);
    cli::RunConfig cfg;
    cfg.out = out.string();
    cfg.seed = 11;
    cfg.vision_channels = {3, 40};
    cfg.text_channels = {17, 55};
    cfg.ratio_text = cfg.ratio_vision = 2.0 / 64.0;
    cfg.steps = 50;
    cfg.ablation = true;
    cfg.activations = (out / "activations.spqt").string();
    cfg.weights = (out / "weights.spqt").string();
    cfg.layer = (out / "layer").string();
    cfg.reference = 64;
    cfg.sizes = {16, 32};
    std::ostringstream log, err;
    for (auto cmd : {cli::cmd_gen, cli::cmd_select, cli::cmd_calibrate, cli::cmd_eval, cli::cmd_stability})
      failures += cli::run_guarded([&] { cmd(cfg, log); }, err) != cli::kOk;
    for (const auto& e : fs::recursive_directory_iterator(out))
      if (e.is_regular_file()) runs[run][fs::relative(e.path(), out).string()] = detail::read_bytes(e.path());
  }
  std::size_t same = 0;
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    same += it != runs[1].end() && it->second == bytes;
  }
  fs::remove_all(root);
  const bool pass = failures == 0 && runs[0].size() >= 15 && same == runs[0].size() && runs[1].size() == same;
  return {pass, std::to_string(same) + "/" + std::to_string(runs[0].size()) + " files byte-identical, " +
                    std::to_string(failures) + " command failures"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {1, "partition correctness", 5, partition_correctness},
      {2, "quantizer contracts", 5, quantizer_contracts},
      {3, "computational invariance", 2, computational_invariance},
      {4, "cancellation oracle", 10, cancellation_oracle},
      {5, "MAC locality", 5, mac_locality},
      {6, "SVD and branch", 10, svd_and_branch},
      {7, "planted-outlier recovery", 30, planted_recovery},
      {8, "calibration monotonicity", 120, calibration_monotonicity},
      {9, "ablation ordering W3A3", 300, ablation_ordering},
      {10, "selection stability", 60, stability},
      {11, "CLI determinism", 60, cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d (%s): %s [%.2fs of %.0fs budget%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                v.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
