// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion 1-10.
//
//   vitlab_acceptance                 all criteria
//   vitlab_acceptance --only 6        a subset (repeatable)
//   vitlab_acceptance --skip 6        everything but a subset
//
// Criterion 6 trains on MNIST from $VITLAB_MNIST_DIR (or the directory
// configured at build time). When it is requested alone and no data is
// available the runner exits 77 so ctest reports a skip.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "test_util.hpp"
#include "vitlab/checkpoint.hpp"
#include "vitlab/experiments.hpp"
#include "vitlab/io.hpp"
#include "vitlab/model.hpp"
#include "vitlab/normalization.hpp"
#include "vitlab/train.hpp"

using namespace vitlab;
using vitlab::testing::max_abs_diff;
using vitlab::testing::random_tensor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---- pinned tolerances -------------------------------------------------------------

constexpr double kGradCheckTolerance = 1e-4;
constexpr double kGradCheckStep = 1e-5;
constexpr double kGradCheckSeconds = 300.0;
constexpr double kLnMeanTol = 1e-6;
constexpr double kLnStdTol = 1e-5;
constexpr double kLnInvarianceTol = 1e-5;
constexpr double kOracleTol = 1e-12;
constexpr double kLnSuiteSeconds = 10.0;
constexpr double kDpnTol = 1e-12;
constexpr int kDpnInputs = 100;
constexpr int kPatchifyConfigs = 20;
constexpr double kMnistMinAccuracy = 0.95;
constexpr double kMnistDpnSlack = 0.005;
constexpr double kMnistSeconds = 1800.0;
constexpr double kClipTol = 1e-9;
constexpr double kScheduleEndTol = 1e-12;
constexpr double kHeadSigmoid = 1.006e-3;
constexpr double kHeadSigmoidTol = 1e-5;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) { return format_number(v); }

fs::path scratch(const std::string& name) { return vitlab::testing::scratch_dir("acceptance_" + name); }

RunSpec tiny_spec(const fs::path& out) {
  RunSpec s;
  s.name = "tiny";
  s.model.image_height = 8;
  s.model.image_width = 8;
  s.model.channels = 1;
  s.model.patch_size = 4;
  s.model.hidden = 16;
  s.model.depth = 2;
  s.model.heads = 2;
  s.model.mlp_dim = 32;
  s.model.num_classes = 3;
  s.train.total_steps = 20;
  s.train.batch_size = 16;
  s.train.warmup_steps = 2;
  s.train.log_every = 5;
  s.data.synthetic_train = 48;
  s.data.synthetic_test = 24;
  s.out_dir = out;
  return s;
}

// ---- criteria ---------------------------------------------------------------------------

Verdict docs_disclaimer() {
  const std::string readme = read_file(fs::path(VITLAB_SOURCE_DIR) / "README.md");
  bool ok = readme.find("NOT reproducible") != std::string::npos;
  for (const char* n : {"72.1", "74.0", "80.4", "81.1", "ImageNet"}) ok &= readme.find(n) != std::string::npos;
  return {ok, ok ? "README states the headline numbers are not reproduced" : "README lacks the disclaimer"};
}

Verdict gradient_integrity() {
  const auto t0 = Clock::now();
  GradCheckCommand cmd;
  cmd.model = micro_model_config();
  cmd.tolerance = kGradCheckTolerance;
  cmd.step = kGradCheckStep;
  cmd.out_dir = scratch("gradcheck");
  const auto r = cmd_gradient_check(cmd);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const auto& row : r.rows) worst = std::max(worst, row.entry.max_rel_error);
  const bool ok = r.passed() && r.configs == 5 * 9 * 3 && secs < kGradCheckSeconds;
  return {ok, std::to_string(r.configs) + " configs, " + std::to_string(r.rows.size()) +
                  " rows, max rel error " + fmt(worst) + ", " + fmt(std::round(secs)) + " s"};
}

Verdict layer_norm_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst_mean = 0.0, worst_std = 0.0, worst_inv = 0.0, worst_oracle = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t d = 2 + s % 15;
    const auto x = random_tensor({4, d}, s, -10, 10);
    const auto z = layer_norm(x, NormParams<double>::identity(d));
    for (std::size_t r = 0; r < 4; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += z[r * d + j];
      m /= d;
      for (std::size_t j = 0; j < d; ++j) v += (z[r * d + j] - m) * (z[r * d + j] - m);
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_std = std::max(worst_std, std::abs(std::sqrt(v / d) - 1.0));
    }
    // Shift and positive scale.
    CounterRng rng(s, 42);
    const double a = 0.01 + 50.0 * rng.uniform();
    const double b = -50.0 + 100.0 * rng.uniform();
    auto moved = x;
    for (std::size_t i = 0; i < x.size(); ++i) moved[i] = a * x[i] + b;
    const NormParams<double> p{random_tensor({d}, s + 1), random_tensor({d}, s + 2), 1e-10};
    worst_inv = std::max(worst_inv, max_abs_diff(layer_norm(moved, p), layer_norm(x, p)));

    // Zero variance gives beta.
    const auto flat = layer_norm(Tensor<double>({1, d}, 2.5), p);
    for (std::size_t j = 0; j < d; ++j) ok &= flat[j] == p.beta[j];

    // Closed forms of every variant.
    const NormParams<double> q{random_tensor({d}, s + 3), random_tensor({d}, s + 4), kNormEps};
    const auto ln = layer_norm(x, q);
    const auto rms = rms_norm(x, q.gamma);
    const auto aff = affine_only(x, q);
    const auto nrm = normalize_only(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double m = 0.0, sq = 0.0, v = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        m += x[r * d + j];
        sq += x[r * d + j] * x[r * d + j];
      }
      m /= d;
      for (std::size_t j = 0; j < d; ++j) v += (x[r * d + j] - m) * (x[r * d + j] - m);
      v /= d;
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        const double zz = (x[i] - m) / std::sqrt(v + kNormEps);
        worst_oracle = std::max({worst_oracle, std::abs(nrm[i] - zz),
                                 std::abs(ln[i] - (q.gamma[j] * zz + q.beta[j])),
                                 std::abs(rms[i] - q.gamma[j] * x[i] / std::sqrt(sq / d + kNormEps)),
                                 std::abs(aff[i] - (q.gamma[j] * x[i] + q.beta[j]))});
      }
    }
  }
  const double secs = seconds_since(t0);
  ok &= worst_mean < kLnMeanTol && worst_std < kLnStdTol && worst_inv < kLnInvarianceTol &&
        worst_oracle < kOracleTol && secs < kLnSuiteSeconds;
  return {ok, "|mean| " + fmt(worst_mean) + ", |std-1| " + fmt(worst_std) + ", invariance " +
                  fmt(worst_inv) + ", oracle " + fmt(worst_oracle) + ", " + fmt(secs) + " s"};
}

Verdict dpn_equivalence() {
  auto cfg = micro_model_config();
  cfg.stem_norm = StemNorm::dpn;
  const std::size_t pd = cfg.patch_dim(), d = cfg.hidden;
  auto ln = [](std::vector<double> x, std::size_t n, const Tensor<double>& g, const Tensor<double>& b) {
    for (std::size_t r = 0; r < x.size() / n; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t j = 0; j < n; ++j) m += x[r * n + j];
      m /= n;
      for (std::size_t j = 0; j < n; ++j) v += (x[r * n + j] - m) * (x[r * n + j] - m);
      const double inv = 1.0 / std::sqrt(v / n + kNormEps);
      for (std::size_t j = 0; j < n; ++j) x[r * n + j] = (x[r * n + j] - m) * inv * g[j] + b[j];
    }
    return x;
  };
  double worst = 0.0;
  for (int s = 0; s < kDpnInputs; ++s) {
    auto tree = init_params<double>(cfg, s);
    for (auto& [path, t] : tree.entries()) {
      const auto r = random_tensor(t.shape(), 9000 + s, -0.5, 0.5);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += r[i];
    }
    const auto x = random_tensor({2, cfg.num_patches(), pd}, 100 + s, -3, 3);
    auto y = ln(x.values(), pd, tree.at("stem/ln0/gamma"), tree.at("stem/ln0/beta"));
    const auto& w = tree.at("stem/dense/kernel");
    const auto& b = tree.at("stem/dense/bias");
    std::vector<double> e(y.size() / pd * d);
    for (std::size_t r = 0; r < y.size() / pd; ++r)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < pd; ++i) acc += y[r * pd + i] * w[i * d + o];
        e[r * d + o] = acc;
      }
    e = ln(e, d, tree.at("stem/ln1/gamma"), tree.at("stem/ln1/beta"));
    Graph<double> g;
    BoundParams<double> p(g, tree);
    const auto got = stem_forward(g.constant(x), cfg, p).tokens.value();
    worst = std::max(worst, max_abs_diff(got, Tensor<double>(got.shape(), e)));
  }
  return {worst < kDpnTol, std::to_string(kDpnInputs) + " inputs, max abs diff " + fmt(worst)};
}

Verdict patchify_fidelity() {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  const auto t = patchify(Tensor<double>({1, 4, 4, 1}, v), 2);
  bool ok = t.values() == std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  for (int s = 0; s < kPatchifyConfigs; ++s) {
    CounterRng rng(s, 5);
    const std::size_t p = 1 + rng.below(5);
    const std::size_t h = p * (1 + rng.below(4)), w = p * (1 + rng.below(4)), c = 1 + rng.below(3);
    const auto x = random_tensor({1 + rng.below(3), h, w, c}, s);
    const auto plan = patchify_plan(x.shape(), p);
    const auto y = plan.apply(x);
    ok &= y.shape()[1] == h * w / (p * p) && y.shape()[2] == p * p * c;
    ok &= bitwise_equal(plan.inverse().apply(y), x);
  }
  return {ok, "4x4/P=2 layout, bitwise inverse and token count over " + std::to_string(kPatchifyConfigs) +
                  " configs"};
}

std::string mnist_dir() {
  if (const char* e = std::getenv("VITLAB_MNIST_DIR"); e && *e) return e;
  return VITLAB_MNIST_DIR_DEFAULT;
}

bool mnist_available() {
  const std::string dir = mnist_dir();
  return !dir.empty() && fs::exists(fs::path(dir) / "train-images-idx3-ubyte") &&
         fs::exists(fs::path(dir) / "t10k-images-idx3-ubyte");
}

Verdict desk_scale_training() {
  if (!mnist_available()) return {false, "MNIST not found; set VITLAB_MNIST_DIR"};
  const auto t0 = Clock::now();
  auto spec = load_run_spec(fs::path(VITLAB_SOURCE_DIR) / "configs" / "mnist_baseline.json");
  spec.data.dir = mnist_dir();
  const auto out = scratch("mnist");
  spec.out_dir = out / "none";
  const auto none = cmd_train(spec);
  spec.model.stem_norm = StemNorm::dpn;
  spec.name = "mnist-dpn";
  spec.out_dir = out / "dpn";
  const auto dpn = cmd_train(spec);
  const double secs = seconds_since(t0);
  const double a = none.accuracy.value_or(0.0), b = dpn.accuracy.value_or(0.0);
  const bool ok = a >= kMnistMinAccuracy && b >= a - kMnistDpnSlack && secs <= kMnistSeconds;
  return {ok, "none " + fmt(a) + ", dpn " + fmt(b) + " (need >= " + fmt(kMnistMinAccuracy) +
                  " and dpn >= none - " + fmt(kMnistDpnSlack) + "), " + fmt(std::round(secs)) + " s"};
}

Verdict sweep_integrity() {
  const auto dir = scratch("sweep");
  auto spec = tiny_spec(dir / "a");
  const auto p1 = cmd_sweep_placements(spec);
  const auto a1 = cmd_ablate_stem(spec);
  spec.out_dir = dir / "b";
  const auto p2 = cmd_sweep_placements(spec);
  const auto a2 = cmd_ablate_stem(spec);
  const auto pt = parse_csv(read_file(p1.csv_path));
  const auto at = parse_csv(read_file(a1.csv_path));
  bool ok = pt.rows.size() == 12 && at.rows.size() == 8;
  bool zero = false;
  for (const auto& r : pt.rows)
    zero |= r[0] == "sa_pre-mlp_pre" && parse_number(r[pt.column("delta_vs_sa_pre-mlp_pre")]) == 0.0;
  std::set<std::string> stems;
  for (const auto& r : at.rows) stems.insert(r[0]);
  ok &= zero && stems == std::set<std::string>{"none", "pre", "post", "post_posemb", "dpn",
                                               "only_learnable", "rmsnorm", "no_learnable"};
  const bool same = read_file(p1.csv_path) == read_file(p2.csv_path) &&
                    read_file(a1.csv_path) == read_file(a2.csv_path);
  return {ok && same, std::to_string(pt.rows.size()) + " placement rows, " + std::to_string(at.rows.size()) +
                          " ablation rows, reruns " + (same ? "identical" : "DIFFER")};
}

Verdict instrumentation() {
  const auto dir = scratch("instrument");
  auto spec = tiny_spec(dir / "gn");
  const auto gn = cmd_grad_norms(spec);
  bool ok = true;
  for (const auto& path : {gn.depth_csv, gn.embedding_csv}) {
    const auto t = parse_csv(read_file(path));
    ok &= !t.rows.empty();
    for (const auto& r : t.rows)
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (t.header[c] == "run" || t.header[c] == "layer_block_granularity") continue;
        const double v = parse_number(r[c]);
        ok &= std::isfinite(v) && v >= 0.0;
      }
  }
  ok &= read_file(gn.summary_csv).find("stem_grad_norm_ratio_none_over_dpn") != std::string::npos &&
        std::isfinite(gn.stem_ratio);

  spec.out_dir = dir / "dpn";
  spec.model.channels = 1;
  spec.model.stem_norm = StemNorm::dpn;
  const auto run = cmd_train(spec);
  const auto ex = cmd_export_scales(run.checkpoint_path, dir / "scales");
  for (const auto& img : ex.images) {
    const std::string text = read_file(img);
    const auto decoded = decode_pgm(text);
    ok &= text.starts_with("P2") && decoded.width == 4 && decoded.height == 4 && encode_pgm(decoded) == text;
  }
  const std::string csv = read_file(ex.csv_path);
  ok &= ex.images.size() == 1 && scales_csv(parse_scales_csv(csv)) == csv;
  return {ok, "depth and embedding CSVs finite, stem ratio none/dpn " + fmt(gn.stem_ratio) +
                  ", PGM and scale CSV round trip"};
}

Verdict determinism() {
  const auto dir = scratch("determinism");
  bool ok = true;
  std::vector<std::string> outputs[2];
  for (int k = 0; k < 2; ++k) {
    auto spec = tiny_spec(dir / std::to_string(k));
    spec.model.stem_norm = StemNorm::dpn;
    spec.train.seed = 11;
    const auto r = cmd_train(spec);
    const auto e = cmd_eval(spec, r.checkpoint_path);
    const auto x = cmd_export_scales(r.checkpoint_path, dir / std::to_string(k) / "scales");
    const auto g = cmd_grad_norms(spec);
    for (const auto& p : {r.metrics_path, r.checkpoint_path, e.csv_path, x.csv_path, x.images[0],
                          g.depth_csv, g.embedding_csv, g.summary_csv})
      outputs[k].push_back(read_file(p));
  }
  ok &= outputs[0] == outputs[1];
  return {ok, std::to_string(outputs[0].size()) + " artifacts from train/eval/export/grad-norms, " +
                  (ok ? "byte-identical" : "DIFFER")};
}

Verdict recipe_constants() {
  TrainConfig cfg;
  bool ok = cosine_schedule(0, cfg) == 0.0 && cosine_schedule(cfg.warmup_steps, cfg) == cfg.base_lr &&
            std::abs(cosine_schedule(cfg.total_steps, cfg)) < kScheduleEndTol;
  double worst_clip = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    std::vector<Tensor<double>> g{random_tensor({13}, s, -2, 2), random_tensor({4, 4}, s + 7, -2, 2)};
    const double clip = 0.05 * double(s + 1);
    const double before = clip_global_norm(g, clip);
    worst_clip = std::max(worst_clip, std::abs(global_norm(g) - std::min(before, clip)));
  }
  ok &= worst_clip <= kClipTol;
  const auto p = init_params<float>(ModelConfig{}, 0);
  double worst_sig = 0.0;
  for (float b : p.at("head/dense/bias").data())
    worst_sig = std::max(worst_sig, std::abs(1.0 / (1.0 + std::exp(-double(b))) - kHeadSigmoid));
  ok &= worst_sig <= kHeadSigmoidTol;
  return {ok, "schedule 0/base_lr/~0, clip error " + fmt(worst_clip) + ", head sigmoid error " + fmt(worst_sig)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skip;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    const int n = std::atoi(argv[i + 1]);
    if (flag == "--only") only.insert(n);
    else if (flag == "--skip") skip.insert(n);
    else {
      std::fprintf(stderr, "usage: %s [--only N]... [--skip N]...\n", argv[0]);
      return 2;
    }
  }
  auto wanted = [&](int n) { return (only.empty() || only.count(n)) && !skip.count(n); };
  if (only == std::set<int>{6} && !mnist_available()) {
    std::printf("SKIP criterion 6: MNIST not found; set VITLAB_MNIST_DIR\n");
    return 77;
  }

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"headline numbers disclaimed in docs", docs_disclaimer},
      {"gradient integrity (grad-check)", gradient_integrity},
      {"LayerNorm invariant suite", layer_norm_suite},
      {"DPN structural equivalence", dpn_equivalence},
      {"patchify fidelity", patchify_fidelity},
      {"desk-scale MNIST training", desk_scale_training},
      {"sweep integrity", sweep_integrity},
      {"instrumentation outputs", instrumentation},
      {"determinism", determinism},
      {"recipe constants", recipe_constants},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!wanted(n)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all &= v.pass;
    std::printf("%s criterion %d: %s: %s\n", v.pass ? "PASS" : "FAIL", n, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
