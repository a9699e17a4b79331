// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <set>

#include "vitlab/checkpoint.hpp"
#include "vitlab/experiments.hpp"
#include "vitlab/model.hpp"
#include "vitlab/normalization.hpp"

using namespace vitlab;
using vitlab::testing::max_abs_diff;
using vitlab::testing::random_tensor;
using Rows = std::vector<double>;

namespace {

// ---- straight-line oracles, no library ops ------------------------------------

Rows oracle_ln(const Rows& x, std::size_t d, const Tensor<double>& g, const Tensor<double>& b) {
  Rows y(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += x[r * d + j];
    m /= d;
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += (x[r * d + j] - m) * (x[r * d + j] - m);
    v /= d;
    const double inv = 1.0 / std::sqrt(v + kNormEps);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = (x[r * d + j] - m) * inv * g[j] + b[j];
  }
  return y;
}

Rows oracle_dense(const Rows& x, std::size_t in, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t out = b.size();
  Rows y(x.size() / in * out);
  for (std::size_t r = 0; r < x.size() / in; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  }
  return y;
}

// Randomize every parameter so that identity norms cannot hide mistakes.
ParamTree<double> randomized(const ModelConfig& cfg, std::uint64_t seed) {
  auto tree = init_params<double>(cfg, seed);
  std::uint64_t k = 1000;
  for (auto& [path, t] : tree.entries()) {
    const auto r = random_tensor(t.shape(), seed * 7919 + k++, -0.5, 0.5);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += r[i];
  }
  return tree;
}

ModelConfig tiny(StemNorm stem = StemNorm::none) {
  auto cfg = micro_model_config();
  cfg.stem_norm = stem;
  return cfg;
}

Tensor<double> stem_out(const ModelConfig& cfg, const ParamTree<double>& tree, const Tensor<double>& patches) {
  Graph<double> g;
  BoundParams<double> p(g, tree);
  return stem_forward(g.constant(patches), cfg, p).tokens.value();
}

}  // namespace

TEST_CASE("patchify: token count and layout") {
  const auto big = patchify(Tensor<double>({1, 224, 224, 3}), 16);
  CHECK(big.shape() == Shape{1, 196, 768});

  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  const auto t = patchify(Tensor<double>({1, 4, 4, 1}, v), 2);
  CHECK(t.values() == Rows{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});

  const auto whole = patchify(Tensor<double>({1, 4, 4, 1}, v), 4);
  CHECK(whole.shape() == Shape{1, 1, 16});
  CHECK(whole.values() == v);
  CHECK_THROWS_AS(patchify(Tensor<double>({1, 5, 4, 1}), 2), ShapeError);
}

TEST_CASE("patchify: token count and round trip over random configs") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    CounterRng rng(s, 11);
    const std::size_t p = 1 + rng.below(4);
    const std::size_t h = p * (1 + rng.below(4));
    const std::size_t w = p * (1 + rng.below(4));
    const std::size_t c = 1 + rng.below(3);
    const auto x = random_tensor({2, h, w, c}, s);
    const auto plan = patchify_plan(x.shape(), p);
    const auto t = plan.apply(x);
    CHECK(t.shape() == Shape{2, h * w / (p * p), p * p * c});
    CHECK(bitwise_equal(plan.inverse().apply(t), x));
  }
}

TEST_CASE("stem: none is the dense projection, bitwise") {
  const auto cfg = tiny();
  const auto tree = randomized(cfg, 1);
  const auto x = random_tensor({2, 4, 4}, 2);
  Graph<double> g;
  const auto want = (matmul(g.constant(x), g.constant(tree.at("stem/dense/kernel"))) +
                     g.constant(tree.at("stem/dense/bias"))).value();
  CHECK(bitwise_equal(stem_out(cfg, tree, x), want));
}

TEST_CASE("stem: dpn with identity norms is normalize_only around the dense layer") {
  const auto cfg = tiny(StemNorm::dpn);
  auto tree = init_params<double>(cfg, 3);
  const auto x = random_tensor({2, 4, 4}, 4);
  Graph<double> g;
  auto inner = normalize_only(g.constant(x));
  auto dense = matmul(inner, g.constant(tree.at("stem/dense/kernel"))) +
               g.constant(tree.at("stem/dense/bias"));
  CHECK(max_abs_diff(stem_out(cfg, tree, x), normalize_only(dense).value()) < 1e-12);
}

TEST_CASE("stem: dpn matches an independent LN-dense-LN oracle on 100 inputs") {
  const auto cfg = tiny(StemNorm::dpn);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto tree = randomized(cfg, s);
    const auto x = random_tensor({2, 4, 4}, 500 + s, -3, 3);
    Rows y = oracle_ln(x.values(), 4, tree.at("stem/ln0/gamma"), tree.at("stem/ln0/beta"));
    y = oracle_dense(y, 4, tree.at("stem/dense/kernel"), tree.at("stem/dense/bias"));
    y = oracle_ln(y, 16, tree.at("stem/ln1/gamma"), tree.at("stem/ln1/beta"));
    worst = std::max(worst, max_abs_diff(stem_out(cfg, tree, x), Tensor<double>({2, 4, 16}, y)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("stem: pre, post and post_posemb") {
  const auto x = random_tensor({1, 4, 4}, 5);
  {
    const auto cfg = tiny(StemNorm::pre);
    const auto tree = randomized(cfg, 6);
    Rows y = oracle_ln(x.values(), 4, tree.at("stem/ln0/gamma"), tree.at("stem/ln0/beta"));
    y = oracle_dense(y, 4, tree.at("stem/dense/kernel"), tree.at("stem/dense/bias"));
    CHECK(max_abs_diff(stem_out(cfg, tree, x), Tensor<double>({1, 4, 16}, y)) < 1e-12);
    CHECK_FALSE(tree.contains("stem/ln1/gamma"));
  }
  {
    const auto cfg = tiny(StemNorm::post);
    const auto tree = randomized(cfg, 7);
    Rows y = oracle_dense(x.values(), 4, tree.at("stem/dense/kernel"), tree.at("stem/dense/bias"));
    y = oracle_ln(y, 16, tree.at("stem/ln1/gamma"), tree.at("stem/ln1/beta"));
    CHECK(max_abs_diff(stem_out(cfg, tree, x), Tensor<double>({1, 4, 16}, y)) < 1e-12);
  }
  {
    const auto cfg = tiny(StemNorm::post_posemb);
    const auto tree = randomized(cfg, 8);
    Graph<double> g;
    BoundParams<double> p(g, tree);
    const auto out = stem_forward(g.constant(x), cfg, p);
    CHECK(out.norm_after_posemb);
    CHECK(tree.at("stem/ln_posemb/gamma").shape() == Shape{16});
  }
}

TEST_CASE("stem: pixel norm scales have length P*P*C") {
  auto cfg = micro_model_config();
  cfg.channels = 3;
  cfg.stem_norm = StemNorm::dpn;
  const auto tree = init_params<double>(cfg, 0);
  const auto& gamma = tree.at("stem/ln0/gamma");
  CHECK(gamma.shape() == Shape{cfg.patch_size * cfg.patch_size * cfg.channels});
  CHECK(tree.at("stem/ln0/beta").shape() == gamma.shape());
  CHECK(gamma.reshape({cfg.patch_size, cfg.patch_size, cfg.channels}).size() == gamma.size());
}

TEST_CASE("attention: pre placement matches a straight-line oracle") {
  const auto cfg = tiny();
  const auto tree = randomized(cfg, 9);
  const std::size_t B = 2, N = 5, D = 16, H = 2, dh = 8;
  const auto x = random_tensor({B, N, D}, 10);
  Graph<double> g;
  BoundParams<double> p(g, tree);
  const auto got = attention_block(g.constant(x), cfg, p, "block0/attn").value();

  const Rows h = oracle_ln(x.values(), D, tree.at("block0/attn/ln_pre/gamma"),
                           tree.at("block0/attn/ln_pre/beta"));
  const Rows qkv = oracle_dense(h, D, tree.at("block0/attn/qkv/kernel"), tree.at("block0/attn/qkv/bias"));
  Rows ctx(B * N * D, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t hd = 0; hd < H; ++hd) {
      auto at = [&](std::size_t t, std::size_t which, std::size_t c) {
        return qkv[(b * N + t) * 3 * D + which * D + hd * dh + c];
      };
      for (std::size_t i = 0; i < N; ++i) {
        Rows w(N);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < N; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += at(i, 0, c) * at(j, 1, c);
          w[j] = s / std::sqrt(double(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (auto& v : w) z += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double s = 0.0;
          for (std::size_t j = 0; j < N; ++j) s += w[j] / z * at(j, 2, c);
          ctx[(b * N + i) * D + hd * dh + c] = s;
        }
      }
    }
  }
  Rows y = oracle_dense(ctx, D, tree.at("block0/attn/out/kernel"), tree.at("block0/attn/out/bias"));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  CHECK(max_abs_diff(got, Tensor<double>({B, N, D}, y)) < 1e-10);
}

TEST_CASE("attention: single token reduces to value and output projections") {
  const auto cfg = tiny();
  const auto tree = randomized(cfg, 11);
  const auto x = random_tensor({3, 1, 16}, 12);
  Graph<double> g;
  BoundParams<double> p(g, tree);
  const auto got = attention_block(g.constant(x), cfg, p, "block0/attn").value();
  const Rows h = oracle_ln(x.values(), 16, tree.at("block0/attn/ln_pre/gamma"),
                           tree.at("block0/attn/ln_pre/beta"));
  const Rows qkv = oracle_dense(h, 16, tree.at("block0/attn/qkv/kernel"), tree.at("block0/attn/qkv/bias"));
  Rows v(3 * 16);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 16; ++c) v[r * 16 + c] = qkv[r * 48 + 32 + c];
  Rows y = oracle_dense(v, 16, tree.at("block0/attn/out/kernel"), tree.at("block0/attn/out/bias"));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  CHECK(max_abs_diff(got, Tensor<double>({3, 1, 16}, y)) < 1e-12);
}

TEST_CASE("blocks: zeroed output weights leave the residual path exact") {
  for (auto [sa, mlp] : placement_grid()) {
    for (BlockExtra extra : {BlockExtra::none, BlockExtra::normformer, BlockExtra::subln}) {
      auto cfg = tiny();
      cfg.block_sa_ln = sa;
      cfg.block_mlp_ln = mlp;
      cfg.block_extra = extra;
      auto tree = randomized(cfg, 13);
      const bool post_sa = sa != Placement::pre;
      const bool post_mlp = mlp != Placement::pre;
      // Zero the last learnable stage of each branch.
      auto zero = [&](const std::string& path) {
        auto& t = tree.at(path);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
      };
      if (post_sa) {
        zero("block0/attn/ln_post/gamma");
        zero("block0/attn/ln_post/beta");
      } else if (extra == BlockExtra::normformer) {
        zero("block0/attn/ln_nf/gamma");
        zero("block0/attn/ln_nf/beta");
      } else {
        zero("block0/attn/out/kernel");
        zero("block0/attn/out/bias");
      }
      if (post_mlp) {
        zero("block0/mlp/ln_post/gamma");
        zero("block0/mlp/ln_post/beta");
      } else {
        zero("block0/mlp/fc2/kernel");
        zero("block0/mlp/fc2/bias");
      }
      const auto x = random_tensor({2, 5, 16}, 14);
      Graph<double> g;
      BoundParams<double> p(g, tree);
      CHECK(bitwise_equal(attention_block(g.constant(x), cfg, p, "block0/attn").value(), x));
      CHECK(bitwise_equal(mlp_block(g.constant(x), cfg, p, "block0/mlp").value(), x));
    }
  }
}

TEST_CASE("mlp: pre_post with identity norms matches the composed oracle") {
  auto cfg = tiny();
  cfg.block_mlp_ln = Placement::pre_post;
  auto tree = init_params<double>(cfg, 15);
  const auto x = random_tensor({2, 3, 16}, 16);
  Graph<double> g;
  BoundParams<double> p(g, tree);
  const auto got = mlp_block(g.constant(x), cfg, p, "block0/mlp").value();
  auto c = [&](const char* path) { return g.constant(tree.at(path)); };
  auto h = matmul(normalize_only(g.constant(x)), c("block0/mlp/fc1/kernel")) + c("block0/mlp/fc1/bias");
  h = matmul(gelu(h), c("block0/mlp/fc2/kernel")) + c("block0/mlp/fc2/bias");
  const auto want = (g.constant(x) + normalize_only(h)).value();
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("mlp: gradient check through a 2-token block") {
  for (BlockExtra extra : {BlockExtra::none, BlockExtra::normformer, BlockExtra::subln}) {
    auto cfg = tiny();
    cfg.block_mlp_ln = Placement::pre_post;
    cfg.block_extra = extra;
    const auto tree = randomized(cfg, 17);
    const auto w = random_tensor({1, 2, 16}, 18);
    std::vector<std::string> names;
    std::vector<Tensor<double>> inputs{random_tensor({1, 2, 16}, 19)};
    names.emplace_back("x");
    for (const auto& [path, t] : tree) {
      if (path.starts_with("block0/mlp/")) {
        names.push_back(path);
        inputs.push_back(t);
      }
    }
    const auto report = gradient_check(
        [&](Graph<double>& g, std::span<const Var<double>> v) {
          std::vector<std::pair<std::string, Var<double>>> vars;
          for (std::size_t i = 1; i < v.size(); ++i) vars.emplace_back(names[i], v[i]);
          BoundParams<double> p(std::move(vars));
          return sum_all(mlp_block(v[0], cfg, p, "block0/mlp") * g.constant(w));
        },
        inputs, names);
    CAPTURE(to_string(extra));
    CHECK(report.passed());
  }
}

TEST_CASE("vit_forward: shapes and pipeline order") {
  ModelConfig cfg;  // 28x28x1, P=7, D=64
  CHECK(cfg.sequence_length() == 17);
  const auto x = random_tensor<float>({2, 28, 28, 1}, 20, 0, 1);
  const auto logits = vit_logits(cfg, init_params<float>(cfg, 0), x);
  CHECK(logits.shape() == Shape{2, cfg.num_classes});
  CHECK_THROWS_AS(vit_logits(cfg, init_params<float>(cfg, 0), random_tensor<float>({2, 28, 27, 1}, 1)),
                  ShapeError);

  // Stem settings share the patchify output and everything before the stem.
  auto a = micro_model_config();
  auto b = a;
  b.stem_norm = StemNorm::dpn;
  const auto ta = init_params<double>(a, 4);
  const auto tb = init_params<double>(b, 4);
  CHECK(bitwise_equal(ta.at("stem/dense/kernel"), tb.at("stem/dense/kernel")));
  CHECK(bitwise_equal(ta.at("block1/mlp/fc2/kernel"), tb.at("block1/mlp/fc2/kernel")));
  const auto img = random_tensor({2, 4, 4, 1}, 21);
  Graph<double> g;
  auto patches = patchify(g.constant(img), 2);
  CHECK(bitwise_equal(patches.value(), patchify(img, 2)));
  CHECK_FALSE(bitwise_equal(vit_logits(a, ta, img), vit_logits(b, tb, img)));
}

TEST_CASE("vit_forward: float build matches recorded double-precision logits") {
  // Recorded once from the float64 build: micro model, init seed 0, images
  // uniform in [-1, 1) from random_tensor seed 77.
  const Rows golden_none = {-6.7531522079883235, -4.8267267152801523, -6.5605721403485244,
                            -6.71014550576911,   -4.7709116854601987, -6.7931039585581487};
  const Rows golden_dpn = {-6.8025395355505669, -4.7898384735636377, -7.6302472803318224,
                           -6.7471238506309934, -4.7492314883505129, -6.8288617964052536};
  for (auto [stem, golden] : {std::pair{StemNorm::none, golden_none}, std::pair{StemNorm::dpn, golden_dpn}}) {
    const auto cfg = tiny(stem);
    const auto images = random_tensor<float>({2, 4, 4, 1}, 77, -1, 1);
    const auto f = vit_logits(cfg, init_params<float>(cfg, 0), images);
    const auto d = vit_logits(cfg, init_params<double>(cfg, 0), random_tensor({2, 4, 4, 1}, 77, -1, 1));
    for (std::size_t i = 0; i < golden.size(); ++i) {
      CHECK(std::abs(f[i] - golden[i]) < 1e-3);
      CHECK(std::abs(d[i] - golden[i]) < 1e-12);
    }
  }
}

TEST_CASE("vit_forward: zeroed residual branches leave class token, posemb and head") {
  auto cfg = tiny();
  auto tree = randomized(cfg, 22);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    for (const char* leaf : {"attn/out/kernel", "attn/out/bias", "mlp/fc2/kernel", "mlp/fc2/bias"}) {
      auto& t = tree.at("block" + std::to_string(i) + "/" + leaf);
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = 0.0;
    }
  }
  const auto logits = vit_logits(cfg, tree, random_tensor({3, 4, 4, 1}, 23));
  Rows tok(16);
  for (std::size_t c = 0; c < 16; ++c) tok[c] = tree.at("stem/cls")[c] + tree.at("stem/posemb")[c];
  tok = oracle_ln(tok, 16, tree.at("head/ln/gamma"), tree.at("head/ln/beta"));
  const Rows want = oracle_dense(tok, 16, tree.at("head/dense/kernel"), tree.at("head/dense/bias"));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(logits[b * 3 + k] - want[k]) < 1e-12);
}

TEST_CASE("placement grid") {
  const auto grid = placement_grid();
  CHECK(grid.size() == 9);
  CHECK(grid.front() == std::pair{Placement::pre, Placement::pre});
  std::set<std::pair<Placement, Placement>> unique(grid.begin(), grid.end());
  CHECK(unique.size() == 9);
}

TEST_CASE("posemb interpolation") {
  const auto pe = random_tensor({5, 3}, 24);
  CHECK(bitwise_equal(posemb_interpolate(pe, 2, 2), pe));

  // A 2x2 grid with values 0, 1 along its top row: the new midpoint is 0.5.
  const Tensor<double> line({5, 1}, {9, 0, 1, 0, 1});
  const auto up = posemb_interpolate(line, 3, 3);
  CHECK(up[0] == 9.0);
  CHECK(up[1] == 0.0);
  CHECK(up[2] == 0.5);
  CHECK(up[3] == 1.0);

  const auto big = posemb_interpolate(pe, 4, 4);
  CHECK(big.shape() == Shape{17, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(big[c] == pe[c]);
    CHECK(big[(1 + 0) * 3 + c] == pe[1 * 3 + c]);
    CHECK(big[(1 + 3) * 3 + c] == pe[2 * 3 + c]);
    CHECK(big[(1 + 12) * 3 + c] == pe[3 * 3 + c]);
    CHECK(big[(1 + 15) * 3 + c] == pe[4 * 3 + c]);
  }
  CHECK_THROWS_AS(posemb_interpolate(random_tensor({4, 3}, 1), 2, 2), ShapeError);
}

TEST_CASE("init_params") {
  ModelConfig cfg;
  cfg.stem_norm = StemNorm::dpn;
  const auto a = init_params<float>(cfg, 5);
  CHECK(bitwise_equal(a, init_params<float>(cfg, 5)));
  CHECK_FALSE(bitwise_equal(a, init_params<float>(cfg, 6)));
  for (const auto& [path, t] : a) {
    CAPTURE(path);
    CHECK(t.grad_tracked());
    if (path.ends_with("/gamma"))
      for (float v : t.data()) CHECK(v == 1.0f);
    if (path.ends_with("/beta") || path == "stem/cls")
      for (float v : t.data()) CHECK(v == 0.0f);
  }
  for (float v : a.at("head/dense/bias").data()) {
    CHECK(v == -6.9f);
    CHECK(std::abs(1.0 / (1.0 + std::exp(-double(v))) - 1.006e-3) < 1e-5);
  }
  CHECK(init_params<float>(cfg, 5, LossKind::softmax_xent).at("head/dense/bias")[0] == 0.0f);

  // Kernel std close to 1/sqrt(fan_in), truncated at two sigma.
  const auto& k = a.at("block0/mlp/fc1/kernel");
  double sq = 0.0, mx = 0.0;
  for (float v : k.data()) {
    sq += double(v) * v;
    mx = std::max(mx, std::abs(double(v)));
  }
  const double fan_in = cfg.hidden;
  CHECK(std::sqrt(sq / k.size()) == doctest::Approx(1.0 / std::sqrt(fan_in)).epsilon(0.1));
  CHECK(mx <= 2.0 / std::sqrt(fan_in) / 0.87962566103423978 + 1e-6);
}

TEST_CASE("layer groups") {
  const auto cfg = tiny();
  CHECK(layer_groups(cfg) == std::vector<std::string>{"stem", "block0", "block1", "head"});
  CHECK(layer_group("block1/mlp/fc1/kernel") == "block1");
}

TEST_CASE("checkpoint round trip is bitwise and errors are explicit") {
  auto cfg = tiny(StemNorm::dpn);
  const auto tree = randomized(cfg, 30);
  const std::string bytes = encode_checkpoint(cfg, tree);
  const auto back = decode_checkpoint<double>(bytes);
  CHECK(back.config == cfg);
  CHECK(bitwise_equal(back.params, tree));
  CHECK(encode_checkpoint(back.config, back.params) == bytes);
  CHECK(checkpoint_dtype(bytes) == DType::f64);

  const auto dir = vitlab::testing::scratch_dir("ckpt");
  save_checkpoint(dir / "a.bin", cfg, init_params<float>(cfg, 1));
  CHECK(bitwise_equal(load_checkpoint<float>(dir / "a.bin").params, init_params<float>(cfg, 1)));

  CHECK_THROWS(decode_checkpoint<double>(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(decode_checkpoint<double>("NOTACKPT" + bytes.substr(8)));
  CHECK_THROWS(decode_checkpoint<float>(bytes));
  CHECK_THROWS(load_checkpoint<float>(dir / "missing.bin"));
}
