// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/model.hpp"

#include <cmath>

#include "vitlab/normalization.hpp"
#include "vitlab/rng.hpp"

namespace vitlab {

// ---- ParamTree -----------------------------------------------------------------

template <typename T>
void ParamTree<T>::add(std::string path, Tensor<T> value) {
  if (index_.count(path) != 0) throw Error("duplicate parameter path '" + path + "'");
  value.set_grad_tracked(true);
  index_.emplace(path, entries_.size());
  entries_.emplace_back(std::move(path), std::move(value));
}

template <typename T>
bool ParamTree<T>::contains(std::string_view path) const {
  return index_.count(std::string(path)) != 0;
}

template <typename T>
const Tensor<T>& ParamTree<T>::at(std::string_view path) const {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw Error("no parameter '" + std::string(path) + "'");
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParamTree<T>::at(std::string_view path) {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw Error("no parameter '" + std::string(path) + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamTree<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
bool bitwise_equal(const ParamTree<T>& a, const ParamTree<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    if (ea.first != eb.first || !bitwise_equal(ea.second, eb.second)) return false;
  }
  return true;
}

template <typename T>
BoundParams<T>::BoundParams(Graph<T>& graph, const ParamTree<T>& tree) {
  for (const auto& [path, value] : tree) {
    index_.emplace(path, vars_.size());
    vars_.emplace_back(path, graph.leaf(value));
  }
}

template <typename T>
BoundParams<T>::BoundParams(std::vector<std::pair<std::string, Var<T>>> vars)
    : vars_(std::move(vars)) {
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (!index_.emplace(vars_[i].first, i).second) {
      throw Error("duplicate parameter path '" + vars_[i].first + "'");
    }
  }
}

template <typename T>
Var<T> BoundParams<T>::operator()(std::string_view path) const {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw Error("model is missing parameter '" + std::string(path) + "'");
  return vars_[it->second].second;
}

template <typename T>
Var<T> BoundParams<T>::optional(std::string_view path) const {
  auto it = index_.find(std::string(path));
  return it == index_.end() ? Var<T>{} : vars_[it->second].second;
}

// ---- forward ---------------------------------------------------------------------

namespace {

std::string join(std::string_view a, std::string_view b) {
  std::string s(a);
  s += '/';
  s += b;
  return s;
}

template <typename T>
Var<T> dense(Var<T> x, const BoundParams<T>& p, std::string_view prefix) {
  return matmul(x, p(join(prefix, "kernel"))) + p(join(prefix, "bias"));
}

template <typename T>
Var<T> block_ln(Var<T> x, const BoundParams<T>& p, std::string_view prefix) {
  return layer_norm(x, p(join(prefix, "gamma")), p(join(prefix, "beta")), kNormEps);
}

template <typename T>
Var<T> stem_norm(Var<T> x, const ModelConfig& cfg, const BoundParams<T>& p,
                 std::string_view prefix) {
  const NormKind kind = cfg.stem_norm_op;
  Var<T> gamma = norm_has_gamma(kind) ? p(join(prefix, "gamma")) : Var<T>{};
  Var<T> beta = norm_has_beta(kind) ? p(join(prefix, "beta")) : Var<T>{};
  return apply_norm(kind, x, gamma, beta, kNormEps);
}

bool has_pre(Placement p) { return p == Placement::pre || p == Placement::pre_post; }
bool has_post(Placement p) { return p == Placement::post || p == Placement::pre_post; }

}  // namespace

RearrangePlan patchify_plan(const Shape& image_shape, std::size_t patch) {
  if (image_shape.size() != 4) {
    throw ShapeError("patchify expects [B, H, W, C], got " + shape_str(image_shape));
  }
  if (patch == 0 || image_shape[1] % patch != 0 || image_shape[2] % patch != 0) {
    throw ShapeError("image " + std::to_string(image_shape[1]) + "x" +
                     std::to_string(image_shape[2]) + " is not divisible by patch size " +
                     std::to_string(patch));
  }
  return RearrangePlan("b (ht hp) (wt wp) c -> b (ht wt) (hp wp c)", image_shape,
                       {{"hp", patch}, {"wp", patch}});
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  return patchify_plan(images.shape(), patch).apply(images);
}

template <typename T>
Var<T> patchify(Var<T> images, std::size_t patch) {
  return rearrange(images, patchify_plan(images.shape(), patch));
}

template <typename T>
StemOutput<T> stem_forward(Var<T> patches, const ModelConfig& cfg, const BoundParams<T>& p) {
  const StemNorm s = cfg.stem_norm;
  Var<T> x = patches;
  if (s == StemNorm::pre || s == StemNorm::dpn) x = stem_norm(x, cfg, p, "stem/ln0");
  x = dense(x, p, "stem/dense");
  if (s == StemNorm::post || s == StemNorm::dpn) x = stem_norm(x, cfg, p, "stem/ln1");
  return {x, s == StemNorm::post_posemb};
}

template <typename T>
Var<T> attention_block(Var<T> x, const ModelConfig& cfg, const BoundParams<T>& p,
                       std::string_view prefix) {
  const Shape& s = x.shape();
  const std::size_t batch = s[0];
  const std::size_t tokens = s[1];
  const std::size_t d = cfg.hidden;
  const std::size_t heads = cfg.heads;
  const std::size_t dh = cfg.head_dim();

  Var<T> h = has_pre(cfg.block_sa_ln) ? block_ln(x, p, join(prefix, "ln_pre")) : x;
  Var<T> qkv = dense(h, p, join(prefix, "qkv"));
  // [B, T, 3, H, dh] -> [3, B, H, T, dh]
  qkv = permute(reshape(qkv, {batch, tokens, 3, heads, dh}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) {
    return reshape(slice(qkv, 0, i, i + 1), {batch * heads, tokens, dh});
  };
  Var<T> q = part(0);
  Var<T> k = part(1);
  Var<T> v = part(2);

  Var<T> logits = scale(bmm(q, transpose(k, 1, 2)), static_cast<T>(1.0 / std::sqrt(double(dh))));
  Var<T> attn = bmm(softmax(logits, -1), v);
  Var<T> out = reshape(permute(reshape(attn, {batch, heads, tokens, dh}), {0, 2, 1, 3}),
                       {batch, tokens, d});

  if (cfg.block_extra == BlockExtra::subln) out = block_ln(out, p, join(prefix, "ln_sub"));
  out = dense(out, p, join(prefix, "out"));
  if (cfg.block_extra == BlockExtra::normformer) out = block_ln(out, p, join(prefix, "ln_nf"));
  if (has_post(cfg.block_sa_ln)) out = block_ln(out, p, join(prefix, "ln_post"));
  return x + out;
}

template <typename T>
Var<T> mlp_block(Var<T> x, const ModelConfig& cfg, const BoundParams<T>& p,
                 std::string_view prefix) {
  Var<T> h = has_pre(cfg.block_mlp_ln) ? block_ln(x, p, join(prefix, "ln_pre")) : x;
  h = dense(h, p, join(prefix, "fc1"));
  if (cfg.block_extra == BlockExtra::subln) h = block_ln(h, p, join(prefix, "ln_mid"));
  h = gelu(h);
  if (cfg.block_extra == BlockExtra::normformer) h = block_ln(h, p, join(prefix, "ln_mid"));
  h = dense(h, p, join(prefix, "fc2"));
  if (has_post(cfg.block_mlp_ln)) h = block_ln(h, p, join(prefix, "ln_post"));
  return x + h;
}

template <typename T>
Var<T> vit_forward(Var<T> images, const ModelConfig& cfg, const BoundParams<T>& p) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.image_height || s[2] != cfg.image_width ||
      s[3] != cfg.channels) {
    throw ShapeError("model expects images [B, " + std::to_string(cfg.image_height) + ", " +
                     std::to_string(cfg.image_width) + ", " + std::to_string(cfg.channels) +
                     "], got " + shape_str(s));
  }
  const std::size_t batch = s[0];
  const std::size_t d = cfg.hidden;

  const StemOutput<T> stem = stem_forward(patchify(images, cfg.patch_size), cfg, p);
  Var<T> cls = broadcast_to(p("stem/cls"), {batch, 1, d});
  Var<T> x = concat<T>({cls, stem.tokens}, 1);
  x = x + p("stem/posemb");
  if (stem.norm_after_posemb) x = stem_norm(x, cfg, p, "stem/ln_posemb");

  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string block = "block" + std::to_string(i);
    x = attention_block(x, cfg, p, block + "/attn");
    x = mlp_block(x, cfg, p, block + "/mlp");
  }
  x = block_ln(x, p, "head/ln");
  Var<T> token = reshape(slice(x, 1, 0, 1), {batch, d});
  return dense(token, p, "head/dense");
}

template <typename T>
Tensor<T> vit_logits(const ModelConfig& cfg, const ParamTree<T>& params, const Tensor<T>& images) {
  Graph<T> g;
  BoundParams<T> p(g, params);
  return vit_forward(g.constant(images), cfg, p).value();
}

std::vector<std::pair<Placement, Placement>> placement_grid() {
  std::vector<std::pair<Placement, Placement>> grid;
  for (Placement sa : {Placement::pre, Placement::post, Placement::pre_post}) {
    for (Placement mlp : {Placement::pre, Placement::post, Placement::pre_post}) {
      grid.emplace_back(sa, mlp);
    }
  }
  return grid;
}

// ---- positional embedding resampling ------------------------------------------------

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<Tap> linear_taps(std::size_t from, std::size_t to) {
  std::vector<Tap> taps(to);
  for (std::size_t i = 0; i < to; ++i) {
    const double src = to == 1 ? 0.0
                               : static_cast<double>(i) * static_cast<double>(from - 1) /
                                     static_cast<double>(to - 1);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, from - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

template <typename T>
T lerp_exact(T a, T b, double f) {
  if (f == 0.0) return a;
  if (f == 1.0) return b;
  return static_cast<T>((1.0 - f) * static_cast<double>(a) + f * static_cast<double>(b));
}

}  // namespace

template <typename T>
Tensor<T> posemb_interpolate(const Tensor<T>& posemb, std::size_t new_h, std::size_t new_w) {
  if (posemb.rank() != 2 || posemb.shape()[0] < 2) {
    throw ShapeError("posemb must be [N+1, D] with N >= 1, got " + shape_str(posemb.shape()));
  }
  if (new_h == 0 || new_w == 0) throw ShapeError("posemb target grid must be non-empty");
  const std::size_t n = posemb.shape()[0] - 1;
  const std::size_t d = posemb.shape()[1];
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) {
    throw ShapeError("posemb holds " + std::to_string(n) + " patch rows, which is not a square grid");
  }
  const auto src = posemb.data();
  const T* grid = src.data() + d;

  // Rows first: [g, g, D] -> [new_h, g, D].
  const auto ty = linear_taps(g, new_h);
  std::vector<T> rows(new_h * g * d);
  for (std::size_t i = 0; i < new_h; ++i) {
    for (std::size_t x = 0; x < g; ++x) {
      for (std::size_t c = 0; c < d; ++c) {
        rows[(i * g + x) * d + c] =
            lerp_exact(grid[(ty[i].lo * g + x) * d + c], grid[(ty[i].hi * g + x) * d + c], ty[i].frac);
      }
    }
  }
  const auto tx = linear_taps(g, new_w);
  std::vector<T> out((new_h * new_w + 1) * d);
  std::copy_n(src.data(), d, out.data());
  for (std::size_t i = 0; i < new_h; ++i) {
    for (std::size_t j = 0; j < new_w; ++j) {
      T* dst = out.data() + (1 + i * new_w + j) * d;
      for (std::size_t c = 0; c < d; ++c) {
        dst[c] = lerp_exact(rows[(i * g + tx[j].lo) * d + c], rows[(i * g + tx[j].hi) * d + c],
                            tx[j].frac);
      }
    }
  }
  return Tensor<T>(Shape{new_h * new_w + 1, d}, std::move(out));
}

// ---- initialization ------------------------------------------------------------------

double initial_head_bias(LossKind loss) {
  return loss == LossKind::sigmoid_xent ? kSigmoidHeadBias : 0.0;
}

template <typename T>
ParamTree<T> init_params(const ModelConfig& cfg, std::uint64_t seed, LossKind loss) {
  cfg.validate();
  // Standard deviation of a unit normal truncated to [-2, 2].
  constexpr double kTruncStd = 0.87962566103423978;
  ParamTree<T> tree;

  auto dense = [&](const std::string& prefix, std::size_t fan_in, std::size_t fan_out,
                   double bias = 0.0) {
    const std::string kpath = prefix + "/kernel";
    CounterRng rng(seed, CounterRng::hash(kpath));
    const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> k(fan_in * fan_out);
    for (T& v : k) v = static_cast<T>(rng.truncated_normal() / kTruncStd * std);
    tree.add(kpath, Tensor<T>(Shape{fan_in, fan_out}, std::move(k)));
    tree.add(prefix + "/bias", Tensor<T>(Shape{fan_out}, static_cast<T>(bias)));
  };
  auto norm = [&](const std::string& prefix, std::size_t dim, NormKind kind) {
    if (norm_has_gamma(kind)) tree.add(prefix + "/gamma", Tensor<T>(Shape{dim}, T(1)));
    if (norm_has_beta(kind)) tree.add(prefix + "/beta", Tensor<T>(Shape{dim}, T(0)));
  };

  const std::size_t d = cfg.hidden;
  const StemNorm s = cfg.stem_norm;
  if (s == StemNorm::pre || s == StemNorm::dpn) norm("stem/ln0", cfg.patch_dim(), cfg.stem_norm_op);
  dense("stem/dense", cfg.patch_dim(), d);
  if (s == StemNorm::post || s == StemNorm::dpn) norm("stem/ln1", d, cfg.stem_norm_op);
  tree.add("stem/cls", Tensor<T>(Shape{1, 1, d}, T(0)));
  {
    CounterRng rng(seed, CounterRng::hash("stem/posemb"));
    std::vector<T> pe(cfg.sequence_length() * d);
    for (T& v : pe) v = static_cast<T>(rng.normal() * 0.02);
    tree.add("stem/posemb", Tensor<T>(Shape{cfg.sequence_length(), d}, std::move(pe)));
  }
  if (s == StemNorm::post_posemb) norm("stem/ln_posemb", d, cfg.stem_norm_op);

  const bool sub = cfg.block_extra == BlockExtra::subln;
  const bool nf = cfg.block_extra == BlockExtra::normformer;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string a = "block" + std::to_string(i) + "/attn";
    if (has_pre(cfg.block_sa_ln)) norm(a + "/ln_pre", d, NormKind::layer_norm);
    dense(a + "/qkv", d, 3 * d);
    if (sub) norm(a + "/ln_sub", d, NormKind::layer_norm);
    dense(a + "/out", d, d);
    if (nf) norm(a + "/ln_nf", d, NormKind::layer_norm);
    if (has_post(cfg.block_sa_ln)) norm(a + "/ln_post", d, NormKind::layer_norm);

    const std::string m = "block" + std::to_string(i) + "/mlp";
    if (has_pre(cfg.block_mlp_ln)) norm(m + "/ln_pre", d, NormKind::layer_norm);
    dense(m + "/fc1", d, cfg.mlp_dim);
    if (sub || nf) norm(m + "/ln_mid", cfg.mlp_dim, NormKind::layer_norm);
    dense(m + "/fc2", cfg.mlp_dim, d);
    if (has_post(cfg.block_mlp_ln)) norm(m + "/ln_post", d, NormKind::layer_norm);
  }
  norm("head/ln", d, NormKind::layer_norm);
  dense("head/dense", d, cfg.num_classes, initial_head_bias(loss));
  return tree;
}

std::vector<std::string> layer_groups(const ModelConfig& cfg) {
  std::vector<std::string> groups{"stem"};
  for (std::size_t i = 0; i < cfg.depth; ++i) groups.push_back("block" + std::to_string(i));
  groups.emplace_back("head");
  return groups;
}

std::string_view layer_group(std::string_view path) { return path.substr(0, path.find('/')); }

bool has_pixel_norm(const ModelConfig& cfg) {
  return (cfg.stem_norm == StemNorm::pre || cfg.stem_norm == StemNorm::dpn) &&
         norm_has_gamma(cfg.stem_norm_op);
}

#define VITLAB_INSTANTIATE_MODEL(T)                                                        \
  template class ParamTree<T>;                                                             \
  template class BoundParams<T>;                                                           \
  template bool bitwise_equal<T>(const ParamTree<T>&, const ParamTree<T>&);                \
  template Tensor<T> patchify<T>(const Tensor<T>&, std::size_t);                           \
  template Var<T> patchify<T>(Var<T>, std::size_t);                                        \
  template StemOutput<T> stem_forward<T>(Var<T>, const ModelConfig&, const BoundParams<T>&); \
  template Var<T> attention_block<T>(Var<T>, const ModelConfig&, const BoundParams<T>&,    \
                                     std::string_view);                                    \
  template Var<T> mlp_block<T>(Var<T>, const ModelConfig&, const BoundParams<T>&,          \
                               std::string_view);                                          \
  template Var<T> vit_forward<T>(Var<T>, const ModelConfig&, const BoundParams<T>&);       \
  template Tensor<T> vit_logits<T>(const ModelConfig&, const ParamTree<T>&, const Tensor<T>&); \
  template Tensor<T> posemb_interpolate<T>(const Tensor<T>&, std::size_t, std::size_t);    \
  template ParamTree<T> init_params<T>(const ModelConfig&, std::uint64_t, LossKind);

VITLAB_INSTANTIATE_MODEL(float)
VITLAB_INSTANTIATE_MODEL(double)

#undef VITLAB_INSTANTIATE_MODEL

}  // namespace vitlab
