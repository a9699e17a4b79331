// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Configurable Vision Transformer: patchify stem with the five stem-norm
// strategies, blocks with every pre/post/pre_post placement plus the
// NormFormer and Sub-LN extras, class-token pooling and a dense head.
//
// Parameter paths:
//   stem/ln0/{gamma,beta}        norm over raw pixel patches (pre, dpn)
//   stem/dense/{kernel,bias}     patch projection, kernel [P*P*C, D]
//   stem/ln1/{gamma,beta}        norm over embeddings (post, dpn)
//   stem/cls [1,1,D], stem/posemb [N+1, D]
//   stem/ln_posemb/{gamma,beta}  (post_posemb)
//   block{i}/attn/{ln_pre,qkv,ln_sub,out,ln_nf,ln_post}
//   block{i}/mlp/{ln_pre,fc1,ln_mid,fc2,ln_post}
//   head/ln/{gamma,beta}, head/dense/{kernel,bias}

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vitlab/config.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {

inline constexpr double kSigmoidHeadBias = -6.9;

template <typename T>
class ParamTree {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string path, Tensor<T> value);
  bool contains(std::string_view path) const;
  const Tensor<T>& at(std::string_view path) const;
  Tensor<T>& at(std::string_view path);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  // Insertion order, which init_params keeps stable across runs.
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  ParamTree<U> cast() const {
    ParamTree<U> out;
    for (const auto& [path, t] : entries_) out.add(path, t.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
bool bitwise_equal(const ParamTree<T>& a, const ParamTree<T>& b);

// ParamTree entries registered as leaves of one graph.
template <typename T>
class BoundParams {
 public:
  BoundParams(Graph<T>& graph, const ParamTree<T>& tree);
  // Binds existing leaves, e.g. those created by gradient_check.
  explicit BoundParams(std::vector<std::pair<std::string, Var<T>>> vars);

  Var<T> operator()(std::string_view path) const;
  // Default-constructed Var when absent.
  Var<T> optional(std::string_view path) const;
  bool contains(std::string_view path) const { return index_.count(std::string(path)) != 0; }
  const std::vector<std::pair<std::string, Var<T>>>& vars() const noexcept { return vars_; }

 private:
  std::vector<std::pair<std::string, Var<T>>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

// [B, H, W, C] -> [B, H*W/P^2, P*P*C] using
// "b (ht hp) (wt wp) c -> b (ht wt) (hp wp c)".
RearrangePlan patchify_plan(const Shape& image_shape, std::size_t patch);
template <typename T> Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);
template <typename T> Var<T> patchify(Var<T> images, std::size_t patch);

template <typename T>
struct StemOutput {
  Var<T> tokens;
  // post_posemb: the caller normalizes after adding positional embeddings.
  bool norm_after_posemb = false;
};

template <typename T>
StemOutput<T> stem_forward(Var<T> patches, const ModelConfig& cfg, const BoundParams<T>& params);

// prefix is e.g. "block0/attn".
template <typename T>
Var<T> attention_block(Var<T> x, const ModelConfig& cfg, const BoundParams<T>& params,
                       std::string_view prefix);
// prefix is e.g. "block0/mlp".
template <typename T>
Var<T> mlp_block(Var<T> x, const ModelConfig& cfg, const BoundParams<T>& params,
                 std::string_view prefix);

// images [B, H, W, C] -> logits [B, num_classes]
template <typename T>
Var<T> vit_forward(Var<T> images, const ModelConfig& cfg, const BoundParams<T>& params);

template <typename T>
Tensor<T> vit_logits(const ModelConfig& cfg, const ParamTree<T>& params, const Tensor<T>& images);

// The 3x3 product of attention / MLP placements, (pre, pre) first.
std::vector<std::pair<Placement, Placement>> placement_grid();

// Bilinear, corner-aligned resampling of the patch rows of posemb [N+1, D]
// (N must be a square grid) to new_h * new_w rows. Row 0 is copied.
template <typename T>
Tensor<T> posemb_interpolate(const Tensor<T>& posemb, std::size_t new_h, std::size_t new_w);

// Dense kernels: truncated normal (+-2 sigma, rescaled to unit variance) with
// std 1/sqrt(fan_in); biases and class token zero; posemb normal(0.02); norm
// gamma 1 and beta 0; head bias -6.9 under sigmoid_xent. Each tensor draws
// from its own stream keyed by its path.
template <typename T>
ParamTree<T> init_params(const ModelConfig& cfg, std::uint64_t seed,
                         LossKind loss = LossKind::sigmoid_xent);

double initial_head_bias(LossKind loss);

// "stem", "block0" ... "block{depth-1}", "head".
std::vector<std::string> layer_groups(const ModelConfig& cfg);
// First path component.
std::string_view layer_group(std::string_view path);

bool has_pixel_norm(const ModelConfig& cfg);

}  // namespace vitlab
