// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "vitlab/normalization.hpp"

namespace vitlab {

// Where the stem places its norms around the patch projection.
//   none        dense(x)
//   pre         dense(N(x))
//   post        N(dense(x))
//   post_posemb dense(x), then N after the positional embedding is added
//   dpn         N(dense(N(x)))
enum class StemNorm { none, pre, post, post_posemb, dpn };

// LayerNorm placement around a residual branch: y = x + Npost?(F(Npre?(x))).
enum class Placement { pre, post, pre_post };

// Extra norms inside a block. normformer: after the attention output
// projection and after the MLP non-linearity. subln: before the attention
// output projection and before the MLP non-linearity.
enum class BlockExtra { none, normformer, subln };

enum class LossKind { sigmoid_xent, softmax_xent };

std::string_view to_string(StemNorm v);
std::string_view to_string(Placement v);
std::string_view to_string(BlockExtra v);
std::string_view to_string(LossKind v);

StemNorm parse_stem_norm(std::string_view s);
Placement parse_placement(std::string_view s);
BlockExtra parse_block_extra(std::string_view s);
LossKind parse_loss(std::string_view s);

struct ModelConfig {
  std::size_t image_height = 28;
  std::size_t image_width = 28;
  std::size_t channels = 1;
  std::size_t patch_size = 7;
  std::size_t hidden = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_dim = 128;
  std::size_t num_classes = 10;
  StemNorm stem_norm = StemNorm::none;
  // Norm operation used by every stem norm (the DPN component ablations).
  NormKind stem_norm_op = NormKind::layer_norm;
  Placement block_sa_ln = Placement::pre;
  Placement block_mlp_ln = Placement::pre;
  BlockExtra block_extra = BlockExtra::none;

  void validate() const;

  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_height() * grid_width(); }
  std::size_t sequence_length() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return hidden / heads; }

  bool operator==(const ModelConfig&) const = default;
};

struct VariantDims {
  std::size_t hidden;
  std::size_t heads;
  std::size_t mlp_dim;
  std::size_t depth;
};

// "Ti", "S", "B", "L".
VariantDims variant_dims(std::string_view size);
// Applies a "S/16"-style name: width/depth from the size, patch from the suffix.
ModelConfig with_variant(ModelConfig cfg, std::string_view variant);

struct TrainConfig {
  std::size_t total_steps = 2000;
  std::size_t batch_size = 128;
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t warmup_steps = 100;
  // <= 0 disables clipping.
  double clip_norm = 1.0;
  LossKind loss = LossKind::sigmoid_xent;
  std::uint64_t seed = 0;
  // 0: evaluate only after the last step.
  std::size_t eval_every = 0;
  std::size_t log_every = 10;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

// Unknown keys are rejected with the offending key path in the message.
ModelConfig model_config_from_json(const nlohmann::json& j, std::string_view context = "model");
TrainConfig train_config_from_json(const nlohmann::json& j, std::string_view context = "train");

}  // namespace vitlab
