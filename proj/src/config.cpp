// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/config.hpp"

#include <array>
#include <charconv>
#include <set>

namespace vitlab {
namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& all, std::string_view what) {
  std::string options;
  for (E e : all) {
    if (to_string(e) == s) return e;
    if (!options.empty()) options += ", ";
    options += to_string(e);
  }
  throw Error("unknown " + std::string(what) + " '" + std::string(s) + "'; valid options: " +
              options);
}

constexpr std::array kStemNorms{StemNorm::none, StemNorm::pre, StemNorm::post,
                                StemNorm::post_posemb, StemNorm::dpn};
constexpr std::array kPlacements{Placement::pre, Placement::post, Placement::pre_post};
constexpr std::array kExtras{BlockExtra::none, BlockExtra::normformer, BlockExtra::subln};
constexpr std::array kLosses{LossKind::sigmoid_xent, LossKind::softmax_xent};

void check_keys(const nlohmann::json& j, std::string_view context,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error(std::string(context) + ": expected an object");
  for (const auto& item : j.items()) {
    if (allowed.count(item.key()) == 0) {
      throw Error("unknown config key '" + std::string(context) + "." + item.key() + "'");
    }
  }
}

std::size_t get_size(const nlohmann::json& j, std::string_view context, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw Error("config key '" + std::string(context) + "." + key +
                "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_double(const nlohmann::json& j, std::string_view context, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) {
    throw Error("config key '" + std::string(context) + "." + key + "' must be a number");
  }
  return v.get<double>();
}

std::string get_string(const nlohmann::json& j, std::string_view context, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) {
    throw Error("config key '" + std::string(context) + "." + key + "' must be a string");
  }
  return v.get<std::string>();
}

}  // namespace

std::string_view to_string(StemNorm v) {
  switch (v) {
    case StemNorm::none: return "none";
    case StemNorm::pre: return "pre";
    case StemNorm::post: return "post";
    case StemNorm::post_posemb: return "post_posemb";
    case StemNorm::dpn: return "dpn";
  }
  return "?";
}

std::string_view to_string(Placement v) {
  switch (v) {
    case Placement::pre: return "pre";
    case Placement::post: return "post";
    case Placement::pre_post: return "pre_post";
  }
  return "?";
}

std::string_view to_string(BlockExtra v) {
  switch (v) {
    case BlockExtra::none: return "none";
    case BlockExtra::normformer: return "normformer";
    case BlockExtra::subln: return "subln";
  }
  return "?";
}

std::string_view to_string(LossKind v) {
  switch (v) {
    case LossKind::sigmoid_xent: return "sigmoid_xent";
    case LossKind::softmax_xent: return "softmax_xent";
  }
  return "?";
}

StemNorm parse_stem_norm(std::string_view s) { return parse_enum(s, kStemNorms, "stem_norm"); }
Placement parse_placement(std::string_view s) { return parse_enum(s, kPlacements, "placement"); }
BlockExtra parse_block_extra(std::string_view s) { return parse_enum(s, kExtras, "block_extra"); }
LossKind parse_loss(std::string_view s) { return parse_enum(s, kLosses, "loss"); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error("invalid model config: " + why); };
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_height == 0 || image_width == 0 || channels == 0) fail("empty image dimensions");
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    fail("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    fail("hidden " + std::to_string(hidden) + " is not divisible by heads " +
         std::to_string(heads));
  }
  if (mlp_dim == 0) fail("mlp_dim must be positive");
  if (num_classes == 0) fail("num_classes must be positive");
}

VariantDims variant_dims(std::string_view size) {
  if (size == "Ti") return {192, 3, 768, 12};
  if (size == "S") return {384, 6, 1536, 12};
  if (size == "B") return {768, 12, 3072, 12};
  if (size == "L") return {1024, 16, 4096, 24};
  throw Error("unknown model size '" + std::string(size) + "'; valid options: Ti, S, B, L");
}

ModelConfig with_variant(ModelConfig cfg, std::string_view variant) {
  const auto slash = variant.find('/');
  const VariantDims d = variant_dims(variant.substr(0, slash));
  cfg.hidden = d.hidden;
  cfg.heads = d.heads;
  cfg.mlp_dim = d.mlp_dim;
  cfg.depth = d.depth;
  if (slash != std::string_view::npos) {
    const auto digits = variant.substr(slash + 1);
    std::size_t patch = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), patch);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || patch == 0) {
      throw Error("bad patch size in variant '" + std::string(variant) + "'");
    }
    cfg.patch_size = patch;
  }
  return cfg;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error("invalid train config: " + why); };
  if (total_steps == 0) fail("total_steps must be positive");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (warmup_steps > total_steps) fail("warmup_steps exceeds total_steps");
  if (log_every == 0) fail("log_every must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"image_size", {c.image_height, c.image_width}},
      {"channels", c.channels},
      {"patch_size", c.patch_size},
      {"hidden", c.hidden},
      {"depth", c.depth},
      {"heads", c.heads},
      {"mlp_dim", c.mlp_dim},
      {"num_classes", c.num_classes},
      {"stem_norm", to_string(c.stem_norm)},
      {"stem_norm_op", to_string(c.stem_norm_op)},
      {"block_sa_ln", to_string(c.block_sa_ln)},
      {"block_mlp_ln", to_string(c.block_mlp_ln)},
      {"block_extra", to_string(c.block_extra)},
      {"pool", "tok"},
  };
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"total_steps", c.total_steps}, {"batch_size", c.batch_size},
      {"base_lr", c.base_lr},         {"weight_decay", c.weight_decay},
      {"warmup_steps", c.warmup_steps}, {"clip_norm", c.clip_norm},
      {"loss", to_string(c.loss)},    {"seed", c.seed},
      {"eval_every", c.eval_every},   {"log_every", c.log_every},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, std::string_view ctx) {
  check_keys(j, ctx,
             {"variant", "image_size", "channels", "patch_size", "hidden", "depth", "heads",
              "mlp_dim", "num_classes", "stem_norm", "stem_norm_op", "block_sa_ln",
              "block_mlp_ln", "block_extra", "pool"});
  ModelConfig c;
  if (j.contains("variant")) c = with_variant(c, get_string(j, ctx, "variant"));
  if (j.contains("image_size")) {
    const auto& s = j.at("image_size");
    if (s.is_array() && s.size() == 2 && s[0].is_number_unsigned() && s[1].is_number_unsigned()) {
      c.image_height = s[0].get<std::size_t>();
      c.image_width = s[1].get<std::size_t>();
    } else if (s.is_number_unsigned()) {
      c.image_height = c.image_width = s.get<std::size_t>();
    } else {
      throw Error("config key '" + std::string(ctx) + ".image_size' must be [H, W] or an integer");
    }
  }
  if (j.contains("channels")) c.channels = get_size(j, ctx, "channels");
  if (j.contains("patch_size")) c.patch_size = get_size(j, ctx, "patch_size");
  if (j.contains("hidden")) c.hidden = get_size(j, ctx, "hidden");
  if (j.contains("depth")) c.depth = get_size(j, ctx, "depth");
  if (j.contains("heads")) c.heads = get_size(j, ctx, "heads");
  if (j.contains("mlp_dim")) c.mlp_dim = get_size(j, ctx, "mlp_dim");
  if (j.contains("num_classes")) c.num_classes = get_size(j, ctx, "num_classes");
  if (j.contains("stem_norm")) c.stem_norm = parse_stem_norm(get_string(j, ctx, "stem_norm"));
  if (j.contains("stem_norm_op")) {
    c.stem_norm_op = parse_norm_kind(get_string(j, ctx, "stem_norm_op"));
  }
  if (j.contains("block_sa_ln")) c.block_sa_ln = parse_placement(get_string(j, ctx, "block_sa_ln"));
  if (j.contains("block_mlp_ln")) {
    c.block_mlp_ln = parse_placement(get_string(j, ctx, "block_mlp_ln"));
  }
  if (j.contains("block_extra")) {
    c.block_extra = parse_block_extra(get_string(j, ctx, "block_extra"));
  }
  if (j.contains("pool") && get_string(j, ctx, "pool") != "tok") {
    throw Error("unknown pool '" + get_string(j, ctx, "pool") + "'; valid options: tok");
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j, std::string_view ctx) {
  check_keys(j, ctx,
             {"total_steps", "batch_size", "base_lr", "weight_decay", "warmup_steps", "clip_norm",
              "loss", "seed", "eval_every", "log_every"});
  TrainConfig c;
  if (j.contains("total_steps")) c.total_steps = get_size(j, ctx, "total_steps");
  if (j.contains("batch_size")) c.batch_size = get_size(j, ctx, "batch_size");
  if (j.contains("base_lr")) c.base_lr = get_double(j, ctx, "base_lr");
  if (j.contains("weight_decay")) c.weight_decay = get_double(j, ctx, "weight_decay");
  if (j.contains("warmup_steps")) c.warmup_steps = get_size(j, ctx, "warmup_steps");
  if (j.contains("clip_norm")) c.clip_norm = get_double(j, ctx, "clip_norm");
  if (j.contains("loss")) c.loss = parse_loss(get_string(j, ctx, "loss"));
  if (j.contains("seed")) c.seed = get_size(j, ctx, "seed");
  if (j.contains("eval_every")) c.eval_every = get_size(j, ctx, "eval_every");
  if (j.contains("log_every")) c.log_every = get_size(j, ctx, "log_every");
  c.validate();
  return c;
}

}  // namespace vitlab
