// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment commands behind the CLI. Every command writes its outputs with
// write_file_atomic and is byte-for-byte reproducible for a fixed spec.
//
// Run spec (JSON):
//   {
//     "name": "baseline",
//     "model": { ModelConfig fields, or "variant": "S/16" },
//     "train": { TrainConfig fields },
//     "data":  { "dataset": "synthetic" | "mnist" | "cifar10", "dir": "...",
//                "value_range": true, "train_limit": 0, "test_limit": 0,
//                "synthetic_train": 512, "synthetic_test": 256, "synthetic_seed": 0 }
//   }
// Unknown keys anywhere are errors naming the key.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vitlab/config.hpp"
#include "vitlab/data.hpp"
#include "vitlab/io.hpp"
#include "vitlab/model.hpp"
#include "vitlab/train.hpp"

namespace vitlab {

struct DataSpec {
  std::string dataset = "synthetic";
  std::filesystem::path dir;
  // Map pixels to [-1, 1] before training.
  bool value_range = true;
  // 0 keeps every example; otherwise the first N.
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t synthetic_train = 512;
  std::size_t synthetic_test = 256;
  std::uint64_t synthetic_seed = 0;

  bool operator==(const DataSpec&) const = default;
};

struct RunSpec {
  std::string name = "run";
  ModelConfig model;
  TrainConfig train;
  DataSpec data;
  std::filesystem::path out_dir = "out";

  void validate() const;
};

RunSpec run_spec_from_json(const nlohmann::json& j);
RunSpec load_run_spec(const std::filesystem::path& path);
nlohmann::json to_json(const RunSpec& spec);

struct Splits {
  Dataset train;
  Dataset test;
};

// Loads (or synthesizes) both splits and applies limits and value_range.
Splits load_splits(const RunSpec& spec);

// step,loss,learning_rate,eval_accuracy,grad_norm,embedding_grad_norm,
// grad_norm_stem,grad_norm_block0..,grad_norm_head
std::string metrics_csv(const std::vector<MetricsRecord>& records);

struct RunOutcome {
  std::string name;
  std::string status = "ok";
  std::optional<double> accuracy;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
};

// Trains spec on its data and writes metrics.csv and checkpoint.bin in dir.
RunOutcome run_training(const RunSpec& spec, const Splits& splits,
                        const std::filesystem::path& dir, std::size_t log_every_override = 0,
                        std::vector<MetricsRecord>* records_out = nullptr);

RunOutcome cmd_train(const RunSpec& spec);

struct EvalOutcome {
  double accuracy = 0.0;
  std::size_t examples = 0;
  std::filesystem::path csv_path;
};

// Evaluates a checkpoint on the test split of spec.data; writes eval.csv.
EvalOutcome cmd_eval(const RunSpec& spec, const std::filesystem::path& checkpoint);

struct VariantRun {
  std::string name;
  ModelConfig model;
};

// The nine placements, then normformer, subln and the DPN stem (12 runs).
std::vector<VariantRun> placement_sweep_variants(const ModelConfig& base);
// none, pre, post, post_posemb, dpn, only_learnable, rmsnorm, no_learnable.
std::vector<VariantRun> stem_ablation_variants(const ModelConfig& base);

struct SweepOutcome {
  std::vector<RunOutcome> runs;
  std::filesystem::path csv_path;
};

// Writes placements.csv with a delta column against the (pre, pre) baseline.
SweepOutcome cmd_sweep_placements(const RunSpec& spec);
// Writes ablate_stem.csv with a delta column against dpn.
SweepOutcome cmd_ablate_stem(const RunSpec& spec);

struct GradNormOutcome {
  std::filesystem::path depth_csv;
  std::filesystem::path embedding_csv;
  std::filesystem::path summary_csv;
  // Mean stem-group gradient norm over the final window, none over dpn.
  double stem_ratio = 0.0;
  // Same for the embedding layer (stem/dense).
  double embedding_ratio = 0.0;
};

// Twin runs (stem none and dpn) logging every step. The depth table averages
// each layer group over the final 20% of steps.
GradNormOutcome cmd_grad_norms(const RunSpec& spec);

// Per-channel P x P grids of the first stem norm's gamma.
struct ScaleGrids {
  std::size_t patch = 0;
  std::size_t channels = 0;
  // gamma laid out as (P, P, C), the patchify feature order.
  std::vector<double> values;

  double at(std::size_t row, std::size_t col, std::size_t channel) const {
    return values[(row * patch + col) * channels + channel];
  }
};

ScaleGrids scale_grids(const ModelConfig& cfg, const ParamTree<double>& params);
// row,col,channel,gamma with shortest round-trip numbers.
std::string scales_csv(const ScaleGrids& grids);
ScaleGrids parse_scales_csv(std::string_view text);
// Min-max normalized to 0..255 (rounded); a constant channel maps to 0.
GrayImage channel_image(const ScaleGrids& grids, std::size_t channel);

struct ExportOutcome {
  std::vector<std::filesystem::path> images;
  std::filesystem::path csv_path;
};

ExportOutcome cmd_export_scales(const std::filesystem::path& checkpoint,
                                const std::filesystem::path& out_dir);

struct GradCheckCommand {
  // Template for the micro model; stem, placements and extra are swept.
  ModelConfig model;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::filesystem::path out_dir = "out";
};

// depth 2, D 16, 2 heads, 4x4x1 images with P 2, mlp 16, 3 classes.
ModelConfig micro_model_config();

struct GradCheckRow {
  std::string config;
  GradCheckEntry entry;
};

struct GradCheckOutcome {
  std::vector<GradCheckRow> rows;
  std::size_t configs = 0;
  std::filesystem::path csv_path;

  bool passed() const;
  std::vector<std::string> failures() const;
};

// Gradient check of every parameter of one model at a perturbed random point
// (norm and bias parameters are moved off their 1 / 0 initial values).
GradCheckReport gradient_check_model(const ModelConfig& cfg, std::size_t batch,
                                     std::uint64_t seed, const GradCheckOptions& options);
// All 5 stems x 9 placements x 3 extras; writes grad_check.csv with one row
// per (config, parameter).
GradCheckOutcome cmd_gradient_check(const GradCheckCommand& options);

}  // namespace vitlab
