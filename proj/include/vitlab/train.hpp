// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vitlab/config.hpp"
#include "vitlab/data.hpp"
#include "vitlab/model.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {

class TrainError : public Error {
 public:
  using Error::Error;
};

// Mean over the batch of the per-class binary cross-entropy summed over
// classes, in the stable form softplus(z) - y * z.
template <typename T>
Var<T> sigmoid_xent(Var<T> logits, Var<T> targets);

// Mean over the batch of -sum(y * log_softmax(z)).
template <typename T>
Var<T> softmax_xent(Var<T> logits, Var<T> targets);

template <typename T>
Var<T> loss_fn(LossKind kind, Var<T> logits, Var<T> targets);

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
double cosine_schedule(std::size_t step, const TrainConfig& cfg);

// L2 norm over every element of every tensor, accumulated in double in order.
template <typename T>
double global_norm(const std::vector<Tensor<T>>& tensors);

// Scales every gradient by clip / g when the global norm g exceeds clip
// (clip <= 0 disables). Returns g, the norm before clipping.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double clip);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;

  static OptState zeros_like(const ParamTree<T>& params);
};

// Weight decay applies to paths ending in "/kernel" only.
bool is_decayed(std::string_view path);

// Bias-corrected Adam, then decoupled decay p <- p - lr * wd * p on kernels.
// grads follow the iteration order of params.
template <typename T>
void adam_step(ParamTree<T>& params, const std::vector<Tensor<T>>& grads, OptState<T>& state,
               double lr, double weight_decay, const AdamOptions& opts = {});

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> eval_accuracy;
  // Global norm of the raw gradients, before clipping.
  double grad_norm = 0.0;
  // Raw gradient norm of stem/dense (kernel and bias).
  double embedding_grad_norm = 0.0;
  // Raw gradient norm per layer group: stem, block0.., head.
  std::vector<std::pair<std::string, double>> group_norms;
};

template <typename T>
struct TrainResult {
  ParamTree<T> params;
  std::vector<MetricsRecord> records;
  std::optional<double> final_eval_accuracy;
};

// Steps are numbered 0..total_steps-1 and step s uses cosine_schedule(s).
// A record is kept for step 0, every log_every-th step, every eval step and
// the final step. Non-finite values abort with a TrainError naming the step
// and the first non-finite tensor.
template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const Dataset& train_data, const Dataset* eval_data = nullptr,
                     std::optional<ParamTree<T>> initial = std::nullopt);

// Row-wise argmax of [B, K]; ties go to the lowest index.
template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits);

template <typename T>
double evaluate(const ParamTree<T>& params, const ModelConfig& cfg, const Dataset& data,
                std::size_t batch_size = 256);

}  // namespace vitlab
