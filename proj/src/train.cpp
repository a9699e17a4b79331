// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/train.hpp"

#include <cmath>
#include <numbers>

namespace vitlab {

template <typename T>
Var<T> sigmoid_xent(Var<T> logits, Var<T> targets) {
  if (logits.shape() != targets.shape() || logits.shape().size() != 2) {
    throw ShapeError("sigmoid_xent expects matching [B, K] logits and targets, got " +
                     shape_str(logits.shape()) + " and " + shape_str(targets.shape()));
  }
  const auto batch = static_cast<T>(logits.shape()[0]);
  return scale(sum_all(softplus(logits) - targets * logits), T(1) / batch);
}

template <typename T>
Var<T> softmax_xent(Var<T> logits, Var<T> targets) {
  if (logits.shape() != targets.shape() || logits.shape().size() != 2) {
    throw ShapeError("softmax_xent expects matching [B, K] logits and targets, got " +
                     shape_str(logits.shape()) + " and " + shape_str(targets.shape()));
  }
  const auto batch = static_cast<T>(logits.shape()[0]);
  return scale(sum_all(targets * log_softmax(logits, -1)), T(-1) / batch);
}

template <typename T>
Var<T> loss_fn(LossKind kind, Var<T> logits, Var<T> targets) {
  return kind == LossKind::sigmoid_xent ? sigmoid_xent(logits, targets)
                                        : softmax_xent(logits, targets);
}

double cosine_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw DomainError("schedule step " + std::to_string(step) + " exceeds total_steps " +
                      std::to_string(cfg.total_steps));
  }
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps == cfg.warmup_steps) return cfg.base_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_norm(const std::vector<Tensor<T>>& tensors) {
  double acc = 0.0;
  for (const auto& t : tensors) {
    for (T v : t.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(acc);
}

template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double clip) {
  const double g = global_norm(grads);
  if (clip > 0.0 && g > clip) {
    const double factor = clip / g;
    for (auto& t : grads) {
      for (T& v : t.mutable_data()) v = static_cast<T>(static_cast<double>(v) * factor);
    }
  }
  return g;
}

template <typename T>
OptState<T> OptState<T>::zeros_like(const ParamTree<T>& params) {
  OptState<T> s;
  for (const auto& [path, t] : params) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

bool is_decayed(std::string_view path) { return path.ends_with("/kernel"); }

template <typename T>
void adam_step(ParamTree<T>& params, const std::vector<Tensor<T>>& grads, OptState<T>& state,
               double lr, double weight_decay, const AdamOptions& opts) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() ||
      state.v.size() != entries.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients and " +
                     std::to_string(state.m.size()) + " moments for " +
                     std::to_string(entries.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [path, p] = entries[i];
    if (grads[i].shape() != p.shape() || state.m[i].shape() != p.shape()) {
      throw ShapeError("adam_step: gradient for '" + path + "' has shape " +
                       shape_str(grads[i].shape()) + ", parameter has " + shape_str(p.shape()));
    }
    const bool decay = weight_decay != 0.0 && is_decayed(path);
    auto pd = p.mutable_data();
    auto md = state.m[i].mutable_data();
    auto vd = state.v[i].mutable_data();
    const auto gd = grads[i].data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      const double g = gd[k];
      const double m = opts.beta1 * md[k] + (1.0 - opts.beta1) * g;
      const double v = opts.beta2 * vd[k] + (1.0 - opts.beta2) * g * g;
      md[k] = static_cast<T>(m);
      vd[k] = static_cast<T>(v);
      double w = static_cast<double>(pd[k]) - lr * (m / c1) / (std::sqrt(v / c2) + opts.eps);
      if (decay) w -= lr * weight_decay * w;
      pd[k] = static_cast<T>(w);
    }
  }
}

namespace {

void check_compatible(const ModelConfig& cfg, const Dataset& d) {
  if (d.height != cfg.image_height || d.width != cfg.image_width || d.channels != cfg.channels) {
    throw TrainError("dataset images are " + std::to_string(d.height) + "x" +
                     std::to_string(d.width) + "x" + std::to_string(d.channels) +
                     " but the model expects " + std::to_string(cfg.image_height) + "x" +
                     std::to_string(cfg.image_width) + "x" + std::to_string(cfg.channels));
  }
  if (d.class_count != cfg.num_classes) {
    throw TrainError("dataset has " + std::to_string(d.class_count) + " classes but the model has " +
                     std::to_string(cfg.num_classes));
  }
}

template <typename T>
[[noreturn]] void non_finite(std::size_t step, const ParamTree<T>& params,
                             const std::vector<Tensor<T>>* grads, const std::string& detail) {
  std::string where;
  for (const auto& [path, t] : params) {
    if (!t.all_finite()) {
      where = "parameter '" + path + "'";
      break;
    }
  }
  if (where.empty() && grads != nullptr) {
    const auto& entries = params.entries();
    for (std::size_t i = 0; i < grads->size(); ++i) {
      if (!(*grads)[i].all_finite()) {
        where = "gradient of '" + entries[i].first + "'";
        break;
      }
    }
  }
  if (where.empty()) where = "activation (" + detail + ")";
  throw TrainError("non-finite value at step " + std::to_string(step) +
                   "; first non-finite tensor: " + where);
}

}  // namespace

template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const Dataset& train_data, const Dataset* eval_data,
                     std::optional<ParamTree<T>> initial) {
  model_cfg.validate();
  train_cfg.validate();
  check_compatible(model_cfg, train_data);
  if (eval_data != nullptr) check_compatible(model_cfg, *eval_data);

  TrainResult<T> result;
  result.params = initial ? std::move(*initial)
                          : init_params<T>(model_cfg, train_cfg.seed, train_cfg.loss);
  ParamTree<T>& params = result.params;
  auto state = OptState<T>::zeros_like(params);
  const auto groups = layer_groups(model_cfg);
  BatchStream stream(train_data, BatchPlan{train_cfg.seed, train_cfg.batch_size});

  for (std::size_t step = 0; step < train_cfg.total_steps; ++step) {
    const Batch<T> batch = stream.next<T>();
    std::vector<Tensor<T>> grads;
    double loss_value = 0.0;
    try {
      Graph<T> graph;
      BoundParams<T> bound(graph, params);
      const auto logits = vit_forward(graph.constant(batch.images), model_cfg, bound);
      const auto loss = loss_fn(train_cfg.loss, logits, graph.constant(batch.targets));
      loss_value = static_cast<double>(loss.value().item());
      if (!std::isfinite(loss_value)) non_finite<T>(step, params, nullptr, "loss");
      const auto g = graph.backward(loss);
      grads.reserve(bound.vars().size());
      for (const auto& [path, var] : bound.vars()) grads.push_back(g[var]);
    } catch (const NonFiniteError& e) {
      non_finite<T>(step, params, nullptr, e.what());
    }
    for (const auto& gt : grads) {
      if (!gt.all_finite()) non_finite(step, params, &grads, "gradient");
    }

    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss_value;
    {
      const auto& entries = params.entries();
      std::vector<double> sq(groups.size(), 0.0);
      double emb = 0.0;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        double s = 0.0;
        for (T v : grads[i].data()) s += static_cast<double>(v) * static_cast<double>(v);
        const auto group = layer_group(entries[i].first);
        for (std::size_t k = 0; k < groups.size(); ++k) {
          if (groups[k] == group) sq[k] += s;
        }
        if (entries[i].first.starts_with("stem/dense/")) emb += s;
      }
      for (std::size_t k = 0; k < groups.size(); ++k) {
        rec.group_norms.emplace_back(groups[k], std::sqrt(sq[k]));
      }
      rec.embedding_grad_norm = std::sqrt(emb);
    }
    rec.grad_norm = clip_global_norm(grads, train_cfg.clip_norm);
    rec.learning_rate = cosine_schedule(step, train_cfg);
    adam_step(params, grads, state, rec.learning_rate, train_cfg.weight_decay);
    for (const auto& [path, t] : params) {
      if (!t.all_finite()) non_finite(step, params, &grads, "parameter update");
    }

    const bool last = step + 1 == train_cfg.total_steps;
    const bool eval_now = eval_data != nullptr &&
                          (last || (train_cfg.eval_every > 0 &&
                                    (step + 1) % train_cfg.eval_every == 0));
    if (eval_now) rec.eval_accuracy = evaluate(params, model_cfg, *eval_data);
    const bool log_now = step == 0 || last || eval_now ||
                         (train_cfg.log_every > 0 && step % train_cfg.log_every == 0);
    if (last) result.final_eval_accuracy = rec.eval_accuracy;
    if (log_now) result.records.push_back(std::move(rec));
  }
  return result;
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects [B, K]");
  const std::size_t b = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  std::vector<std::uint32_t> out(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data().data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

template <typename T>
double evaluate(const ParamTree<T>& params, const ModelConfig& cfg, const Dataset& data,
                std::size_t batch_size) {
  check_compatible(cfg, data);
  if (batch_size == 0) throw DomainError("evaluation batch_size must be positive");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.count; start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.count, start + batch_size); ++i) idx.push_back(i);
    const Batch<T> batch = gather<T>(data, idx);
    const auto pred = argmax_rows(vit_logits(cfg, params, batch.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.count);
}

#define VITLAB_INSTANTIATE_TRAIN(T)                                                          \
  template Var<T> sigmoid_xent<T>(Var<T>, Var<T>);                                           \
  template Var<T> softmax_xent<T>(Var<T>, Var<T>);                                           \
  template Var<T> loss_fn<T>(LossKind, Var<T>, Var<T>);                                      \
  template double global_norm<T>(const std::vector<Tensor<T>>&);                             \
  template double clip_global_norm<T>(std::vector<Tensor<T>>&, double);                      \
  template struct OptState<T>;                                                               \
  template void adam_step<T>(ParamTree<T>&, const std::vector<Tensor<T>>&, OptState<T>&,     \
                             double, double, const AdamOptions&);                            \
  template TrainResult<T> train<T>(const ModelConfig&, const TrainConfig&, const Dataset&,   \
                                   const Dataset*, std::optional<ParamTree<T>>);             \
  template std::vector<std::uint32_t> argmax_rows<T>(const Tensor<T>&);                      \
  template double evaluate<T>(const ParamTree<T>&, const ModelConfig&, const Dataset&,       \
                              std::size_t);

VITLAB_INSTANTIATE_TRAIN(float)
VITLAB_INSTANTIATE_TRAIN(double)

#undef VITLAB_INSTANTIATE_TRAIN

}  // namespace vitlab
