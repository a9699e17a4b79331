// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Normalization variants over the last axis, written as compositions of
// tensor-core ops so their gradients come from the tape.

#pragma once

#include <string_view>

#include "vitlab/tensor.hpp"

namespace vitlab {

// Added to the variance inside the square root.
inline constexpr double kNormEps = 1e-6;

enum class NormKind { layer_norm, rms_norm, affine_only, normalize_only };

std::string_view to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view name);

// Which learnable tensors a norm of this kind owns.
constexpr bool norm_has_gamma(NormKind kind) { return kind != NormKind::normalize_only; }
constexpr bool norm_has_beta(NormKind kind) {
  return kind == NormKind::layer_norm || kind == NormKind::affine_only;
}

template <typename T>
struct NormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  double eps = kNormEps;

  // gamma = 1, beta = 0.
  static NormParams identity(std::size_t dim, double eps = kNormEps);
  void validate() const;
};

// (x - mean) / sqrt(var + eps), biased variance.
template <typename T> Var<T> normalize_only(Var<T> x, double eps = kNormEps);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = kNormEps);
template <typename T> Var<T> rms_norm(Var<T> x, Var<T> gamma, double eps = kNormEps);
// gamma * x + beta, no standardization and no eps.
template <typename T> Var<T> affine_only(Var<T> x, Var<T> gamma, Var<T> beta);

// Dispatches on kind; unused parameter Vars may be default-constructed.
template <typename T>
Var<T> apply_norm(NormKind kind, Var<T> x, Var<T> gamma, Var<T> beta, double eps = kNormEps);

// Eager helpers for callers without a graph.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const NormParams<T>& p);
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, double eps = kNormEps);
template <typename T> Tensor<T> affine_only(const Tensor<T>& x, const NormParams<T>& p);
template <typename T> Tensor<T> normalize_only(const Tensor<T>& x, double eps = kNormEps);

}  // namespace vitlab
