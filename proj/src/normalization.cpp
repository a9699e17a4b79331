// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/normalization.hpp"

#include <string>

namespace vitlab {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::layer_norm: return "layer_norm";
    case NormKind::rms_norm: return "rms_norm";
    case NormKind::affine_only: return "affine_only";
    case NormKind::normalize_only: return "normalize_only";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view name) {
  for (NormKind k : {NormKind::layer_norm, NormKind::rms_norm, NormKind::affine_only,
                     NormKind::normalize_only}) {
    if (name == to_string(k)) return k;
  }
  throw Error("unknown norm kind '" + std::string(name) +
              "'; valid options: layer_norm, rms_norm, affine_only, normalize_only");
}

template <typename T>
NormParams<T> NormParams<T>::identity(std::size_t dim, double eps) {
  return NormParams{Tensor<T>(Shape{dim}, T(1)), Tensor<T>(Shape{dim}, T(0)), eps};
}

template <typename T>
void NormParams<T>::validate() const {
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.size() != beta.size()) {
    throw ShapeError("NormParams: gamma " + shape_str(gamma.shape()) + " and beta " +
                     shape_str(beta.shape()) + " must be vectors of equal length");
  }
  if (!(eps > 0.0)) throw Error("NormParams: eps must be positive");
}

namespace {

template <typename T>
void check_feature_dim(const Var<T>& x, const Var<T>& p, std::string_view what) {
  if (x.shape().empty() || p.shape().size() != 1 || p.shape()[0] != x.shape().back()) {
    throw ShapeError(std::string(what) + " of shape " + shape_str(p.shape()) +
                     " does not match feature axis of " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> normalize_only(Var<T> x, double eps) {
  if (x.shape().empty() || x.shape().back() == 0) throw ShapeError("normalize over an empty axis");
  Var<T> mu = mean(x, -1, true);
  Var<T> sigma = sqrt(add_scalar(var(x, -1, true), static_cast<T>(eps)));
  return (x - mu) / sigma;
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  check_feature_dim(x, gamma, "gamma");
  check_feature_dim(x, beta, "beta");
  return normalize_only(x, eps) * gamma + beta;
}

template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gamma, double eps) {
  check_feature_dim(x, gamma, "gamma");
  Var<T> rms = sqrt(add_scalar(mean(square(x), -1, true), static_cast<T>(eps)));
  return x / rms * gamma;
}

template <typename T>
Var<T> affine_only(Var<T> x, Var<T> gamma, Var<T> beta) {
  check_feature_dim(x, gamma, "gamma");
  check_feature_dim(x, beta, "beta");
  return x * gamma + beta;
}

template <typename T>
Var<T> apply_norm(NormKind kind, Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  switch (kind) {
    case NormKind::layer_norm: return layer_norm(x, gamma, beta, eps);
    case NormKind::rms_norm: return rms_norm(x, gamma, eps);
    case NormKind::affine_only: return affine_only(x, gamma, beta);
    case NormKind::normalize_only: return normalize_only(x, eps);
  }
  throw Error("unknown norm kind");
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormParams<T>& p) {
  p.validate();
  Graph<T> g;
  return layer_norm(g.constant(x), g.constant(p.gamma), g.constant(p.beta), p.eps).value();
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, double eps) {
  Graph<T> g;
  return rms_norm(g.constant(x), g.constant(gamma), eps).value();
}

template <typename T>
Tensor<T> affine_only(const Tensor<T>& x, const NormParams<T>& p) {
  p.validate();
  Graph<T> g;
  return affine_only(g.constant(x), g.constant(p.gamma), g.constant(p.beta)).value();
}

template <typename T>
Tensor<T> normalize_only(const Tensor<T>& x, double eps) {
  Graph<T> g;
  return normalize_only(g.constant(x), eps).value();
}

#define VITLAB_INSTANTIATE_NORM(T)                                                     \
  template struct NormParams<T>;                                                       \
  template Var<T> normalize_only<T>(Var<T>, double);                                   \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, double);                       \
  template Var<T> rms_norm<T>(Var<T>, Var<T>, double);                                 \
  template Var<T> affine_only<T>(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> apply_norm<T>(NormKind, Var<T>, Var<T>, Var<T>, double);             \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const NormParams<T>&);            \
  template Tensor<T> rms_norm<T>(const Tensor<T>&, const Tensor<T>&, double);          \
  template Tensor<T> affine_only<T>(const Tensor<T>&, const NormParams<T>&);           \
  template Tensor<T> normalize_only<T>(const Tensor<T>&, double);

VITLAB_INSTANTIATE_NORM(float)
VITLAB_INSTANTIATE_NORM(double)

#undef VITLAB_INSTANTIATE_NORM

}  // namespace vitlab
