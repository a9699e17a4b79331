// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors and a tape-based reverse-mode autodiff engine.
//
// Tensor<T> is a plain row-major value. Graph<T> records every operation
// applied to Var<T> handles in creation order, so the tape is topologically
// sorted by construction and backward() is a single reverse sweep.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace vitlab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Division by zero, log of a non-positive value and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

std::string_view dtype_name(DType dtype);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports float and double only");

 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool grad_tracked = false);
  explicit Tensor(Shape shape, T fill = T(0));

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Negative axes count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> mutable_data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T item() const;

  DType dtype() const noexcept { return dtype_of<T>(); }
  bool grad_tracked() const noexcept { return grad_tracked_; }
  void set_grad_tracked(bool tracked) noexcept { grad_tracked_ = tracked; }

  Tensor reshape(Shape shape) const;
  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()), grad_tracked_);
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool grad_tracked_ = false;
};

// Same shape and identical bit patterns (distinguishes -0.0 from +0.0).
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank);

// Generic axis permutation; out.shape[i] == in.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

// An einops-style rearrangement: axis splits, a permutation, axis merges.
// Pattern example: "b (ht hp) (wt wp) c -> b (ht wt) (hp wp c)".
class RearrangePlan {
 public:
  RearrangePlan(std::string_view pattern, const Shape& input_shape,
                const std::map<std::string, std::size_t>& sizes = {});

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& split_shape() const noexcept { return split_shape_; }
  const std::vector<std::size_t>& permutation() const noexcept { return permutation_; }
  const Shape& output_shape() const noexcept { return output_shape_; }
  const std::string& pattern() const noexcept { return pattern_; }

  // Plan mapping output_shape() back to input_shape().
  RearrangePlan inverse() const;

  template <typename T>
  Tensor<T> apply(const Tensor<T>& x) const;

 private:
  RearrangePlan() = default;

  std::string pattern_;
  std::string inverse_pattern_;
  std::map<std::string, std::size_t> axis_sizes_;
  Shape input_shape_;
  Shape split_shape_;
  std::vector<std::size_t> permutation_;
  Shape output_shape_;
};

template <typename T>
class Graph;

template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Gradients {
 public:
  // Gradient for a grad-tracked leaf; zeros if the loss does not reach it.
  const Tensor<T>& operator[](Var<T> leaf) const;
  const Tensor<T>& at(std::size_t node_id) const;
  bool contains(std::size_t node_id) const { return grads_.count(node_id) != 0; }

 private:
  friend class Graph<T>;
  std::map<std::size_t, Tensor<T>> grads_;
};

template <typename T>
class Graph {
 public:
  // Accumulates into the input gradients via accumulate_grad().
  using BackwardFn = std::function<void(Graph&, std::size_t self, std::span<const T> grad_out)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    BackwardFn backward;
    bool needs_grad = false;
    bool leaf = false;
  };

  explicit Graph(bool check_finite = default_finite_checks());
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf node; grad-tracked iff value.grad_tracked().
  Var<T> leaf(Tensor<T> value);
  Var<T> constant(Tensor<T> value);

  // Appends an operation node. `backward` may be empty for non-differentiable ops.
  Var<T> record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> value,
                BackwardFn backward);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool finite_checks() const noexcept { return check_finite_; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Valid only while backward() runs; returns a zero-initialised buffer on first use.
  std::span<T> accumulate_grad(std::size_t id);

  Gradients<T> backward(Var<T> loss);

  // Number of backward functions invoked by the last backward() call.
  std::size_t last_backward_visits() const noexcept { return visits_; }

  static bool default_finite_checks() noexcept;
  static void set_default_finite_checks(bool enabled) noexcept;

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool check_finite_ = true;
  bool in_backward_ = false;
  std::size_t visits_ = 0;
};

// Test hook: gradients flowing out of every node whose op name matches are
// scaled by 1.5. Used as a negative control for the gradient checker.
void set_backward_fault(std::string_view op_name);
void clear_backward_fault();
std::string_view backward_fault();

// ---- operations ---------------------------------------------------------
//
// Binary ops broadcast numpy-style (shapes are right-aligned, size-1 axes
// stretch). Reductions run left to right in a fixed order.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);

template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> sqrt(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
// log(1 + e^x), evaluated without overflow.
template <typename T> Var<T> softplus(Var<T> a);

template <typename T> Var<T> sum(Var<T> a, std::ptrdiff_t axis, bool keepdim = false);
template <typename T> Var<T> mean(Var<T> a, std::ptrdiff_t axis, bool keepdim = false);
// Biased variance (divides by the axis length).
template <typename T> Var<T> var(Var<T> a, std::ptrdiff_t axis, bool keepdim = false);
template <typename T> Var<T> max(Var<T> a, std::ptrdiff_t axis, bool keepdim = false);
template <typename T> Var<T> sum_all(Var<T> a);

// a[..., M, K] x b[K, N] -> [..., M, N]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// a[G, M, K] x b[G, K, N] -> [G, M, N]
template <typename T> Var<T> bmm(Var<T> a, Var<T> b);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> permute(Var<T> a, std::vector<std::size_t> axes);
template <typename T> Var<T> transpose(Var<T> a, std::ptrdiff_t axis0, std::ptrdiff_t axis1);
template <typename T> Var<T> rearrange(Var<T> a, const RearrangePlan& plan);
template <typename T>
Var<T> rearrange(Var<T> a, std::string_view pattern,
                 const std::map<std::string, std::size_t>& sizes = {});
template <typename T> Var<T> broadcast_to(Var<T> a, Shape shape);

template <typename T> Var<T> softmax(Var<T> a, std::ptrdiff_t axis);
template <typename T> Var<T> log_softmax(Var<T> a, std::ptrdiff_t axis);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::ptrdiff_t axis);
template <typename T> Var<T> slice(Var<T> a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return neg(a); }

// ---- gradient checking ----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_error() const;
  std::vector<std::string> failures() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that entries whose true
  // gradient is ~0 are judged on absolute error instead.
  double denominator_floor = 1e-6;
};

using ScalarFn = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

// Compares analytic gradients of f against central differences for every input.
GradCheckReport gradient_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                               const std::vector<std::string>& names,
                               const GradCheckOptions& options = {});

GradCheckEntry gradient_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                              const Tensor<double>& x, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace vitlab
