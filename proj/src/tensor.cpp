// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

namespace vitlab {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::string_view dtype_name(DType dtype) {
  return dtype == DType::f32 ? "float32" : "float64";
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// ---- Tensor -----------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool grad_tracked)
    : shape_(std::move(shape)), data_(std::move(data)), grad_tracked_(grad_tracked) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " holds " + std::to_string(numel(shape_)) +
                     " elements but " + std::to_string(data_.size()) + " were given");
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <typename T>
std::size_t Tensor<T>::dim(std::ptrdiff_t axis) const {
  return shape_[normalize_axis(axis, shape_.size())];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got shape " + shape_str(shape_));
  }
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_, grad_tracked_);
}

namespace {

// Exponent-bit test; an integer OR-reduction the compiler can vectorize.
template <typename T>
bool span_finite(std::span<const T> data) noexcept {
  using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
  constexpr U mask = std::is_same_v<T, float> ? U(0x7F800000u) : U(0x7FF0000000000000ull);
  U bad = 0;
  for (T v : data) {
    const U bits = std::bit_cast<U>(v);
    bad |= static_cast<U>((bits & mask) == mask);
  }
  return bad == 0;
}

}  // namespace

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return span_finite<T>(data_);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw ShapeError("permutation of length " + std::to_string(axes.size()) +
                     " for tensor of rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw ShapeError("invalid permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  std::vector<T> out(x.size());
  if (out.empty() || r == 0) return Tensor<T>(out_shape, x.values());

  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_stride = strides[r - 1];
  const std::size_t outer = out.size() / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  const auto src = x.data();
  std::size_t o = 0;
  for (std::size_t block = 0; block < outer; ++block) {
    for (std::size_t j = 0; j < inner; ++j) out[o + j] = src[offset + j * inner_stride];
    o += inner;
    for (std::size_t ax = r - 1; ax-- > 0;) {
      offset += strides[ax];
      if (++idx[ax] < out_shape[ax]) break;
      offset -= strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return Tensor<T>(std::move(out_shape), std::move(out));
}

// ---- RearrangePlan ------------------------------------------------------------

namespace {

using Groups = std::vector<std::vector<std::string>>;

Groups parse_side(std::string_view side, std::string_view pattern) {
  Groups groups;
  bool in_group = false;
  std::size_t i = 0;
  auto fail = [&](const std::string& why) {
    throw ShapeError("bad rearrange pattern '" + std::string(pattern) + "': " + why);
  };
  while (i < side.size()) {
    const char c = side[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '(') {
      if (in_group) fail("nested parentheses");
      in_group = true;
      groups.emplace_back();
      ++i;
    } else if (c == ')') {
      if (!in_group) fail("unbalanced ')'");
      if (groups.back().empty()) fail("empty group");
      in_group = false;
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < side.size() &&
             (std::isalnum(static_cast<unsigned char>(side[j])) || side[j] == '_')) {
        ++j;
      }
      std::string name(side.substr(i, j - i));
      if (in_group) {
        groups.back().push_back(std::move(name));
      } else {
        groups.push_back({std::move(name)});
      }
      i = j;
    } else {
      fail(std::string("unexpected character '") + c + "'");
    }
  }
  if (in_group) fail("unbalanced '('");
  return groups;
}

std::string join_groups(const Groups& groups) {
  std::string s;
  for (const auto& g : groups) {
    if (!s.empty()) s += ' ';
    if (g.size() == 1) {
      s += g[0];
    } else {
      s += '(';
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (i) s += ' ';
        s += g[i];
      }
      s += ')';
    }
  }
  return s;
}

}  // namespace

RearrangePlan::RearrangePlan(std::string_view pattern, const Shape& input_shape,
                             const std::map<std::string, std::size_t>& sizes)
    : pattern_(pattern), input_shape_(input_shape) {
  const auto arrow = pattern.find("->");
  if (arrow == std::string_view::npos) {
    throw ShapeError("bad rearrange pattern '" + pattern_ + "': missing '->'");
  }
  const Groups lhs = parse_side(pattern.substr(0, arrow), pattern);
  const Groups rhs = parse_side(pattern.substr(arrow + 2), pattern);
  inverse_pattern_ = join_groups(rhs) + " -> " + join_groups(lhs);

  if (lhs.size() != input_shape.size()) {
    throw ShapeError("rearrange pattern '" + pattern_ + "' expects rank " +
                     std::to_string(lhs.size()) + ", got shape " + shape_str(input_shape));
  }

  std::vector<std::string> elementary;
  for (std::size_t axis = 0; axis < lhs.size(); ++axis) {
    const auto& group = lhs[axis];
    const std::size_t dim = input_shape[axis];
    std::size_t known = 1;
    const std::string* unknown = nullptr;
    for (const auto& name : group) {
      if (std::find(elementary.begin(), elementary.end(), name) != elementary.end()) {
        throw ShapeError("axis '" + name + "' repeated in rearrange pattern '" + pattern_ + "'");
      }
      elementary.push_back(name);
      auto it = sizes.find(name);
      if (it != sizes.end()) {
        known *= it->second;
        axis_sizes_[name] = it->second;
      } else if (group.size() == 1) {
        axis_sizes_[name] = dim;
      } else if (unknown != nullptr) {
        throw ShapeError("cannot infer both '" + *unknown + "' and '" + name + "' in '" +
                         pattern_ + "'");
      } else {
        unknown = &name;
      }
    }
    if (group.size() == 1) {
      if (axis_sizes_[group[0]] != dim) {
        throw ShapeError("axis '" + group[0] + "' has length " + std::to_string(dim) +
                         ", expected " + std::to_string(axis_sizes_[group[0]]));
      }
      continue;
    }
    if (known == 0 || dim % known != 0) {
      throw ShapeError("axis of length " + std::to_string(dim) + " is not divisible by " +
                       std::to_string(known) + " in '" + pattern_ + "'");
    }
    if (unknown != nullptr) {
      axis_sizes_[*unknown] = dim / known;
    } else if (known != dim) {
      throw ShapeError("axis of length " + std::to_string(dim) + " does not split into " +
                       std::to_string(known) + " in '" + pattern_ + "'");
    }
  }

  for (const auto& name : elementary) split_shape_.push_back(axis_sizes_.at(name));

  std::set<std::string> rhs_names;
  for (const auto& group : rhs) {
    std::size_t merged = 1;
    for (const auto& name : group) {
      auto it = std::find(elementary.begin(), elementary.end(), name);
      if (it == elementary.end() || !rhs_names.insert(name).second) {
        throw ShapeError("axis '" + name + "' on the right of '" + pattern_ +
                         "' is unknown or repeated");
      }
      permutation_.push_back(static_cast<std::size_t>(it - elementary.begin()));
      merged *= axis_sizes_.at(name);
    }
    output_shape_.push_back(merged);
  }
  if (rhs_names.size() != elementary.size()) {
    throw ShapeError("rearrange pattern '" + pattern_ + "' drops axes");
  }
}

RearrangePlan RearrangePlan::inverse() const {
  return RearrangePlan(inverse_pattern_, output_shape_, axis_sizes_);
}

template <typename T>
Tensor<T> RearrangePlan::apply(const Tensor<T>& x) const {
  if (x.shape() != input_shape_) {
    throw ShapeError("rearrange '" + pattern_ + "' planned for " + shape_str(input_shape_) +
                     ", got " + shape_str(x.shape()));
  }
  return permute(x.reshape(split_shape_), permutation_).reshape(output_shape_);
}

// ---- Graph --------------------------------------------------------------------

namespace {

std::atomic<bool> g_default_finite_checks{true};

std::string& fault_op() {
  thread_local std::string op;
  return op;
}

}  // namespace

void set_backward_fault(std::string_view op_name) { fault_op() = std::string(op_name); }
void clear_backward_fault() { fault_op().clear(); }
std::string_view backward_fault() { return fault_op(); }

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (graph_ == nullptr) throw Error("use of an unbound Var");
  return graph_->node(id_).value;
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](Var<T> leaf) const {
  return at(leaf.id());
}

template <typename T>
const Tensor<T>& Gradients<T>::at(std::size_t node_id) const {
  auto it = grads_.find(node_id);
  if (it == grads_.end()) {
    throw Error("no gradient for node " + std::to_string(node_id) +
                " (not a grad-tracked leaf)");
  }
  return it->second;
}

template <typename T>
Graph<T>::Graph(bool check_finite) : check_finite_(check_finite) {}

template <typename T>
bool Graph<T>::default_finite_checks() noexcept {
  return g_default_finite_checks.load();
}

template <typename T>
void Graph<T>::set_default_finite_checks(bool enabled) noexcept {
  g_default_finite_checks.store(enabled);
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value) {
  const bool tracked = value.grad_tracked();
  if (check_finite_ && !value.all_finite()) {
    throw NonFiniteError("non-finite value in leaf tensor of shape " + shape_str(value.shape()));
  }
  nodes_.push_back(Node{"leaf", {}, std::move(value), {}, tracked, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  value.set_grad_tracked(false);
  return leaf(std::move(value));
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> value,
                        BackwardFn backward) {
  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.graph_ != this) throw Error(std::string("op '") + std::string(op) +
                                      "' mixes Vars from different graphs");
    ids.push_back(v.id_);
    needs = needs || nodes_[v.id_].needs_grad;
  }
  if (check_finite_ && !value.all_finite()) {
    const auto data = value.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "' (node " +
                             std::to_string(nodes_.size()) + ", element " + std::to_string(i) +
                             ")");
      }
    }
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{op, std::move(ids), std::move(value), std::move(backward), needs, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
std::span<T> Graph<T>::accumulate_grad(std::size_t id) {
  if (!in_backward_) throw Error("accumulate_grad called outside backward()");
  auto& g = grads_.at(id);
  if (g.empty()) g.assign(nodes_[id].value.size(), T(0));
  return g;
}

template <typename T>
Gradients<T> Graph<T>::backward(Var<T> loss) {
  if (loss.graph_ != this) throw Error("loss belongs to a different graph");
  const Node& loss_node = nodes_[loss.id_];
  if (loss_node.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_str(loss_node.value.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.id_].assign(1, T(1));
  in_backward_ = true;
  visits_ = 0;
  const std::string_view fault = backward_fault();
  std::vector<T> faulty;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.leaf || !node.needs_grad || !node.backward || grads_[i].empty()) continue;
    std::span<const T> g_out = grads_[i];
    if (!fault.empty() && node.op == fault) {
      faulty.assign(grads_[i].begin(), grads_[i].end());
      for (T& v : faulty) v *= T(1.5);
      g_out = faulty;
    }
    node.backward(*this, i, g_out);
    ++visits_;
    std::vector<T>().swap(grads_[i]);
  }
  in_backward_ = false;

  Gradients<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.leaf || !node.needs_grad) continue;
    std::vector<T> g = std::move(grads_[i]);
    if (g.empty()) g.assign(node.value.size(), T(0));
    out.grads_.emplace(i, Tensor<T>(node.value.shape(), std::move(g)));
  }
  grads_.clear();
  return out;
}

// ---- gradient checking ------------------------------------------------------

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!e.passed) names.push_back(e.name);
  }
  return names;
}

GradCheckReport gradient_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                               const std::vector<std::string>& names,
                               const GradCheckOptions& options) {
  if (names.size() != inputs.size()) throw Error("gradient_check: one name per input required");

  Graph<double> graph(true);
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) {
    Tensor<double> tracked = x;
    tracked.set_grad_tracked(true);
    vars.push_back(graph.leaf(std::move(tracked)));
  }
  const Gradients<double> grads = graph.backward(f(graph, vars));

  std::vector<Tensor<double>> probe = inputs;
  for (auto& t : probe) t.set_grad_tracked(false);
  auto evaluate = [&]() {
    Graph<double> g(true);
    std::vector<Var<double>> vs;
    for (const auto& t : probe) vs.push_back(g.leaf(t));
    return f(g, vs).value().item();
  };

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = grads[vars[k]];
    GradCheckEntry entry;
    entry.name = names[k];
    entry.elements = inputs[k].size();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = probe[k][i];
      probe[k][i] = original + options.step;
      const double plus = evaluate();
      probe[k][i] = original - options.step;
      const double minus = evaluate();
      probe[k][i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel = relative_error(analytic[i], numeric, options.denominator_floor);
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
    }
    entry.passed = entry.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradCheckEntry gradient_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                              const Tensor<double>& x, const GradCheckOptions& options) {
  ScalarFn wrapped = [&](Graph<double>& g, std::span<const Var<double>> vs) { return f(g, vs[0]); };
  return gradient_check(wrapped, {x}, {"x"}, options).entries.front();
}

// ---- instantiations -----------------------------------------------------------

#define VITLAB_INSTANTIATE(T)                                                    \
  template class Tensor<T>;                                                      \
  template class Var<T>;                                                         \
  template class Gradients<T>;                                                   \
  template class Graph<T>;                                                       \
  template bool bitwise_equal<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&); \
  template Tensor<T> RearrangePlan::apply<T>(const Tensor<T>&) const;

VITLAB_INSTANTIATE(float)
VITLAB_INSTANTIATE(double)

#undef VITLAB_INSTANTIATE

}  // namespace vitlab
