#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2ex/error.hpp"

namespace p2ex {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of doubles. `grad` is only populated by Tape::backward.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() : shape{1}, values(1, 0.0) {}

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
    check_shape();
    values.assign(shape_size(shape), fill);
  }

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    check_shape();
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double item() const {
    if (values.size() != 1) throw DimensionError("tensor: item() on a non-scalar " + shape_string(shape));
    return values[0];
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  void check_shape() const {
    if (shape.empty()) throw DimensionError("tensor: empty shape");
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) throw DimensionError("tensor: axis " + std::to_string(i) + " has size 0");
    }
  }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradContext;
using BackwardFn = std::function<void(GradContext&)>;

/// Records operations in execution order; backward() walks them in reverse.
///
/// A tape is single use: a second backward() throws, so gradients are never
/// silently double-counted.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t, bool requires_grad) {
    t.requires_grad = requires_grad;
    t.grad.reset();
    nodes_.push_back(Node{std::move(t), {}, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor t) { return leaf(std::move(t), false); }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    Node node{std::move(value), {}, {}};
    node.inputs.reserve(inputs.size());
    bool needs = false;
    for (Var in : inputs) {
      if (&in.tape() != this) throw PreconditionError("tape: operand recorded on a different tape");
      node.inputs.push_back(in.id());
      needs = needs || nodes_[in.id()].value.requires_grad;
    }
    node.value.requires_grad = needs;
    if (needs) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }

  /// Gradient of the last backward() target w.r.t. `v`; empty for values that
  /// do not require gradients.
  const std::optional<std::vector<double>>& grad(Var v) const { return nodes_.at(v.id()).value.grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(Var loss);

 private:
  friend class GradContext;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// View handed to backward rules: output gradient in, input gradients out.
/// Rules must accumulate (+=) since one value may feed several inputs.
class GradContext {
 public:
  GradContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Tensor& output() const { return tape_.nodes_[node_].value; }
  std::span<const double> output_grad() const { return *tape_.nodes_[node_].value.grad; }

  const Tensor& input(std::size_t i) const { return tape_.nodes_[input_id(i)].value; }
  bool needs_grad(std::size_t i) const { return tape_.nodes_[input_id(i)].value.requires_grad; }

  std::span<double> input_grad(std::size_t i) {
    auto& t = tape_.nodes_[input_id(i)].value;
    if (!t.requires_grad) return {};
    if (!t.grad) t.grad.emplace(t.values.size(), 0.0);
    return *t.grad;
  }

 private:
  std::size_t input_id(std::size_t i) const { return tape_.nodes_[node_].inputs.at(i); }

  Tape& tape_;
  std::size_t node_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw PreconditionError("var: unbound handle");
  return tape_->value(*this);
}

inline void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw PreconditionError("backward: loss is not on this tape");
  if (consumed_) throw PreconditionError("backward: tape already consumed; record a fresh tape");
  auto& root = nodes_.at(loss.id()).value;
  if (root.size() != 1) throw PreconditionError("backward: loss must be scalar, got " + shape_string(root.shape));
  consumed_ = true;
  if (!root.requires_grad) return;
  root.grad.emplace(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || !node.value.grad) continue;
    GradContext ctx(*this, i);
    node.backward(ctx);
  }
  for (Node& node : nodes_) {
    if (node.value.requires_grad && !node.value.grad) node.value.grad.emplace(node.value.values.size(), 0.0);
  }
}

}  // namespace p2ex
