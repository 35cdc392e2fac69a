#pragma once

// Minimal reverse-mode differentiation over dense tensors.
//
// A Tape records every value produced during a forward pass together with a
// closure that propagates the output gradient into its inputs. Nodes that do
// not depend on a trainable parameter record no closure, so inference on a
// tape costs little more than evaluating the ops.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "c2f/errors.hpp"

namespace c2f::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  Array<T> values;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), values(Array<T>::Zero(numel(shape))) {}
  Tensor(Shape s, Array<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != numel(shape)) {
      throw StructuralError("tensor storage of " + std::to_string(values.size()) +
                            " values does not match shape " + shape_string(shape));
    }
  }

  Index size() const { return values.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(std::size_t axis) const { return shape.at(axis); }
  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, values.template cast<U>());
  }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Array<T> grad;

  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Array<T>::Zero(value.size())) {}
};

// Ordered, fixed collection of named parameters.
template <typename T>
class ParamSet {
 public:
  Index add(std::string name, Tensor<T> value) {
    params_.emplace_back(std::move(name), std::move(value));
    return static_cast<Index>(params_.size()) - 1;
  }

  Parameter<T>& operator[](Index i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<T>& operator[](Index i) const { return params_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // nullptr when no parameter carries `name`.
  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    return const_cast<ParamSet*>(this)->find(name);
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Throws StructuralError unless names and shapes match one-to-one.
  void check_congruent(const ParamSet& other) const;

 private:
  std::vector<Parameter<T>> params_;
};

struct Var {
  int id = -1;
  bool defined() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  // Trainable parameter: gradients are added into `param.grad` by backward().
  Var parameter(Parameter<T>& param) { return push(param.value, true, &param); }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of `v`, zero-initialised on first access.
  Array<T>& grad(Var v) {
    Node& n = node(v);
    if (n.grad.size() != n.value.size()) n.grad = Array<T>::Zero(n.value.size());
    return n.grad;
  }
  bool has_grad(Var v) const { return node(v).grad.size() == node(v).value.size(); }

  // Records an op output. `backward` runs only if some input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var out = push(std::move(value), needs, nullptr);
    if (needs) nodes_.back().backward = std::move(backward);
    return out;
  }
  Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var out = push(std::move(value), needs, nullptr);
    if (needs) nodes_.back().backward = std::move(backward);
    return out;
  }

  // Seeds d(loss)/d(loss) = 1 for a single-element `loss` and sweeps the tape backwards.
  void backward(Var loss) {
    if (node(loss).value.size() != 1) {
      throw StructuralError("backward() needs a scalar loss, got shape " +
                            shape_string(node(loss).value.shape));
    }
    grad(loss).setConstant(T(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, Var{id});
      if (n.param != nullptr) n.param->grad += nodes_[static_cast<std::size_t>(id)].grad;
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Array<T> grad;
    Backward backward;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
  };

  Var push(Tensor<T> value, bool needs_grad, Parameter<T>* param) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::vector<Node> nodes_;
};

template <typename T>
void ParamSet<T>::check_congruent(const ParamSet& other) const {
  if (other.size() != size()) {
    throw StructuralError("parameter sets differ in size: " + std::to_string(size()) + " vs " +
                          std::to_string(other.size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.shape != b.value.shape) {
      throw StructuralError("parameter mismatch: " + a.name + shape_string(a.value.shape) +
                            " vs " + b.name + shape_string(b.value.shape));
    }
  }
}

}  // namespace c2f::nn
