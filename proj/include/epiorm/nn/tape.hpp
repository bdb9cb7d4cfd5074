#pragma once

// Reverse-mode automatic differentiation. Every op appends a node holding
// its output and a closure that maps the output gradient to input gradients.
// Nodes are appended after their inputs, so walking the node list backwards
// is a reverse topological order.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "epiorm/nn/tensor.hpp"

namespace epiorm::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }
  Var variable(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }
  Var parameter(Parameter<T>& p) { return push(p.value, true, &p, {}); }

  // Records an op output. The node needs a gradient when any parent does.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of `v`, zero-filled on first access.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  // Seeds d(root)/d(root) = 1 and propagates. Parameter gradients are added
  // into Parameter::grad.
  void backward(Var root) {
    Tensor<T> seed(value(root).shape(), T(1));
    backward(root, seed);
  }

  void backward(Var root, const Tensor<T>& seed) {
    if (seed.shape() != value(root).shape()) throw ShapeError("backward seed shape mismatch");
    grad_buffer(root) = seed;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Parameter<T>* param, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, param, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace epiorm::nn
