#pragma once

#include <functional>
#include <vector>

#include "lpad/params.hpp"
#include "lpad/tensor.hpp"

namespace lpad {

/// Train mode enables batch statistics and dropout; eval mode is deterministic.
enum class Mode { kTrain, kEval };

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards is a valid topological order and every node is visited once.
template <typename T>
class Graph {
 public:
  struct Var {
    int id = -1;
  };
  using BackwardFn = std::function<void(Graph&, int self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient can be read back after backward().
  Var leaf(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var param(Parameter<T>& p) {
    Var v = push(p.value, p.trainable, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  /// Appends an op result. The backward closure is dropped when no input
  /// requires a gradient, which makes inference graphs cheap.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of a node; zeros if backward never reached it.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  /// Mutable gradient buffer for op backward closures, allocated on demand.
  Tensor<T>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }
  Tensor<T>& grad_ref(Var v) { return grad_ref(v.id); }
  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  void backward(Var out) {
    if (value(out).size() != 1) {
      throw ConfigError("backward() without a seed needs a scalar output, got " +
                        shape_str(value(out).shape()));
    }
    backward(out, Tensor<T>(value(out).shape(), T{1}));
  }

  void backward(Var out, const Tensor<T>& seed) {
    require_same_shape(seed.shape(), value(out).shape(), "backward seed");
    if (!requires_grad(out)) return;
    Tensor<T>& g = grad_ref(out);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (int id = out.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace lpad
