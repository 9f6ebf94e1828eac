#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "latentlab/numerics/tensor.hpp"

namespace latentlab::num {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  MatMulBT,
  Add,
  AddRow,
  AddScalar,
  Sub,
  Mul,
  Scale,
  Gelu,
  LayerNorm,
  Softmax,
  Attention,
  Gather,
  ReplaceRows,
  SelectRows,
  Sum,
  Mean,
  CrossEntropy,
  CosineRows,
  MeanSquared,
};

class Tape;

/// Handle to a tape node. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only record of a computation. Parents always have smaller ids than
/// their children, so reverse id order is a valid topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    OpKind op;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;  // empty until backward reaches the node
    BackwardFn backward;
    bool needs_grad = false;
  };

  Tape() = default;
  explicit Tape(bool record_gradients) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var leaf(Tensor value) { return push(OpKind::Leaf, {}, std::move(value), nullptr, record_); }
  Var constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), nullptr, false); }

  /// Gradient-free copy of an existing node's value.
  Var detach(Var v) { return constant(v.value()); }

  Var push(OpKind op, std::vector<std::size_t> parents, Tensor value, BackwardFn fn) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
    needs = needs && record_;
    return push(op, std::move(parents), std::move(value), needs ? std::move(fn) : nullptr, needs);
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  /// Accumulated gradient of a node; zeros of the value's shape if backward
  /// never reached it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer for a parent, allocated on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  void backward(Var root) {
    if (root.tape != this) throw ContractError("backward: root belongs to a different tape");
    const Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw ContractError("backward: root must be a scalar, got shape " + shape_str(r.value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(root.id)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  Var push(OpKind op, std::vector<std::size_t> parents, Tensor value, BackwardFn fn, bool needs) {
    nodes_.push_back(Node{op, std::move(parents), std::move(value), Tensor(), std::move(fn), needs});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool record_ = true;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace latentlab::num
