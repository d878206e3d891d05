#pragma once

// Tape internals shared by the translation units that record operations
// (tensor ops, losses). Not part of the public surface.

#include <functional>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg::ad::detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily by backward()
  bool requires_grad = false;
  // Adds this node's contribution to its inputs' grads. Null for leaves.
  std::function<void(TapeState<T>&)> backward;
};

template <typename T>
struct TapeState {
  std::vector<Node<T>> nodes;
  bool backward_done = false;

  int append(Node<T> node) {
    backward_done = false;  // new work re-arms backward
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size()) - 1;
  }

  Node<T>& at(int id) { return nodes[static_cast<size_t>(id)]; }

  std::vector<T>& grad_buffer(int id) {
    Node<T>& n = at(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }
};

template <typename T>
void check_same_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape() != b.tape())
    throw ValidationError("tensor: operands live on different tapes");
}

}  // namespace fseg::ad::detail
