#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "morel/core/tensor.hpp"

namespace morel::ad {

/// Reverse-mode autodiff over Tensor<T>. Graphs are built per forward pass
/// (define-by-run) and released when the last Var handle goes away.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;  // accumulates self.grad into inputs
  const char* op = "leaf";

  Tensor<T>& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T{0});
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs,
                 std::function<void(Node<T>&)> backward_fn, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  for (const auto& in : inputs) rg = rg || (in && in->requires_grad);
  n->requires_grad = rg;
  if (rg) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

/// Backpropagate from a scalar root; seeds d(root) = 1 and accumulates into
/// every reachable node with requires_grad.
template <typename T>
void backward(const Var<T>& root) {
  if (!root) throw std::invalid_argument("backward on null var");
  if (root->value.numel() != 1) throw std::invalid_argument("backward root must be scalar");
  if (!root->requires_grad) return;

  // iterative post-order topological sort
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node<T>* child = node->inputs[idx].get();
      ++idx;
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

template <typename T>
void zero_grads(const std::vector<Var<T>>& vars) {
  for (const auto& v : vars)
    if (v) v->zero_grad();
}

/// Temporarily drop requires_grad on a parameter set; used while generating
/// adversarial examples so gradients flow only to the input.
template <typename T>
class ParamFreeze {
 public:
  explicit ParamFreeze(std::vector<Var<T>> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      was_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~ParamFreeze() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = was_[i];
  }
  ParamFreeze(const ParamFreeze&) = delete;
  ParamFreeze& operator=(const ParamFreeze&) = delete;

 private:
  std::vector<Var<T>> params_;
  std::vector<bool> was_;
};

}  // namespace morel::ad
