#pragma once

#include "cast/common.hpp"
#include "cast/params.hpp"
#include "cast/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cast {

// Reverse-mode tape node. Graphs are built eagerly (forward values computed at
// construction) and freed when the last Value handle drops.
template <class Real>
struct Node {
  Tensor<Real> val;
  Tensor<Real> grad; // lazily allocated during backward
  bool requires_grad = false;
  Parameter<Real>* param = nullptr; // set for parameter leaves
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor<Real>& ensure_grad() {
    if (grad.empty()) grad = Tensor<Real>(val.shape());
    return grad;
  }
};

template <class Real>
using Value = std::shared_ptr<Node<Real>>;

template <class Real>
Value<Real> make_node(Tensor<Real> val, std::vector<Value<Real>> parents,
                      std::function<void(Node<Real>&)> bp) {
  auto n = std::make_shared<Node<Real>>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(bp);
  return n;
}

template <class Real>
Value<Real> constant(Tensor<Real> t) {
  auto n = std::make_shared<Node<Real>>();
  n->val = std::move(t);
  return n;
}

// Seeds the scalar loss with `seed` and runs reverse accumulation in
// deterministic (reverse-topological) order.
template <class Real>
void backward(const Value<Real>& loss, Real seed = Real(1)) {
  require(loss != nullptr, "backward: null loss node");
  require(loss->val.numel() == 1, "backward: loss must be scalar, got shape ",
          loss->val.shape_str());
  // Iterative post-order DFS.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited;
  struct Frame {
    Node<Real>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<Real>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  loss->ensure_grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->requires_grad && n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// Per-forward-pass context: hands out one leaf per parameter so repeated uses
// of a parameter within a graph accumulate naturally. After backward, leaf
// grads are merged into Parameter::grad by the caller (deterministic order is
// the caller's responsibility when batching).
template <class Real>
class Graph {
public:
  Value<Real> use(Parameter<Real>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    auto n = std::make_shared<Node<Real>>();
    n->val = p.value; // copy; parameters stay untouched during the pass
    n->requires_grad = p.trainable;
    n->param = &p;
    leaves_.emplace(&p, n);
    return n;
  }

  // Adds leaf gradients into the owning parameters. Call once per sample, in
  // sample order, when batching.
  void add_grads_to_params() {
    for (auto& [p, leaf] : leaves_) {
      if (!p->trainable || leaf->grad.empty()) continue;
      for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += leaf->grad[i];
    }
  }

  const std::unordered_map<Parameter<Real>*, Value<Real>>& leaves() const { return leaves_; }

private:
  std::unordered_map<Parameter<Real>*, Value<Real>> leaves_;
};

} // namespace cast
