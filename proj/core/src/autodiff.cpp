#include "xdg/autodiff.hpp"

#include <unordered_map>
#include <unordered_set>

namespace xdg {

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor(value.shape(), 0.0);
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backward = std::move(backward);
    n->grad = Tensor(n->value.shape(), 0.0);
  }
  return Var(std::move(n));
}

namespace {

// Reverse topological order of the grad-requiring subgraph under `root`.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return {order.rbegin(), order.rend()};
}

std::unordered_map<Node*, Tensor> propagate(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward requires a scalar root, got " + shape_str(root.shape()));
  }
  std::unordered_map<Node*, Tensor> grads;
  if (!root.requires_grad()) return grads;
  Node* r = root.node();
  grads.emplace(r, Tensor(r->value.shape(), 1.0));
  for (Node* node : topo_order(r)) {
    auto it = grads.find(node);
    if (it == grads.end() || !node->backward) continue;
    std::vector<Tensor*> gin(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto [slot, inserted] = grads.try_emplace(p);
      if (inserted) slot->second = Tensor(p->value.shape(), 0.0);
      gin[i] = &slot->second;
    }
    // `it` stays valid: unordered_map rehash invalidates iterators, so re-find.
    const Tensor& gout = grads.find(node)->second;
    node->backward(gout, gin);
  }
  return grads;
}

}  // namespace

void backward(const Var& root) {
  auto grads = propagate(root);
  for (auto& [node, g] : grads) node->grad += g;
}

std::vector<Tensor> grad(const Var& root, std::span<const Var> wrt) {
  auto grads = propagate(root);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    out.push_back(it == grads.end() ? Tensor(w.shape(), 0.0) : it->second);
  }
  return out;
}

}  // namespace xdg
