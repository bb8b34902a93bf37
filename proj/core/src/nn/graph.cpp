#include "dragtraffic/nn/graph.hpp"

#include <algorithm>

#include "dragtraffic/error.hpp"

namespace dragtraffic::nn {

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(std::string_view name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{it->second};
  if (params_ == nullptr) throw NotFoundError("graph has no parameter store");
  const bool trainable = !params_->frozen(name);
  nodes_.push_back(Node{params_->value(name), {}, false, trainable, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(std::string(name), id);
  return Var{id};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](Var v) { return nodes_.at(v.id).requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Tensor& g) { accumulate(v, g.raw(), g.size()); }

void Graph::accumulate(Var v, const double* g, std::size_t n) {
  Node& node = nodes_.at(v.id);
  if (!node.requires_grad) return;
  if (n != node.value.size()) throw ShapeError("gradient size mismatch during backward");
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  double* dst = node.grad.raw();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

Gradients Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + std::to_string(value(loss).size()) +
                     " elements");
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  accumulate(loss, Tensor(value(loss).shape(), 1.0));
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
  Gradients out;
  for (const auto& [name, id] : param_nodes_) {
    const Node& node = nodes_[id];
    if (!node.requires_grad) continue;
    out.emplace(name, node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0));
  }
  return out;
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  return node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
}

}  // namespace dragtraffic::nn
