#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dragtraffic/nn/params.hpp"
#include "dragtraffic/nn/tensor.hpp"

namespace dragtraffic::nn {

/// Handle to a value recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph;

/// Receives the gradient of the node's output and pushes contributions into
/// its inputs through Graph::accumulate.
using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

/// Tape for one forward pass. Values are recorded in creation order; backward
/// walks the tape in reverse and accumulates gradients into every node that
/// depends on an unfrozen parameter or an explicitly tracked input.
class Graph {
 public:
  explicit Graph(const ParamStore* params = nullptr) : params_(params) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives gradients.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept and can be read back with grad() after backward.
  Var input(Tensor value);
  /// Leaf bound to a stored parameter. Repeated lookups reuse one node.
  Var param(std::string_view name);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Returns gradients for unfrozen parameters.
  Gradients backward(Var loss);

  /// Gradient of a node after backward(); zeros when nothing flowed into it.
  Tensor grad(Var v) const;

  /// Used by backward functions of ops.
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, const double* g, std::size_t n);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::map<std::string, int, std::less<>> param_nodes_;
};

}  // namespace dragtraffic::nn
