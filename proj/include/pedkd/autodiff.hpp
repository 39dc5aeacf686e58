#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pedkd/tensor.hpp"

namespace pedkd {

/// A named trainable tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<Parameter*>;
using Gradients = std::unordered_map<const Parameter*, Tensor>;

/// Handle to a node inside one Graph.
struct Var {
  int id = -1;
};

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so
/// creation order is a topological order and backward walks it once in
/// reverse. A graph must stay on the thread that builds it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf. Registering the same parameter twice returns one node.
  Var param(Parameter& p);
  /// Leaf that reads a parameter without tracking its gradient.
  Var frozen(const Parameter& p);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  /// s * a + shift, elementwise.
  Var affine(Var a, double s, double shift);
  /// x[..., n] + bias[n].
  Var add_bias(Var x, Var bias);
  /// a[..., k] @ b[k, n]; leading dimensions of a are treated as rows.
  Var matmul(Var a, Var b);
  /// Batched a[B, m, k] @ b[B, k, n], or b[B, n, k] transposed when transpose_b.
  Var bmm(Var a, Var b, bool transpose_b = false);
  Var reshape(Var a, Shape shape);

  Var sigmoid(Var a);
  Var tanh(Var a);
  /// max(0, a); subgradient 0 at 0.
  Var relu(Var a);
  /// Softmax over the last axis.
  Var softmax(Var a);
  /// log(max(a, floor)); the clamped region has zero gradient.
  Var log(Var a, double floor = 0.0);

  /// Concatenation along the last axis; leading dimensions must agree.
  Var concat(std::span<const Var> parts);
  Var mean(Var a);
  Var sum(Var a);
  /// Mean over one axis, which is removed from the shape.
  Var mean_axis(Var a, std::size_t axis);

  /// x[B, C, H, W] (*) w[O, C, k, k] + b[O], stride 1, zero padding k/2.
  Var conv2d(Var x, Var w, Var b);
  /// 2x2 average pooling with stride 2; H and W must be even.
  Var avg_pool2(Var x);
  /// [B, C, H, W] -> [B, C].
  Var global_avg_pool(Var x);
  /// [B, C, H, W] -> [B, C] maximum; ties send the gradient to the first maximum.
  Var global_max_pool(Var x);
  /// [B, C, H, W] -> [B, (H/p)*(W/p), C*p*p] non-overlapping patches.
  Var patchify(Var x, std::size_t p);
  /// [B, T, heads*d] -> [B*heads, T, d].
  Var split_heads(Var x, std::size_t heads);
  /// [B*heads, T, d] -> [B, T, heads*d].
  Var merge_heads(Var x, std::size_t heads);

  /// Mean Smooth L1 over all elements.
  Var smooth_l1(Var pred, Var target, double beta = 1.0);

  /// Gradient of a scalar output with respect to every registered parameter.
  /// Parameters with no path to the output receive a zero tensor.
  Gradients backward(Var output);

 private:
  using BackwardFn = std::function<void(Graph&, int)>;
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(const char* op, Tensor value, std::vector<int> inputs, BackwardFn fn);
  Node& node(Var v);
  const Node& node(Var v) const;
  bool needs(int id) const { return nodes_[id].requires_grad; }
  Tensor& grad_of(int id);

  std::deque<Node> nodes_;  // deque keeps value() references stable across pushes
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool consumed_ = false;
};

}  // namespace pedkd
