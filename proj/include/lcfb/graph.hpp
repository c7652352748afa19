#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lcfb/tensor.hpp"

namespace lcfb {

// Named leaf tensors. Ordered by name so iteration (checkpoints, optimizer
// state) is deterministic.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.contains(name); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  // Glorot-uniform weights, s = sqrt(6 / (fan_in + fan_out)).
  void add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
  void add_zeros(const std::string& name, Shape shape);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

using Gradients = std::map<std::string, Tensor>;

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  Input,
  Param,
  Const,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Square,
  Softplus,
  Softmax,
  LogSoftmax,
  LogSumExp,
  Concat,
  Slice,
  Sum,
  Mean,
  SumCols,
};

std::string_view op_name(OpKind kind);

// Reverse-mode autodiff tape over row-major matrices.
//
// Building a graph only records ops; forward() evaluates every node in
// insertion order (which is topological by construction) and backward()
// walks it in reverse. Binary elementwise ops broadcast their second
// operand when it is 1 x n (per row), m x 1 (per column) or 1 x 1.
class Graph {
 public:
  NodeId input(std::string name);
  NodeId constant(Tensor value);
  // Parameter leaf read from `params` at forward time. Repeated calls with the
  // same name return the same node. Frozen parameters receive no gradient.
  NodeId param(const ParameterSet& params, const std::string& name, bool trainable = true);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId softplus(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log_softmax(NodeId a);
  NodeId logsumexp(NodeId a);  // per row -> m x 1
  NodeId concat(const std::vector<NodeId>& parts);  // along columns
  NodeId slice(NodeId a, std::size_t col_begin, std::size_t col_end);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId sum_cols(NodeId a);  // per row -> m x 1

  void forward(const std::map<std::string, Tensor>& inputs = {});
  const Tensor& value(NodeId id) const;

  // Gradients of the scalar `seed` node with respect to every trainable
  // parameter that it depends on.
  Gradients backward(NodeId seed);

  std::size_t size() const { return nodes_.size(); }
  bool evaluated() const { return evaluated_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs{};
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string name{};
    const Tensor* source = nullptr;
    bool trainable = false;
    Tensor value{};
  };

  NodeId push(Node node);
  NodeId unary(OpKind kind, NodeId a);
  NodeId binary(OpKind kind, NodeId a, NodeId b);
  void eval_node(std::size_t index, const std::map<std::string, Tensor>& inputs);
  void backprop_node(std::size_t index, std::vector<Tensor>& grads, Gradients& out);
  std::string label(std::size_t index) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
  std::vector<bool> requires_grad_;
  bool evaluated_ = false;
};

}  // namespace lcfb
