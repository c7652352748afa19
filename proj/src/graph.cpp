#include "lcfb/graph.hpp"

#include <algorithm>
#include <cmath>

#include "lcfb/error.hpp"
#include "lcfb/kernels.hpp"

namespace lcfb {

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(const std::string& name, Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter '" + name + "' is not finite");
  params_.insert_or_assign(name, std::move(value));
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParameterSet::add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                              std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  Tensor t = Tensor::matrix(fan_in, fan_out);
  for (auto& v : t.values()) v = dist(rng);
  add(name, std::move(t));
}

void ParameterSet::add_zeros(const std::string& name, Shape shape) { add(name, Tensor(std::move(shape), 0.0)); }

// ---------------------------------------------------------------------------
// Graph construction

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Const: return "const";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Softplus: return "softplus";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumCols: return "sum_cols";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  for (auto in : node.inputs) {
    if (in.index >= nodes_.size()) throw ContractError("graph input refers to a node that does not exist yet");
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::unary(OpKind kind, NodeId a) { return push(Node{.kind = kind, .inputs = {a}}); }

NodeId Graph::binary(OpKind kind, NodeId a, NodeId b) { return push(Node{.kind = kind, .inputs = {a, b}}); }

NodeId Graph::input(std::string name) { return push(Node{.kind = OpKind::Input, .name = std::move(name)}); }

NodeId Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant tensor is not finite");
  return push(Node{.kind = OpKind::Const, .value = std::move(value)});
}

NodeId Graph::param(const ParameterSet& params, const std::string& name, bool trainable) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
  const Tensor* source = &params.at(name);
  auto id = push(Node{.kind = OpKind::Param, .name = name, .source = source, .trainable = trainable});
  param_nodes_.emplace(name, id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return binary(OpKind::MatMul, a, b); }
NodeId Graph::add(NodeId a, NodeId b) { return binary(OpKind::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(OpKind::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(OpKind::Mul, a, b); }
NodeId Graph::scale(NodeId a, double factor) {
  return push(Node{.kind = OpKind::Scale, .inputs = {a}, .scalar = factor});
}
NodeId Graph::add_scalar(NodeId a, double offset) {
  return push(Node{.kind = OpKind::AddScalar, .inputs = {a}, .scalar = offset});
}
NodeId Graph::tanh(NodeId a) { return unary(OpKind::Tanh, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(OpKind::Sigmoid, a); }
NodeId Graph::exp(NodeId a) { return unary(OpKind::Exp, a); }
NodeId Graph::log(NodeId a) { return unary(OpKind::Log, a); }
NodeId Graph::square(NodeId a) { return unary(OpKind::Square, a); }
NodeId Graph::softplus(NodeId a) { return unary(OpKind::Softplus, a); }
NodeId Graph::softmax(NodeId a) { return unary(OpKind::Softmax, a); }
NodeId Graph::log_softmax(NodeId a) { return unary(OpKind::LogSoftmax, a); }
NodeId Graph::logsumexp(NodeId a) { return unary(OpKind::LogSumExp, a); }
NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  return push(Node{.kind = OpKind::Concat, .inputs = parts});
}
NodeId Graph::slice(NodeId a, std::size_t col_begin, std::size_t col_end) {
  if (col_begin >= col_end) throw ContractError("empty slice");
  return push(Node{.kind = OpKind::Slice, .inputs = {a}, .begin = col_begin, .end = col_end});
}
NodeId Graph::sum(NodeId a) { return unary(OpKind::Sum, a); }
NodeId Graph::mean(NodeId a) { return unary(OpKind::Mean, a); }
NodeId Graph::sum_cols(NodeId a) { return unary(OpKind::SumCols, a); }

std::string Graph::label(std::size_t index) const {
  const auto& n = nodes_[index];
  std::string s = "node #" + std::to_string(index) + " (" + std::string(op_name(n.kind));
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

const Tensor& Graph::value(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("unknown node id");
  if (!evaluated_) throw ContractError("graph value requested before forward()");
  const auto& n = nodes_[id.index];
  return n.kind == OpKind::Param ? *n.source : n.value;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// Broadcast index of operand b (rows_b x cols_b) for output element (i, j).
struct Broadcast {
  std::size_t rows;
  std::size_t cols;
  std::size_t at(std::size_t i, std::size_t j) const {
    return (rows == 1 ? 0 : i) * cols + (cols == 1 ? 0 : j);
  }
};

}  // namespace

void Graph::eval_node(std::size_t index, const std::map<std::string, Tensor>& inputs) {
  Node& n = nodes_[index];
  auto in = [&](std::size_t k) -> const Tensor& {
    const Node& src = nodes_[n.inputs[k].index];
    return src.kind == OpKind::Param ? *src.source : src.value;
  };
  auto shape_fail = [&](const std::string& why) { throw ShapeError(label(index) + ": " + why); };

  switch (n.kind) {
    case OpKind::Input: {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ContractError(label(index) + ": input '" + n.name + "' is not bound");
      n.value = it->second;
      break;
    }
    case OpKind::Param:
    case OpKind::Const:
      break;
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows()) {
        shape_fail("cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
      }
      n.value = Tensor::matrix(a.rows(), b.cols());
      kernels::matmul(a.values(), b.values(), n.value.values(), a.rows(), a.cols(), b.cols(), false);
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), c = a.cols();
      const bool rows_ok = b.rows() == m || b.rows() == 1;
      const bool cols_ok = b.cols() == c || b.cols() == 1;
      if (!rows_ok || !cols_ok) {
        shape_fail("cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
      }
      n.value = Tensor::matrix(m, c);
      const Broadcast bb{b.rows(), b.cols()};
      double* out = n.value.data();
      const double* av = a.data();
      const double* bv = b.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double x = av[i * c + j];
          const double y = bv[bb.at(i, j)];
          out[i * c + j] = n.kind == OpKind::Add ? x + y : n.kind == OpKind::Sub ? x - y : x * y;
        }
      }
      break;
    }
    case OpKind::Scale:
    case OpKind::AddScalar:
    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Square:
    case OpKind::Softplus: {
      const Tensor& a = in(0);
      n.value = Tensor::matrix(a.rows(), a.cols());
      const double* av = a.data();
      double* out = n.value.data();
      const std::size_t size = a.size();
      switch (n.kind) {
        case OpKind::Scale:
          for (std::size_t i = 0; i < size; ++i) out[i] = av[i] * n.scalar;
          break;
        case OpKind::AddScalar:
          for (std::size_t i = 0; i < size; ++i) out[i] = av[i] + n.scalar;
          break;
        case OpKind::Tanh:
          for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(av[i]);
          break;
        case OpKind::Sigmoid:
          for (std::size_t i = 0; i < size; ++i) out[i] = stable_sigmoid(av[i]);
          break;
        case OpKind::Exp:
          for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(av[i]);
          break;
        case OpKind::Log:
          for (std::size_t i = 0; i < size; ++i) out[i] = std::log(av[i]);
          break;
        case OpKind::Square:
          for (std::size_t i = 0; i < size; ++i) out[i] = av[i] * av[i];
          break;
        default:
          for (std::size_t i = 0; i < size; ++i) out[i] = stable_softplus(av[i]);
          break;
      }
      break;
    }
    case OpKind::Softmax:
    case OpKind::LogSoftmax:
    case OpKind::LogSumExp: {
      const Tensor& a = in(0);
      const std::size_t m = a.rows(), c = a.cols();
      n.value = Tensor::matrix(m, n.kind == OpKind::LogSumExp ? 1 : c);
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = a.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        if (n.kind == OpKind::LogSumExp) {
          n.value[i] = lse;
        } else if (n.kind == OpKind::LogSoftmax) {
          for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] = row[j] - lse;
        } else {
          for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] = std::exp(row[j] - mx) / total;
        }
      }
      break;
    }
    case OpKind::Concat: {
      const std::size_t m = in(0).rows();
      std::size_t width = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (in(k).rows() != m) {
          shape_fail("concat row mismatch: " + shape_string(in(0).shape()) + " vs " + shape_string(in(k).shape()));
        }
        width += in(k).cols();
      }
      n.value = Tensor::matrix(m, width);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        const std::size_t pc = part.cols();
        for (std::size_t i = 0; i < m; ++i) {
          std::copy_n(part.data() + i * pc, pc, n.value.data() + i * width + offset);
        }
        offset += pc;
      }
      break;
    }
    case OpKind::Slice: {
      const Tensor& a = in(0);
      if (n.end > a.cols()) shape_fail("slice end " + std::to_string(n.end) + " beyond " + shape_string(a.shape()));
      const std::size_t m = a.rows(), c = a.cols(), w = n.end - n.begin;
      n.value = Tensor::matrix(m, w);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(a.data() + i * c + n.begin, w, n.value.data() + i * w);
      break;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      const Tensor& a = in(0);
      double total = 0.0;
      for (double v : a.values()) total += v;
      if (n.kind == OpKind::Mean) total /= static_cast<double>(a.size());
      n.value = Tensor::scalar(total);
      break;
    }
    case OpKind::SumCols: {
      const Tensor& a = in(0);
      const std::size_t m = a.rows(), c = a.cols();
      n.value = Tensor::matrix(m, 1);
      for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += a.data()[i * c + j];
        n.value[i] = total;
      }
      break;
    }
  }

  const Tensor& produced = n.kind == OpKind::Param ? *n.source : n.value;
  if (!produced.all_finite()) throw NumericError(label(index) + " produced a non-finite value");
}

void Graph::forward(const std::map<std::string, Tensor>& inputs) {
  evaluated_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i, inputs);
  evaluated_ = true;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

Tensor& grad_slot(std::vector<Tensor>& grads, NodeId id, const Tensor& like) {
  Tensor& g = grads[id.index];
  if (g.empty()) g = Tensor::matrix(like.rows(), like.cols());
  return g;
}

}  // namespace

void Graph::backprop_node(std::size_t index, std::vector<Tensor>& grads, Gradients& out) {
  const Node& n = nodes_[index];
  const Tensor& g = grads[index];
  auto in = [&](std::size_t k) -> const Tensor& {
    const Node& src = nodes_[n.inputs[k].index];
    return src.kind == OpKind::Param ? *src.source : src.value;
  };

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Const:
      return;
    case OpKind::Param: {
      if (!n.trainable) return;
      out.insert_or_assign(n.name, Tensor(n.source->shape(), g.storage()));
      return;
    }
    default:
      break;
  }

  // Inputs that cannot reach a trainable parameter get no gradient.
  auto need = [&](std::size_t k) { return requires_grad_[n.inputs[k].index]; };

  switch (n.kind) {
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), k = a.cols(), c = b.cols();
      if (need(0)) kernels::matmul_nt(g.values(), b.values(), grad_slot(grads, n.inputs[0], a).values(), m, c, k);
      if (need(1)) kernels::matmul_tn(a.values(), g.values(), grad_slot(grads, n.inputs[1], b).values(), k, m, c);
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), c = a.cols();
      const Broadcast bb{b.rows(), b.cols()};
      if (need(0)) {
        Tensor& ga = grad_slot(grads, n.inputs[0], a);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double gv = g[i * c + j];
            ga[i * c + j] += n.kind == OpKind::Mul ? gv * b[bb.at(i, j)] : gv;
          }
        }
      }
      if (need(1)) {
        Tensor& gb = grad_slot(grads, n.inputs[1], b);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double gv = g[i * c + j];
            double contrib = gv;
            if (n.kind == OpKind::Sub) contrib = -gv;
            if (n.kind == OpKind::Mul) contrib = gv * a[i * c + j];
            gb[bb.at(i, j)] += contrib;
          }
        }
      }
      break;
    }
    case OpKind::Scale:
    case OpKind::AddScalar:
    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Square:
    case OpKind::Softplus: {
      if (!need(0)) break;
      const Tensor& a = in(0);
      const Tensor& y = n.value;
      Tensor& ga = grad_slot(grads, n.inputs[0], a);
      const std::size_t size = a.size();
      for (std::size_t i = 0; i < size; ++i) {
        double d = 1.0;
        switch (n.kind) {
          case OpKind::Scale: d = n.scalar; break;
          case OpKind::AddScalar: d = 1.0; break;
          case OpKind::Tanh: d = 1.0 - y[i] * y[i]; break;
          case OpKind::Sigmoid: d = y[i] * (1.0 - y[i]); break;
          case OpKind::Exp: d = y[i]; break;
          case OpKind::Log: d = 1.0 / a[i]; break;
          case OpKind::Square: d = 2.0 * a[i]; break;
          default: d = stable_sigmoid(a[i]); break;
        }
        ga[i] += g[i] * d;
      }
      break;
    }
    case OpKind::Softmax:
    case OpKind::LogSoftmax:
    case OpKind::LogSumExp: {
      if (!need(0)) break;
      const Tensor& a = in(0);
      const Tensor& y = n.value;
      Tensor& ga = grad_slot(grads, n.inputs[0], a);
      const std::size_t m = a.rows(), c = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        if (n.kind == OpKind::Softmax) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        } else if (n.kind == OpKind::LogSoftmax) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
        } else {
          const double lse = y[i];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * std::exp(a[i * c + j] - lse);
        }
      }
      break;
    }
    case OpKind::Concat: {
      const std::size_t m = n.value.rows(), width = n.value.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        const std::size_t pc = part.cols();
        if (need(k)) {
          Tensor& gp = grad_slot(grads, n.inputs[k], part);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * width + offset + j];
          }
        }
        offset += pc;
      }
      break;
    }
    case OpKind::Slice: {
      if (!need(0)) break;
      const Tensor& a = in(0);
      Tensor& ga = grad_slot(grads, n.inputs[0], a);
      const std::size_t m = a.rows(), c = a.cols(), w = n.end - n.begin;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) ga[i * c + n.begin + j] += g[i * w + j];
      }
      break;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      if (!need(0)) break;
      const Tensor& a = in(0);
      Tensor& ga = grad_slot(grads, n.inputs[0], a);
      const double gv = n.kind == OpKind::Mean ? g[0] / static_cast<double>(a.size()) : g[0];
      for (auto& v : ga.values()) v += gv;
      break;
    }
    case OpKind::SumCols: {
      if (!need(0)) break;
      const Tensor& a = in(0);
      Tensor& ga = grad_slot(grads, n.inputs[0], a);
      const std::size_t m = a.rows(), c = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
      }
      break;
    }
    default:
      break;
  }
}

Gradients Graph::backward(NodeId seed) {
  if (!evaluated_) throw ContractError("backward() called before forward()");
  if (seed.index >= nodes_.size()) throw ContractError("unknown seed node");
  const Tensor& seed_value = value(seed);
  if (seed_value.size() != 1) {
    throw ContractError("backward seed must be scalar, " + label(seed.index) + " has shape " +
                        shape_string(seed_value.shape()));
  }

  requires_grad_.assign(nodes_.size(), false);
  for (std::size_t i = 0; i <= seed.index; ++i) {
    const Node& n = nodes_[i];
    if (n.kind == OpKind::Param) {
      requires_grad_[i] = n.trainable;
      continue;
    }
    for (auto in : n.inputs) {
      if (requires_grad_[in.index]) {
        requires_grad_[i] = true;
        break;
      }
    }
  }

  Gradients out;
  if (!requires_grad_[seed.index]) return out;

  std::vector<Tensor> grads(nodes_.size());
  grads[seed.index] = Tensor::matrix(1, 1, 1.0);
  for (std::size_t i = seed.index + 1; i-- > 0;) {
    if (grads[i].empty() || !requires_grad_[i]) continue;
    backprop_node(i, grads, out);
    if (nodes_[i].kind != OpKind::Param) grads[i] = Tensor();
  }
  return out;
}

}  // namespace lcfb
