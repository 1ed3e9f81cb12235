#include "ecgcl/graph.hpp"

#include <cstring>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(Parameter& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = true;
  const int id = static_cast<int>(nodes_.size());
  node.backward = [&p](Graph& g, int id) {
    const Tensor& gy = g.nodes_[id].grad;
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (p.trainable[i]) p.grad.data[i] += gy.data[i];
  };
  nodes_.push_back(std::move(node));
  params_.push_back({&p, id});
  return Var{this, id};
}

Var Graph::weight(const GatedWeight& w) {
  const std::size_t count = static_cast<std::size_t>(w.out) * w.in * w.taps;
  if (w.value.size() != count) throw ShapeError("gated weight size mismatch");
  Tensor eff(w.out, w.in, w.taps);
  const bool scored = !w.score.empty();
  std::vector<Real> gates(count);
  for (std::size_t i = 0; i < count; ++i) {
    Real g = w.gate.empty() ? Real(1) : w.gate[i];
    if (scored && w.pickable[i]) g = w.score[i] > Real(0) ? Real(1) : Real(0);
    gates[i] = g;
    eff.data[i] = w.value[i] * g;
  }
  Node node;
  node.value = std::move(eff);
  node.requires_grad = !w.grad.empty() || !w.score_grad.empty();
  const int id = static_cast<int>(nodes_.size());
  if (node.requires_grad) {
    node.backward = [w, gates = std::move(gates)](Graph& g, int id) {
      const Tensor& gy = g.nodes_[id].grad;
      if (!w.grad.empty()) {
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (w.trainable.empty() || w.trainable[i]) w.grad[i] += gy.data[i] * gates[i];
      }
      if (!w.score_grad.empty()) {
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (w.pickable[i]) w.score_grad[i] += gy.data[i] * w.value[i];
      }
    };
  }
  nodes_.push_back(std::move(node));
  return Var{this, id};
}

Var Graph::add_node(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (int in : inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size())
    node.grad = Tensor(node.value.n, node.value.c, node.value.l);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (!loss || loss.graph != this) throw ContractError("backward: loss is not a node of this graph");
  if (nodes_[loss.id].value.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + nodes_[loss.id].value.shape_str());
  for (auto& node : nodes_) node.grad = Tensor();
  grad(loss.id).data[0] = Real(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
  for (const auto& ref : params_) {
    auto& p = *ref.param;
    for (std::size_t i = 0; i < p.trainable.size(); ++i)
      if (!p.trainable[i]) p.grad.data[i] = Real(0);
  }
}

void Graph::mix_kink_signature(std::uint64_t h) {
  kink_signature_ ^= h;
  kink_signature_ *= 1099511628211ULL;
}

ECGCL_NAMESPACE_END
