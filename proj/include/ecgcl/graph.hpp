#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "ecgcl/tensor.hpp"

ECGCL_NAMESPACE_BEGIN

class Graph;

/// Handle to a node of a Graph. A default-constructed Var is "absent"
/// (used for optional operands such as a missing bias).
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  explicit operator bool() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
};

/// A weight whose forward value is `value * gate`. Gradients are written to
/// `grad` only where `trainable` is set. When `score` is non-empty, scalars
/// with `pickable` set use `score > 0` as their gate and accumulate the
/// straight-through gradient `dL/dw_eff * value` into `score_grad`.
struct GatedWeight {
  std::span<const Real> value;
  int out = 0, in = 0, taps = 0;
  std::span<const Real> gate;                // empty: all ones
  std::span<Real> grad;                      // empty: no gradient wanted
  std::span<const std::uint8_t> trainable;   // empty with non-empty grad: all trainable
  std::span<const Real> score;
  std::span<Real> score_grad;
  std::span<const std::uint8_t> pickable;
};

/// Tape of operator nodes in creation (topological) order. Backward walks the
/// tape once in reverse. A graph is used by one thread at a time.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is accumulated into `p.grad` (masked by p.trainable).
  Var parameter(Parameter& p);
  Var weight(const GatedWeight& w);

  /// Used by operator implementations.
  Var add_node(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return v && nodes_[v.id].requires_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first use.
  Tensor& grad(int id);
  const Tensor& grad(Var v) { return grad(v.id); }

  /// Reverse-mode sweep from a scalar node. Throws ContractError otherwise.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// Kink tracking records the sign pattern of every ReLU input so that a
  /// finite-difference check can tell when a perturbation crossed a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool track_kinks() const { return track_kinks_; }
  void mix_kink_signature(std::uint64_t h);
  std::uint64_t kink_signature() const { return kink_signature_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  struct ParamRef {
    Parameter* param;
    int node;
  };

  std::deque<Node> nodes_;  // deque: node references stay valid while the tape grows
  std::vector<ParamRef> params_;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 1469598103934665603ULL;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

ECGCL_NAMESPACE_END
