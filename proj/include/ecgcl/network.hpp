#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ecgcl/architecture.hpp"
#include "ecgcl/error.hpp"
#include "ecgcl/ops.hpp"

ECGCL_NAMESPACE_BEGIN

/// Raised when an input's lead count does not match the task's lead adapter.
class LeadMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Supplies graph nodes for named weights. Implementations decide how a
/// shared kernel is masked and whether gradients flow into it.
class WeightSource {
 public:
  virtual ~WeightSource() = default;
  virtual Var tensor(Graph& g, const std::string& name) = 0;
  virtual NormStats& norm(const std::string& name) = 0;
};

/// One forward pass: a graph, where weights come from, and the norm mode.
class NetContext {
 public:
  NetContext(Graph& graph, WeightSource& weights, NormMode mode)
      : graph_(graph), weights_(weights), mode_(mode) {}

  Graph& graph() { return graph_; }
  NormMode mode() const { return mode_; }
  Var w(const std::string& name);
  NormStats& norm(const std::string& name) { return weights_.norm(name); }

 private:
  Graph& graph_;
  WeightSource& weights_;
  NormMode mode_;
  std::unordered_map<std::string, Var> cache_;
};

/// Feature maps ordered from highest (index 0) to lowest resolution.
using BranchSet = std::vector<Var>;

/// conv (+bias) -> optional norm -> optional ReLU. Padding keeps
/// out_len == ceil(in_len / stride).
Var conv_unit(NetContext& ctx, const std::string& layer, Var x, int stride, bool norm, bool activate);

/// Conv -> Norm -> ReLU -> Conv -> Norm, identity skip, ReLU.
Var conv_block(NetContext& ctx, int stage, int branch, int block, Var x);

/// Lead adapter (N -> 12, 1x1) followed by two stride-2 conv units.
/// Input (n x N x L) with L >= 32 yields (n x C x ceil(L/4)).
Var embed(NetContext& ctx, Var x);

/// Appends a branch derived from the current lowest one by a stride-2
/// channel-doubling conv unit.
void branch_partition(NetContext& ctx, int stage, BranchSet& branches);

/// Cross-resolution additive fusion: every output branch sums resampled
/// copies of all input branches, then applies ReLU.
BranchSet branch_merge(NetContext& ctx, int stage, const BranchSet& branches);

BranchSet encoder_forward(NetContext& ctx, const EncoderConfig& cfg, Var x);

/// Channel weights in (0,1): GAP -> 1x1 (reduce) -> ReLU -> 1x1 (expand) -> sigmoid.
Var se_forward(NetContext& ctx, Var z);

/// Per-position probabilities (n x 1 x len(z0)).
Var seg_decode(NetContext& ctx, const BranchSet& branches);

/// Per-class probabilities (n x classes x 1).
Var cls_decode(NetContext& ctx, const BranchSet& branches);

/// Encoder followed by the decoder of the given mode.
Var network_forward(NetContext& ctx, const EncoderConfig& cfg, Mode mode, Var x);

ECGCL_NAMESPACE_END
