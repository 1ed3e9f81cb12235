#include "ecgcl/network.hpp"

ECGCL_NAMESPACE_BEGIN

Var NetContext::w(const std::string& name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  Var v = weights_.tensor(graph_, name);
  cache_.emplace(name, v);
  return v;
}

Var conv_unit(NetContext& ctx, const std::string& layer, Var x, int stride, bool norm, bool activate) {
  Var kernel = ctx.w(layer);
  const int pad = (kernel.value().l - 1) / 2;
  Var y = conv1d(x, kernel, ctx.w(layer + ".b"), stride, pad);
  if (norm) y = batchnorm1d(y, ctx.w(layer + ".gamma"), ctx.w(layer + ".beta"), ctx.norm(layer), ctx.mode());
  return activate ? relu(y) : y;
}

Var conv_block(NetContext& ctx, int stage, int branch, int block, Var x) {
  Var h = conv_unit(ctx, block_name(stage, branch, block, 1), x, 1, true, true);
  h = conv_unit(ctx, block_name(stage, branch, block, 2), h, 1, true, false);
  return relu(add(h, x));
}

Var embed(NetContext& ctx, Var x) {
  const Tensor& X = x.value();
  if (X.l < 32) throw ShapeError("embed: window length " + std::to_string(X.l) + " is below 32 samples");
  Var adapter = ctx.w("adapter.w");
  if (adapter.value().c != X.c)
    throw LeadMismatchError("lead adapter 'adapter.w' expects " + std::to_string(adapter.value().c) +
                            " leads but the input has " + std::to_string(X.c) + " (shape mismatch)");
  Var h = conv1d(x, adapter, ctx.w("adapter.b"), 1, 0);
  h = conv_unit(ctx, "embed.0", h, 2, true, true);
  return conv_unit(ctx, "embed.1", h, 2, true, true);
}

void branch_partition(NetContext& ctx, int stage, BranchSet& branches) {
  if (branches.empty()) throw ContractError("branch_partition: empty branch set");
  if (branches.size() >= static_cast<std::size_t>(kStages))
    throw ContractError("branch_partition: already " + std::to_string(branches.size()) + " branches");
  branches.push_back(conv_unit(ctx, partition_name(stage), branches.back(), 2, true, true));
}

BranchSet branch_merge(NetContext& ctx, int stage, const BranchSet& branches) {
  const int count = static_cast<int>(branches.size());
  if (count < 2) throw ContractError("branch_merge: needs at least two branches");
  BranchSet merged;
  merged.reserve(count);
  for (int to = 0; to < count; ++to) {
    const int target_len = branches[to].value().l;
    Var total = branches[to];
    for (int from = 0; from < count; ++from) {
      if (from == to) continue;
      Var term = branches[from];
      if (from < to) {
        const int hops = to - from;
        for (int hop = 0; hop < hops; ++hop)
          term = conv_unit(ctx, merge_down_name(stage, from, to, hop), term, 2, true, hop + 1 < hops);
      } else {
        const std::string up = merge_up_name(stage, from, to);
        term = conv_transpose1d(term, ctx.w(up), ctx.w(up + ".b"), 1 << (from - to));
        term = conv_unit(ctx, merge_proj_name(stage, from, to), term, 1, true, false);
        term = fit_length(term, target_len);
      }
      total = add(total, term);
    }
    merged.push_back(relu(total));
  }
  return merged;
}

BranchSet encoder_forward(NetContext& ctx, const EncoderConfig& cfg, Var x) {
  BranchSet branches{embed(ctx, x)};
  for (int j = 0; j < cfg.blocks_per_stage; ++j) branches[0] = conv_block(ctx, 1, 0, j, branches[0]);
  for (int stage = 2; stage <= kStages; ++stage) {
    branch_partition(ctx, stage, branches);
    for (int r = 0; r < static_cast<int>(branches.size()); ++r)
      for (int j = 0; j < cfg.blocks_per_stage; ++j) branches[r] = conv_block(ctx, stage, r, j, branches[r]);
    branches = branch_merge(ctx, stage, branches);
  }
  return branches;
}

namespace {

void check_branch_law(const BranchSet& branches, const char* who) {
  if (branches.size() != static_cast<std::size_t>(kStages))
    throw ShapeError(std::string(who) + ": expected 4 branches, got " + std::to_string(branches.size()));
  const Tensor& z0 = branches[0].value();
  for (int r = 1; r < kStages; ++r) {
    const Tensor& prev = branches[r - 1].value();
    const Tensor& z = branches[r].value();
    if (z.n != z0.n || z.c != prev.c * 2 || z.l != (prev.l + 1) / 2)
      throw ShapeError(std::string(who) + ": branch " + std::to_string(r) + " has shape " + z.shape_str() +
                       " which breaks the channel-doubling/length-halving law");
  }
}

}  // namespace

Var se_forward(NetContext& ctx, Var z) {
  Var pooled = global_avg_pool(z);
  Var h = relu(conv1d(pooled, ctx.w("seg.se.fc1"), ctx.w("seg.se.fc1.b"), 1, 0));
  return sigmoid(conv1d(h, ctx.w("seg.se.fc2"), ctx.w("seg.se.fc2.b"), 1, 0));
}

Var seg_decode(NetContext& ctx, const BranchSet& branches) {
  check_branch_law(branches, "seg_decode");
  const int len = branches[0].value().l;
  std::vector<Var> parts{branches[0]};
  for (int r = 1; r < kStages; ++r) parts.push_back(linear_interpolate(branches[r], len));
  Var z = concat_channels(parts);
  Var attended = scale_channels(z, se_forward(ctx, z));
  Var pooled = adaptive_avg_pool(attended, len);
  return sigmoid(conv1d(pooled, ctx.w("seg.proj"), ctx.w("seg.proj.b"), 1, 0));
}

Var cls_decode(NetContext& ctx, const BranchSet& branches) {
  check_branch_law(branches, "cls_decode");
  Var h = branches[0];
  for (int i = 0; i + 1 < kStages; ++i) {
    Var down = conv_unit(ctx, "cls.sconv" + std::to_string(i), h, 2, true, false);
    h = add(down, branches[i + 1]);
  }
  return sigmoid(conv1d(global_avg_pool(h), ctx.w("head.w"), ctx.w("head.b"), 1, 0));
}

Var network_forward(NetContext& ctx, const EncoderConfig& cfg, Mode mode, Var x) {
  BranchSet branches = encoder_forward(ctx, cfg, x);
  return mode == Mode::Seg ? seg_decode(ctx, branches) : cls_decode(ctx, branches);
}

ECGCL_NAMESPACE_END
