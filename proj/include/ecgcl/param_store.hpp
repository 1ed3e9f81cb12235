#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ecgcl/architecture.hpp"
#include "ecgcl/network.hpp"

ECGCL_NAMESPACE_BEGIN

/// Owner label of a shared kernel scalar. Tasks are numbered from 1.
using Owner = std::uint8_t;
inline constexpr Owner kFree = 0;
inline constexpr int kMaxTasks = 255;

struct SharedLayer {
  LayerInfo info;
  std::vector<Real> value;
  std::vector<Owner> owner;

  std::size_t size() const { return value.size(); }
  std::size_t count(Owner o) const;
  /// Tensor shape as stored: (out x in x taps), or (in x out x taps) for transposed layers.
  int dim0() const { return info.kind == LayerKind::Transposed ? info.in_channels : info.out_channels; }
  int dim1() const { return info.kind == LayerKind::Transposed ? info.out_channels : info.in_channels; }
};

struct TaskSpec {
  std::string name;
  Mode mode = Mode::Seg;
  int leads = 1;
  int classes = 0;  // classification only
};

/// Everything private to one task. Immutable once `complete` is set.
struct TaskRecord {
  int id = 0;
  TaskSpec spec;
  double release_fraction = 0;
  /// Per shared layer used by the task; only entries with owner < id matter.
  std::map<std::string, std::vector<std::uint8_t>> pick;
  std::map<std::string, NormStats> norms;
  std::map<std::string, Tensor> exclusive;
  Tensor probe;  // fixed input batch the fingerprint is computed on
  std::uint64_t fingerprint = 0;
  bool complete = false;

  bool picks(const std::string& layer, std::size_t i) const;
};

/// Per-layer occupancy at one point of a sequence.
struct LayerOccupancy {
  std::string layer;
  Family family;
  std::size_t total = 0;
  std::size_t free = 0;
  std::vector<std::size_t> owned;  // owned[t-1] = scalars owned by task t
};

/// Shared kernels with per-scalar ownership plus the record of every task.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<SharedLayer>& layers() { return layers_; }
  const std::vector<SharedLayer>& layers() const { return layers_; }
  SharedLayer& layer(const std::string& name);
  const SharedLayer& layer(const std::string& name) const;
  bool has_layer(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<TaskRecord>& tasks() { return tasks_; }
  const std::vector<TaskRecord>& tasks() const { return tasks_; }
  /// Throws LookupError for unknown ids.
  TaskRecord& task(int id);
  const TaskRecord& task(int id) const;

  /// Opens the record of the next task: exclusive tensors are copied from the
  /// latest compatible task (fresh when none), FREE scalars of the layers the
  /// task uses are re-initialized unless `reinit_free` is false. With
  /// `check_capacity`, a used layer without FREE scalars raises CapacityError.
  TaskRecord& begin_task(const TaskSpec& spec, bool check_capacity = true, bool reinit_free = true);

  /// Fresh random values for every FREE scalar of the layers used by `mode`.
  void reinitialize_free(Mode mode);

  std::vector<LayerOccupancy> occupancy() const;
  /// Partition check: every scalar has exactly one valid owner.
  void check_partition() const;

  std::uint64_t seed() const { return seed_; }
  friend bool operator==(const ParamStore& a, const ParamStore& b);

  /// Used by checkpoint loading.
  void restore(std::vector<SharedLayer> layers, std::vector<TaskRecord> tasks);

 private:
  Tensor fresh_exclusive(const ExclusiveSpec& spec);
  void init_layer_values(SharedLayer& layer, bool only_free);

  EncoderConfig cfg_;
  std::uint64_t seed_ = 0;
  std::mt19937_64 rng_;
  std::vector<SharedLayer> layers_;
  std::map<std::string, std::size_t> index_;
  std::vector<TaskRecord> tasks_;
};

bool operator==(const NormStats& a, const NormStats& b);
bool operator==(const Tensor& a, const Tensor& b);

/// Participation predicate of a completed task's view.
bool participates(Owner owner, int task, bool picked);

/// Read-only masked view of the network for one completed task. With
/// `ignore_ownership` every shared scalar participates (finetune baseline).
class TaskView : public WeightSource {
 public:
  TaskView(const ParamStore& store, const TaskRecord& record, bool ignore_ownership = false);

  Var tensor(Graph& g, const std::string& name) override;
  NormStats& norm(const std::string& name) override;

  /// Effective (masked) kernel of a shared layer.
  std::vector<Real> effective(const std::string& layer) const;

 private:
  const ParamStore& store_;
  const TaskRecord& record_;
  bool ignore_ownership_;
  std::map<std::string, NormStats> norms_;
  std::map<std::string, std::vector<Real>> gates_;
};

/// FNV-1a over the bytes of a tensor.
std::uint64_t fingerprint_bytes(const Tensor& t);

/// Eval-mode forward pass of a completed task on `x`.
Tensor task_forward(const ParamStore& store, const TaskRecord& record, const Tensor& x, bool ignore_ownership = false,
                    int batch_size = 16);

ECGCL_NAMESPACE_END
