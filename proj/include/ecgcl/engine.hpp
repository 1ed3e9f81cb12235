#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ecgcl/data.hpp"
#include "ecgcl/metrics.hpp"
#include "ecgcl/optim.hpp"
#include "ecgcl/param_store.hpp"

ECGCL_NAMESPACE_BEGIN

enum class PickMode : std::uint8_t { Trained, All };
std::string to_string(PickMode p);
PickMode pick_mode_from_string(const std::string& s);

/// Which shared scalars a training phase updates.
enum class Phase : std::uint8_t {
  Train,     // FREE scalars trainable, picked earlier-task scalars frozen
  Retrain,   // only scalars owned by the current task trainable
  Finetune,  // every shared scalar trainable, ownership ignored
};

std::string to_string(Phase p);

struct TaskData3 {
  TaskData train, val, test;
};

struct TaskPlan {
  TaskSpec spec;
  OptimConfig optim;
  int retrain_epochs = 2;
  TaskData3 data;
};

struct EngineOptions {
  PickMode pick = PickMode::Trained;
  int pick_epochs = 2;        // warm phase in which pick scores train with the task
  double pick_lr = 2e-3;      // Adam rate of the pick scores
  double pick_init = 0.01;    // initial score of every preserved scalar
  int probe_size = 8;
  int eval_batch = 32;
  bool deterministic = true;  // reports carry runtime 0 so reruns are byte-identical
  std::uint64_t seed = 0;
};

/// One line of the learning-rate log.
struct LrLogEntry {
  int task = 0;
  std::string phase;  // "train" or "retrain"
  int epoch = 0;
  double lr = 0;
  double loss = 0;
};

/// Epoch callback for progress output.
using EpochHook = std::function<void(const LrLogEntry&)>;

/// Default release schedule for T planned tasks: task k releases
/// 1 - 1/(T-k+1) of its pool; the last task releases 0.5.
std::vector<double> default_release_schedule(int tasks);

/// Trains the open task in the given phase for `epochs` epochs with the
/// per-epoch rate `lr_of(epoch)`. During the first `pick_epochs` of a Train
/// phase in Trained pick mode the pick scores are learned and the mask is
/// fixed afterwards. Returns the mean training loss of every epoch.
std::vector<double> train_phase(ParamStore& store, TaskRecord& record, const TaskData& data, Phase phase,
                                const OptimConfig& optim, int epochs, const std::function<double(int)>& lr_of,
                                const EngineOptions& options, std::vector<LrLogEntry>* log = nullptr,
                                const EpochHook& hook = {});

/// train_phase(Train) with lr_at() and the pick warm phase.
std::vector<double> train_task(ParamStore& store, TaskRecord& record, const TaskData& data, const OptimConfig& optim,
                               const EngineOptions& options, std::vector<LrLogEntry>* log = nullptr,
                               const EpochHook& hook = {});

/// Pick mask over earlier-task scalars; `All` selects every one of them.
/// In Trained mode the mask comes from train_task's warm phase, so this only
/// handles the fallback and the domain clean-up.
void set_pick_all(const ParamStore& store, TaskRecord& record);

/// Per layer used by the task, releases round(fraction * n) of the n FREE
/// scalars with the smallest magnitude (zeroing them) and gives the rest to
/// the task. Layers with fewer than 2 candidates are kept whole with a warning.
void prune(ParamStore& store, TaskRecord& record, double fraction);

/// Fixed-rate fine-tuning of the scalars the task now owns.
std::vector<double> retrain(ParamStore& store, TaskRecord& record, const TaskData& data, const OptimConfig& optim,
                            int epochs, const EngineOptions& options, std::vector<LrLogEntry>* log = nullptr,
                            const EpochHook& hook = {}, double lr = kRetrainLearningRate);

/// Stores the probe batch and output fingerprint, then marks the record complete.
void finalize_task(const ParamStore& store, TaskRecord& record, const Tensor& probe, bool ignore_ownership = false);

/// First min(n, probe_size) inputs of a dataset.
Tensor probe_batch(const TaskData& data, int probe_size);

MetricsReport evaluate(const ParamStore& store, const TaskRecord& record, const TaskData& data,
                       const EngineOptions& options, bool ignore_ownership = false);

struct SequenceResult {
  std::vector<MetricsReport> after_task;  // each task right after it finished
  std::vector<MetricsReport> final;       // every task after the whole sequence
  std::vector<std::vector<LayerOccupancy>> occupancy;  // after each prune
  std::vector<LrLogEntry> lr_log;
  std::vector<double> schedule;
  std::uint64_t storage_bytes = 0;  // bytes of all weights a deployment keeps
};

/// Train -> prune -> retrain for every task in order, then evaluates every
/// task with its own record. Ownership invariants are asserted after every
/// prune. Capacity exhaustion raises CapacityError with an occupancy table.
SequenceResult run_sequence(const std::vector<TaskPlan>& plans, ParamStore& store, std::vector<double> schedule,
                            const EngineOptions& options, const EpochHook& hook = {});

enum class Baseline : std::uint8_t { Scratch, Finetune };
std::string to_string(Baseline b);
Baseline baseline_from_string(const std::string& s);

/// Scratch: an independent model per task. Finetune: one model whose shared
/// weights every task keeps training, without isolation. Both train each task
/// for the same epochs as the continual run (train + retrain) and never prune.
SequenceResult run_baseline(const std::vector<TaskPlan>& plans, const EncoderConfig& cfg, Baseline mode,
                            const EngineOptions& options, const EpochHook& hook = {});

/// Text table of owned/free counts per layer.
std::string occupancy_table(const std::vector<LayerOccupancy>& occ);

/// Bytes of 32-bit weights one deployment of the store keeps.
std::uint64_t storage_bytes(const ParamStore& store);

nlohmann::json to_json(const LrLogEntry& e);
nlohmann::json to_json(const SequenceResult& r);

ECGCL_NAMESPACE_END
