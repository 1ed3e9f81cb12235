#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecgcl/data.hpp"
#include "ecgcl/engine.hpp"
#include "ecgcl/synth.hpp"

ECGCL_NAMESPACE_BEGIN

/// Where a task's records come from: a synthetic recipe or a CSV path.
struct SourceConfig {
  std::optional<LabelledSynthConfig> synth;  // classes empty for segmentation recipes
  std::optional<std::filesystem::path> path;
};

struct TaskConfig {
  TaskSpec spec;
  SourceConfig source;
  OptimConfig optim;
  int retrain_epochs = 2;
};

struct PreprocessConfig {
  bool bandpass = true;
  double lo = 0.5;
  double hi = 45.0;
  double window_seconds = kWindowSeconds;
};

struct SplitConfig {
  SplitFractions fractions;
  bool stratify_by_patient = true;
};

/// A whole continual-learning run as read from JSON.
struct SequenceConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  EncoderConfig encoder;
  PickMode pick = PickMode::Trained;
  int pick_epochs = 2;
  double pick_lr = 2e-3;
  std::vector<double> schedule;  // empty: default schedule
  PreprocessConfig preprocess;
  SplitConfig split;
  std::vector<TaskConfig> tasks;

  EngineOptions engine_options() const;
};

/// Strict parsing: unknown keys, wrong types and invalid values raise
/// ConfigError naming the offending key path.
SequenceConfig parse_sequence_config(const nlohmann::json& j);
SequenceConfig load_sequence_config(const std::filesystem::path& path);

/// Fully resolved configuration (defaults filled in), canonical key order.
nlohmann::json to_json(const SequenceConfig& cfg);

/// Copy with every seedless synthetic recipe given its derived seed.
SequenceConfig resolve_seeds(SequenceConfig cfg);

/// Raw records of task k. Synthetic recipes without their own seed derive
/// one from the run seed and the task index.
std::vector<EcgRecord> task_records(const SequenceConfig& cfg, std::size_t k);

/// Records -> split -> preprocess -> windows -> tensors.
TaskData3 build_task_data(const SequenceConfig& cfg, std::size_t k, const std::vector<EcgRecord>& records);

std::vector<TaskPlan> build_plans(const SequenceConfig& cfg);

/// Windows of a record list as one dataset (no split).
TaskData records_to_data(const std::vector<EcgRecord>& records, const PreprocessConfig& pre, Mode mode, int classes);

ECGCL_NAMESPACE_END
