#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "ecgcl/param_store.hpp"

ECGCL_NAMESPACE_BEGIN

inline constexpr int kCheckpointVersion = 1;

/// Layout: 8-byte magic, u64 header length, canonical JSON header (format
/// version, encoder config, tasks, schedule), then records of
/// [u32 name length][name][u8 kind][u64 count][payload], little-endian.
/// Kinds: 1 = float32 values, 2 = uint8 owner labels, 3 = packed bits
/// (LSB first). Values are stored as float32.
void save_checkpoint(const ParamStore& store, const std::vector<double>& schedule,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  ParamStore store;
  std::vector<double> schedule;
  nlohmann::json header;
};

/// Throws IoError for unreadable or corrupt files.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Per-layer ownership histogram: layer,family,total,free,task_1..task_T.
void export_masks_csv(const ParamStore& store, const std::filesystem::path& path);

ECGCL_NAMESPACE_END
