#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

inline constexpr int kStages = 4;
inline constexpr int kStandardLeads = 12;
inline constexpr int kSeReduction = 4;

struct EncoderConfig {
  int base_channels = 8;
  int blocks_per_stage = 4;
  int kernel_size = 3;

  void validate() const;
};

enum class Mode : std::uint8_t { Seg, Cls };

/// Which group of tasks may share a layer's kernel scalars.
enum class Family : std::uint8_t { Encoder, Seg, Cls };

std::string to_string(Mode m);
std::string to_string(Family f);
Mode mode_from_string(const std::string& s);

enum class LayerKind : std::uint8_t {
  Conv,        // kernel (out x in x k), bias, optional norm
  Transposed,  // kernel (in x out x k), bias
};

/// A layer whose kernel is shared between tasks (and therefore prunable).
/// Biases and normalization affine/statistics are task-private copies.
struct LayerInfo {
  std::string name;
  Family family;
  LayerKind kind;
  int out_channels;
  int in_channels;
  int taps;
  int stride;
  bool has_norm;

  std::size_t kernel_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * taps;
  }
};

/// Shape of one task-private tensor stored as (n x c x l).
struct ExclusiveSpec {
  std::string name;
  int n, c, l;
  std::size_t size() const { return static_cast<std::size_t>(n) * c * l; }
};

/// Every shared layer of the encoder and both decoders, in a fixed order.
std::vector<LayerInfo> shared_layers(const EncoderConfig& cfg);

bool family_used_by(Family f, Mode m);

/// Task-private tensors for a task of the given mode: lead adapter, biases,
/// normalization affine pairs and (for classification) the output head.
std::vector<ExclusiveSpec> exclusive_specs(const EncoderConfig& cfg, Mode mode, int leads,
                                           int classes);
/// Normalization layers (names of LayerInfo with has_norm) used by a mode.
std::vector<std::string> norm_layers(const EncoderConfig& cfg, Mode mode);

/// Channels and length of branch r for an input of `length` samples.
int branch_channels(const EncoderConfig& cfg, int r);
int branch_length(int length, int r);
int se_hidden(int channels);

/// Trainable scalar counts of the network a single task sees.
std::size_t encoder_parameter_count(const EncoderConfig& cfg, int leads);
std::size_t model_parameter_count(const EncoderConfig& cfg, int leads, Mode mode, int classes);

// Layer naming helpers shared by the network code and the registry.
std::string block_name(int stage, int branch, int block, int conv);
std::string partition_name(int stage);
std::string merge_down_name(int stage, int from, int to, int hop);
std::string merge_up_name(int stage, int from, int to);
std::string merge_proj_name(int stage, int from, int to);

ECGCL_NAMESPACE_END
