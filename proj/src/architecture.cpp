#include "ecgcl/architecture.hpp"

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

void EncoderConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
}

std::string to_string(Mode m) { return m == Mode::Seg ? "seg" : "cls"; }

std::string to_string(Family f) {
  switch (f) {
    case Family::Encoder: return "encoder";
    case Family::Seg: return "seg";
    case Family::Cls: return "cls";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "seg") return Mode::Seg;
  if (s == "cls") return Mode::Cls;
  throw ConfigError("unknown task mode '" + s + "' (expected seg or cls)");
}

bool family_used_by(Family f, Mode m) {
  switch (f) {
    case Family::Encoder: return true;
    case Family::Seg: return m == Mode::Seg;
    case Family::Cls: return m == Mode::Cls;
  }
  return false;
}

int branch_channels(const EncoderConfig& cfg, int r) { return cfg.base_channels << r; }

int branch_length(int length, int r) {
  // two ceil-halvings for the embedding, then one per branch level
  int len = length;
  for (int i = 0; i < r + 2; ++i) len = (len + 1) / 2;
  return len;
}

int se_hidden(int channels) { return (channels + kSeReduction - 1) / kSeReduction; }

std::string block_name(int stage, int branch, int block, int conv) {
  return "s" + std::to_string(stage) + ".br" + std::to_string(branch) + ".blk" +
         std::to_string(block) + ".conv" + std::to_string(conv);
}

std::string partition_name(int stage) { return "s" + std::to_string(stage) + ".part"; }

static std::string merge_prefix(int stage, int from, int to) {
  return "s" + std::to_string(stage) + ".merge." + std::to_string(from) + "to" + std::to_string(to);
}

std::string merge_down_name(int stage, int from, int to, int hop) {
  return merge_prefix(stage, from, to) + ".down" + std::to_string(hop);
}
std::string merge_up_name(int stage, int from, int to) { return merge_prefix(stage, from, to) + ".up"; }
std::string merge_proj_name(int stage, int from, int to) {
  return merge_prefix(stage, from, to) + ".proj";
}

std::vector<LayerInfo> shared_layers(const EncoderConfig& cfg) {
  cfg.validate();
  const int C = cfg.base_channels, k = cfg.kernel_size;
  std::vector<LayerInfo> layers;
  auto conv = [&](std::string name, Family fam, int out, int in, int taps, int stride, bool norm) {
    layers.push_back({std::move(name), fam, LayerKind::Conv, out, in, taps, stride, norm});
  };

  conv("embed.0", Family::Encoder, C, kStandardLeads, k, 2, true);
  conv("embed.1", Family::Encoder, C, C, k, 2, true);
  for (int stage = 1; stage <= kStages; ++stage) {
    const int branches = stage;
    if (stage > 1) {
      conv(partition_name(stage), Family::Encoder, branch_channels(cfg, stage - 1),
           branch_channels(cfg, stage - 2), k, 2, true);
    }
    for (int r = 0; r < branches; ++r) {
      const int ch = branch_channels(cfg, r);
      for (int j = 0; j < cfg.blocks_per_stage; ++j) {
        conv(block_name(stage, r, j, 1), Family::Encoder, ch, ch, k, 1, true);
        conv(block_name(stage, r, j, 2), Family::Encoder, ch, ch, k, 1, true);
      }
    }
    if (stage == 1) continue;
    for (int to = 0; to < branches; ++to) {
      for (int from = 0; from < branches; ++from) {
        if (from < to) {
          for (int hop = 0; hop < to - from; ++hop)
            conv(merge_down_name(stage, from, to, hop), Family::Encoder,
                 branch_channels(cfg, from + hop + 1), branch_channels(cfg, from + hop), k, 2, true);
        } else if (from > to) {
          const int factor = 1 << (from - to);
          const int ch = branch_channels(cfg, from);
          layers.push_back({merge_up_name(stage, from, to), Family::Encoder, LayerKind::Transposed,
                            ch, ch, factor, factor, false});
          conv(merge_proj_name(stage, from, to), Family::Encoder, branch_channels(cfg, to), ch, 1, 1,
               true);
        }
      }
    }
  }

  const int total = 15 * C;
  conv("seg.se.fc1", Family::Seg, se_hidden(total), total, 1, 1, false);
  conv("seg.se.fc2", Family::Seg, total, se_hidden(total), 1, 1, false);
  conv("seg.proj", Family::Seg, 1, total, 1, 1, false);

  for (int i = 0; i < kStages - 1; ++i)
    conv("cls.sconv" + std::to_string(i), Family::Cls, branch_channels(cfg, i + 1),
         branch_channels(cfg, i), k, 2, true);
  return layers;
}

std::vector<ExclusiveSpec> exclusive_specs(const EncoderConfig& cfg, Mode mode, int leads,
                                           int classes) {
  if (leads < 1) throw ConfigError("lead count must be positive");
  if (mode == Mode::Cls && classes < 1) throw ConfigError("class count must be positive");
  std::vector<ExclusiveSpec> specs;
  specs.push_back({"adapter.w", kStandardLeads, leads, 1});
  specs.push_back({"adapter.b", 1, kStandardLeads, 1});
  for (const auto& layer : shared_layers(cfg)) {
    if (!family_used_by(layer.family, mode)) continue;
    specs.push_back({layer.name + ".b", 1, layer.out_channels, 1});
    if (layer.has_norm) {
      specs.push_back({layer.name + ".gamma", 1, layer.out_channels, 1});
      specs.push_back({layer.name + ".beta", 1, layer.out_channels, 1});
    }
  }
  if (mode == Mode::Cls) {
    specs.push_back({"head.w", classes, branch_channels(cfg, kStages - 1), 1});
    specs.push_back({"head.b", 1, classes, 1});
  }
  return specs;
}

std::vector<std::string> norm_layers(const EncoderConfig& cfg, Mode mode) {
  std::vector<std::string> names;
  for (const auto& layer : shared_layers(cfg))
    if (layer.has_norm && family_used_by(layer.family, mode)) names.push_back(layer.name);
  return names;
}

std::size_t encoder_parameter_count(const EncoderConfig& cfg, int leads) {
  std::size_t count = static_cast<std::size_t>(kStandardLeads) * leads + kStandardLeads;
  for (const auto& layer : shared_layers(cfg)) {
    if (layer.family != Family::Encoder) continue;
    count += layer.kernel_size() + layer.out_channels;
    if (layer.has_norm) count += 2 * static_cast<std::size_t>(layer.out_channels);
  }
  return count;
}

std::size_t model_parameter_count(const EncoderConfig& cfg, int leads, Mode mode, int classes) {
  std::size_t count = 0;
  for (const auto& layer : shared_layers(cfg))
    if (family_used_by(layer.family, mode)) count += layer.kernel_size();
  for (const auto& spec : exclusive_specs(cfg, mode, leads, classes)) count += spec.size();
  return count;
}

ECGCL_NAMESPACE_END
