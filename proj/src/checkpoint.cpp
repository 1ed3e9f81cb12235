#include "ecgcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'E', 'C', 'G', 'C', 'L', 'C', 'K', '1'};

enum Kind : std::uint8_t { kF32 = 1, kU8 = 2, kBits = 3 };

class Writer {
 public:
  explicit Writer(const fs::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + p.string() + "' for writing");
  }

  void raw(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

  template <class U>
  void le(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, sizeof(U));
  }

  void head(const std::string& name, Kind kind, std::uint64_t count) {
    le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    le<std::uint8_t>(kind);
    le<std::uint64_t>(count);
  }

  template <class R>
  void floats(const std::string& name, const std::vector<R>& values) {
    head(name, kF32, values.size());
    for (R v : values) le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }

  void bytes(const std::string& name, const std::vector<std::uint8_t>& values) {
    head(name, kU8, values.size());
    raw(values.data(), values.size());
  }

  void bits(const std::string& name, const std::vector<std::uint8_t>& flags) {
    head(name, kBits, flags.size());
    std::vector<unsigned char> packed((flags.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (flags[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    raw(packed.data(), packed.size());
  }

  void finish(const fs::path& p) {
    out_.flush();
    if (!out_) throw IoError("write to '" + p.string() + "' failed");
  }

 private:
  std::ofstream out_;
};

struct Blob {
  Kind kind;
  std::uint64_t count;
  std::vector<unsigned char> payload;
};

class Reader {
 public:
  explicit Reader(const fs::path& p) : path_(p), in_(p, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + p.string() + "' for reading");
  }

  bool raw(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in_.gcount()) == n;
  }

  template <class U>
  U le() {
    unsigned char b[sizeof(U)];
    if (!raw(b, sizeof(U))) corrupt("truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw IoError("corrupt checkpoint '" + path_.string() + "': " + why);
  }

 private:
  fs::path path_;
  std::ifstream in_;
};

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string task_prefix(int id) { return "task" + std::to_string(id) + "/"; }

}  // namespace

void save_checkpoint(const ParamStore& store, const std::vector<double>& schedule, const fs::path& path) {
  const auto& cfg = store.config();
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["encoder"] = {{"base_channels", cfg.base_channels},
                       {"blocks_per_stage", cfg.blocks_per_stage},
                       {"kernel_size", cfg.kernel_size}};
  header["seed"] = store.seed();
  header["schedule"] = schedule;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : store.tasks()) {
    tasks.push_back({{"id", t.id},
                     {"name", t.spec.name},
                     {"mode", to_string(t.spec.mode)},
                     {"leads", t.spec.leads},
                     {"classes", t.spec.classes},
                     {"release_fraction", t.release_fraction},
                     {"fingerprint", hex(t.fingerprint)},
                     {"complete", t.complete},
                     {"probe_shape", {t.probe.n, t.probe.c, t.probe.l}}});
  }
  header["tasks"] = tasks;
  const std::string text = header.dump();

  Writer w(path);
  w.raw(kMagic, sizeof(kMagic));
  w.le<std::uint64_t>(text.size());
  w.raw(text.data(), text.size());
  for (const auto& layer : store.layers()) {
    w.floats("layer/" + layer.info.name, layer.value);
    w.bytes("owner/" + layer.info.name, layer.owner);
  }
  for (const auto& t : store.tasks()) {
    const std::string p = task_prefix(t.id);
    for (const auto& [name, v] : t.exclusive) w.floats(p + "x/" + name, v.data);
    for (const auto& [name, s] : t.norms) {
      w.floats(p + "norm/" + name + "/mean", s.mean);
      w.floats(p + "norm/" + name + "/var", s.var);
    }
    for (const auto& [name, m] : t.pick) w.bits(p + "pick/" + name, m);
    w.floats(p + "probe", t.probe.data);
  }
  w.finish(path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
  Reader r(path);
  char magic[8];
  if (!r.raw(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) r.corrupt("bad magic");
  const auto header_len = r.le<std::uint64_t>();
  if (header_len > (1u << 26)) r.corrupt("implausible header length");
  std::string text(header_len, '\0');
  if (!r.raw(text.data(), text.size())) r.corrupt("truncated header");

  LoadedCheckpoint out;
  try {
    out.header = nlohmann::json::parse(text);
    if (out.header.at("format_version").get<int>() != kCheckpointVersion) r.corrupt("unsupported format version");
    EncoderConfig cfg;
    const auto& enc = out.header.at("encoder");
    cfg.base_channels = enc.at("base_channels").get<int>();
    cfg.blocks_per_stage = enc.at("blocks_per_stage").get<int>();
    cfg.kernel_size = enc.at("kernel_size").get<int>();
    out.schedule = out.header.at("schedule").get<std::vector<double>>();
    out.store = ParamStore(cfg, out.header.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    r.corrupt(std::string("bad header: ") + e.what());
  } catch (const ConfigError& e) {
    r.corrupt(std::string("bad encoder config: ") + e.what());
  }

  std::map<std::string, Blob> blobs;
  while (!r.at_end()) {
    const auto name_len = r.le<std::uint32_t>();
    if (name_len > 4096) r.corrupt("implausible record name length");
    std::string name(name_len, '\0');
    if (!r.raw(name.data(), name.size())) r.corrupt("truncated record name");
    Blob b;
    b.kind = static_cast<Kind>(r.le<std::uint8_t>());
    b.count = r.le<std::uint64_t>();
    std::uint64_t bytes = 0;
    switch (b.kind) {
      case kF32: bytes = b.count * 4; break;
      case kU8: bytes = b.count; break;
      case kBits: bytes = (b.count + 7) / 8; break;
      default: r.corrupt("unknown record kind in '" + name + "'");
    }
    if (bytes > (1ull << 34)) r.corrupt("implausible record size");
    b.payload.resize(bytes);
    if (!r.raw(b.payload.data(), bytes)) r.corrupt("truncated record '" + name + "'");
    blobs.emplace(std::move(name), std::move(b));
  }

  auto take = [&](const std::string& name, Kind kind, std::uint64_t count) -> const Blob& {
    auto it = blobs.find(name);
    if (it == blobs.end()) r.corrupt("missing record '" + name + "'");
    if (it->second.kind != kind || it->second.count != count) r.corrupt("record '" + name + "' has the wrong size");
    return it->second;
  };
  auto floats = [&](const std::string& name, std::uint64_t count) {
    const Blob& b = take(name, kF32, count);
    std::vector<Real> v(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(b.payload[i * 4 + k]) << (8 * k);
      v[i] = static_cast<Real>(std::bit_cast<float>(u));
    }
    return v;
  };

  std::vector<SharedLayer> layers = out.store.layers();
  for (auto& layer : layers) {
    layer.value = floats("layer/" + layer.info.name, layer.size());
    const Blob& own = take("owner/" + layer.info.name, kU8, layer.size());
    layer.owner.assign(own.payload.begin(), own.payload.end());
  }
  std::vector<TaskRecord> tasks;
  try {
    for (const auto& jt : out.header.at("tasks")) {
      TaskRecord t;
      t.id = jt.at("id").get<int>();
      if (t.id != static_cast<int>(tasks.size()) + 1) r.corrupt("task ids are not consecutive");
      t.spec.name = jt.at("name").get<std::string>();
      t.spec.mode = mode_from_string(jt.at("mode").get<std::string>());
      t.spec.leads = jt.at("leads").get<int>();
      t.spec.classes = jt.at("classes").get<int>();
      t.release_fraction = jt.at("release_fraction").get<double>();
      t.fingerprint = std::stoull(jt.at("fingerprint").get<std::string>(), nullptr, 16);
      t.complete = jt.at("complete").get<bool>();
      const auto shape = jt.at("probe_shape").get<std::vector<int>>();
      if (shape.size() != 3) r.corrupt("bad probe shape");
      const std::string p = task_prefix(t.id);
      const auto& cfg = out.store.config();
      for (const auto& es : exclusive_specs(cfg, t.spec.mode, t.spec.leads, t.spec.classes))
        t.exclusive[es.name] = Tensor(es.n, es.c, es.l, floats(p + "x/" + es.name, es.size()));
      for (const auto& name : norm_layers(cfg, t.spec.mode)) {
        const auto ch = static_cast<std::uint64_t>(out.store.layer(name).info.out_channels);
        NormStats s;
        s.mean = floats(p + "norm/" + name + "/mean", ch);
        s.var = floats(p + "norm/" + name + "/var", ch);
        t.norms[name] = std::move(s);
      }
      for (const auto& layer : layers) {
        if (!family_used_by(layer.info.family, t.spec.mode)) continue;
        const Blob& b = take(p + "pick/" + layer.info.name, kBits, layer.size());
        auto& mask = t.pick[layer.info.name];
        mask.assign(layer.size(), 0);
        for (std::size_t i = 0; i < layer.size(); ++i) mask[i] = (b.payload[i / 8] >> (i % 8)) & 1u;
      }
      const auto probe_count = static_cast<std::uint64_t>(shape[0]) * shape[1] * shape[2];
      t.probe = probe_count ? Tensor(shape[0], shape[1], shape[2], floats(p + "probe", probe_count)) : Tensor();
      if (!probe_count) take(p + "probe", kF32, 0);
      tasks.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    r.corrupt(std::string("bad task entry: ") + e.what());
  } catch (const ConfigError& e) {
    r.corrupt(std::string("bad task entry: ") + e.what());
  }
  out.store.restore(std::move(layers), std::move(tasks));
  out.store.check_partition();
  return out;
}

void export_masks_csv(const ParamStore& store, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "layer,family,total,free";
  for (std::size_t t = 1; t <= store.tasks().size(); ++t) out << ",task_" << t;
  out << '\n';
  for (const auto& o : store.occupancy()) {
    out << o.layer << ',' << to_string(o.family) << ',' << o.total << ',' << o.free;
    for (auto c : o.owned) out << ',' << c;
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

ECGCL_NAMESPACE_END
