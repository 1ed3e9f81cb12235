#include "ecgcl/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double fan_in(const LayerInfo& info) {
  return info.kind == LayerKind::Transposed ? info.in_channels : static_cast<double>(info.in_channels) * info.taps;
}

}  // namespace

std::size_t SharedLayer::count(Owner o) const { return static_cast<std::size_t>(std::count(owner.begin(), owner.end(), o)); }

bool TaskRecord::picks(const std::string& layer, std::size_t i) const {
  auto it = pick.find(layer);
  return it != pick.end() && i < it->second.size() && it->second[i] != 0;
}

bool participates(Owner owner, int task, bool picked) {
  return owner == task || (owner != kFree && owner < task && picked);
}

bool operator==(const NormStats& a, const NormStats& b) { return a.mean == b.mean && a.var == b.var; }
bool operator==(const Tensor& a, const Tensor& b) { return a.same_shape(b) && a.data == b.data; }

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.cfg_.base_channels != b.cfg_.base_channels || a.cfg_.blocks_per_stage != b.cfg_.blocks_per_stage ||
      a.cfg_.kernel_size != b.cfg_.kernel_size || a.layers_.size() != b.layers_.size() ||
      a.tasks_.size() != b.tasks_.size())
    return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    // bitwise comparison so that -0.0 and NaN payloads count as differences
    if (x.info.name != y.info.name || x.owner != y.owner || x.value.size() != y.value.size() ||
        std::memcmp(x.value.data(), y.value.data(), x.value.size() * sizeof(Real)) != 0)
      return false;
  }
  for (std::size_t i = 0; i < a.tasks_.size(); ++i) {
    const auto& x = a.tasks_[i];
    const auto& y = b.tasks_[i];
    if (x.id != y.id || x.spec.name != y.spec.name || x.spec.mode != y.spec.mode || x.spec.leads != y.spec.leads ||
        x.spec.classes != y.spec.classes || x.release_fraction != y.release_fraction || x.pick != y.pick ||
        x.norms != y.norms || x.exclusive != y.exclusive || !(x.probe == y.probe) ||
        x.fingerprint != y.fingerprint || x.complete != y.complete)
      return false;
  }
  return true;
}

ParamStore::ParamStore(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed), rng_(seed) {
  cfg_.validate();
  for (auto& info : shared_layers(cfg_)) {
    SharedLayer layer;
    layer.info = info;
    layer.value.assign(info.kernel_size(), Real(0));
    layer.owner.assign(info.kernel_size(), kFree);
    index_[info.name] = layers_.size();
    layers_.push_back(std::move(layer));
  }
  for (auto& layer : layers_) init_layer_values(layer, false);
}

void ParamStore::restore(std::vector<SharedLayer> layers, std::vector<TaskRecord> tasks) {
  if (layers.size() != layers_.size()) throw ShapeError("restore: layer count differs from the configuration");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].info.name != layers_[i].info.name || layers[i].value.size() != layers_[i].value.size() ||
        layers[i].owner.size() != layers_[i].owner.size())
      throw ShapeError("restore: layer '" + layers[i].info.name + "' does not match the configuration");
  }
  layers_ = std::move(layers);
  tasks_ = std::move(tasks);
}

void ParamStore::init_layer_values(SharedLayer& layer, bool only_free) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in(layer.info)));
  for (std::size_t i = 0; i < layer.size(); ++i) {
    const Real v = static_cast<Real>(gauss(rng_));
    if (!only_free || layer.owner[i] == kFree) layer.value[i] = v;
  }
}

SharedLayer& ParamStore::layer(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("no shared layer named '" + name + "'");
  return layers_[it->second];
}

const SharedLayer& ParamStore::layer(const std::string& name) const {
  return const_cast<ParamStore*>(this)->layer(name);
}

TaskRecord& ParamStore::task(int id) {
  if (id < 1 || id > static_cast<int>(tasks_.size()))
    throw LookupError("task " + std::to_string(id) + " does not exist (store holds " + std::to_string(tasks_.size()) +
                      " tasks)");
  return tasks_[id - 1];
}

const TaskRecord& ParamStore::task(int id) const { return const_cast<ParamStore*>(this)->task(id); }

Tensor ParamStore::fresh_exclusive(const ExclusiveSpec& spec) {
  Tensor t(spec.n, spec.c, spec.l);
  if (ends_with(spec.name, ".gamma")) {
    t.fill(Real(1));
  } else if (spec.name == "adapter.w" || spec.name == "head.w") {
    std::normal_distribution<double> gauss(0.0, std::sqrt(1.0 / (static_cast<double>(spec.c) * spec.l)));
    for (auto& v : t.data) v = static_cast<Real>(gauss(rng_));
  } else if (spec.name == "seg.proj.b") {
    // R-peak neighbourhoods cover a small share of positions
    t.fill(Real(-1.5));
  }
  return t;
}

TaskRecord& ParamStore::begin_task(const TaskSpec& spec, bool check_capacity, bool reinit_free) {
  if (static_cast<int>(tasks_.size()) >= kMaxTasks) throw CapacityError("task limit reached", "");
  if (!tasks_.empty() && !tasks_.back().complete)
    throw ContractError("begin_task: task " + std::to_string(tasks_.back().id) + " is still open");
  if (spec.leads < 1) throw ConfigError("task '" + spec.name + "': lead count must be positive");
  if (spec.mode == Mode::Cls && spec.classes < 1)
    throw ConfigError("task '" + spec.name + "': classification needs a positive class count");
  if (check_capacity) {
    for (const auto& layer : layers_) {
      if (!family_used_by(layer.info.family, spec.mode)) continue;
      if (layer.count(kFree) == 0)
        throw CapacityError("layer '" + layer.info.name + "' has no FREE scalars left for task '" + spec.name + "'",
                            layer.info.name);
    }
  }

  TaskRecord rec;
  rec.id = static_cast<int>(tasks_.size()) + 1;
  rec.spec = spec;
  for (const auto& es : exclusive_specs(cfg_, spec.mode, spec.leads, spec.classes)) {
    const bool head = es.name == "head.w" || es.name == "head.b";
    const bool adapter = es.name == "adapter.w" || es.name == "adapter.b";
    const Tensor* source = nullptr;
    for (auto it = tasks_.rbegin(); it != tasks_.rend() && !head; ++it) {
      if (adapter && it->spec.leads != spec.leads) continue;
      auto found = it->exclusive.find(es.name);
      if (found != it->exclusive.end() && found->second.size() == es.size()) {
        source = &found->second;
        break;
      }
    }
    rec.exclusive[es.name] = source ? *source : fresh_exclusive(es);
  }
  for (const auto& name : norm_layers(cfg_, spec.mode)) {
    const NormStats* source = nullptr;
    for (auto it = tasks_.rbegin(); it != tasks_.rend(); ++it) {
      auto found = it->norms.find(name);
      if (found != it->norms.end()) {
        source = &found->second;
        break;
      }
    }
    rec.norms[name] = source ? *source : NormStats(layer(name).info.out_channels);
  }
  for (const auto& layer : layers_)
    if (family_used_by(layer.info.family, spec.mode)) rec.pick[layer.info.name].assign(layer.size(), 0);
  if (reinit_free) reinitialize_free(spec.mode);
  tasks_.push_back(std::move(rec));
  return tasks_.back();
}

void ParamStore::reinitialize_free(Mode mode) {
  for (auto& layer : layers_)
    if (family_used_by(layer.info.family, mode)) init_layer_values(layer, true);
}

std::vector<LayerOccupancy> ParamStore::occupancy() const {
  std::vector<LayerOccupancy> out;
  for (const auto& layer : layers_) {
    LayerOccupancy occ;
    occ.layer = layer.info.name;
    occ.family = layer.info.family;
    occ.total = layer.size();
    occ.owned.assign(tasks_.size(), 0);
    for (Owner o : layer.owner) {
      if (o == kFree)
        ++occ.free;
      else if (o <= tasks_.size())
        ++occ.owned[o - 1];
    }
    out.push_back(std::move(occ));
  }
  return out;
}

void ParamStore::check_partition() const {
  for (const auto& occ : occupancy()) {
    std::size_t sum = occ.free;
    for (auto c : occ.owned) sum += c;
    if (sum != occ.total)
      throw ContractError("ownership of layer '" + occ.layer + "' is not a partition (" + std::to_string(sum) +
                          " of " + std::to_string(occ.total) + " scalars accounted for)");
  }
}

TaskView::TaskView(const ParamStore& store, const TaskRecord& record, bool ignore_ownership)
    : store_(store), record_(record), ignore_ownership_(ignore_ownership), norms_(record.norms) {
  if (!ignore_ownership_) {
    for (const auto& [name, _] : record.pick) {
      const auto& layer = store.layer(name);
      std::vector<Real> gate(layer.size());
      for (std::size_t i = 0; i < layer.size(); ++i)
        gate[i] = participates(layer.owner[i], record.id, record.picks(name, i)) ? Real(1) : Real(0);
      gates_.emplace(name, std::move(gate));
    }
  }
}

Var TaskView::tensor(Graph& g, const std::string& name) {
  if (store_.has_layer(name)) {
    const auto& layer = store_.layer(name);
    if (!family_used_by(layer.info.family, record_.spec.mode))
      throw LookupError("layer '" + name + "' is not used by task " + std::to_string(record_.id));
    GatedWeight w;
    w.value = layer.value;
    w.out = layer.dim0();
    w.in = layer.dim1();
    w.taps = layer.info.taps;
    if (!ignore_ownership_) w.gate = gates_.at(name);
    return g.weight(w);
  }
  auto it = record_.exclusive.find(name);
  if (it == record_.exclusive.end())
    throw LookupError("task " + std::to_string(record_.id) + " has no tensor '" + name + "'");
  return g.constant(it->second);
}

NormStats& TaskView::norm(const std::string& name) {
  auto it = norms_.find(name);
  if (it == norms_.end()) throw LookupError("task " + std::to_string(record_.id) + " has no norm layer '" + name + "'");
  return it->second;
}

std::vector<Real> TaskView::effective(const std::string& layer) const {
  const auto& l = store_.layer(layer);
  std::vector<Real> out(l.value);
  if (ignore_ownership_) return out;
  const auto& gate = gates_.at(layer);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gate[i];
  return out;
}

std::uint64_t fingerprint_bytes(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
  for (std::size_t i = 0; i < t.data.size() * sizeof(Real); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor task_forward(const ParamStore& store, const TaskRecord& record, const Tensor& x, bool ignore_ownership,
                    int batch_size) {
  if (batch_size < 1) throw ContractError("task_forward: batch size must be positive");
  TaskView view(store, record, ignore_ownership);
  Tensor out;
  std::vector<Tensor> parts;
  for (int start = 0; start < x.n; start += batch_size) {
    const int count = std::min(batch_size, x.n - start);
    Tensor batch(count, x.c, x.l);
    const std::size_t stride = static_cast<std::size_t>(x.c) * x.l;
    std::copy_n(x.data.begin() + start * stride, count * stride, batch.data.begin());
    Graph g;
    NetContext ctx(g, view, NormMode::Eval);
    Var y = network_forward(ctx, store.config(), record.spec.mode, g.constant(std::move(batch)));
    const Tensor& yv = y.value();
    if (out.empty()) out = Tensor(x.n, yv.c, yv.l);
    std::copy(yv.data.begin(), yv.data.end(), out.data.begin() + start * static_cast<std::size_t>(yv.c) * yv.l);
  }
  return out;
}

ECGCL_NAMESPACE_END
