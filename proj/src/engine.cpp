#include "ecgcl/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

std::string to_string(PickMode p) { return p == PickMode::Trained ? "trained" : "all"; }

PickMode pick_mode_from_string(const std::string& s) {
  if (s == "trained") return PickMode::Trained;
  if (s == "all") return PickMode::All;
  throw ConfigError("unknown pick mode '" + s + "' (expected trained or all)");
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Train: return "train";
    case Phase::Retrain: return "retrain";
    case Phase::Finetune: return "finetune";
  }
  return "?";
}

std::string to_string(Baseline b) { return b == Baseline::Scratch ? "scratch" : "finetune"; }

Baseline baseline_from_string(const std::string& s) {
  if (s == "scratch") return Baseline::Scratch;
  if (s == "finetune") return Baseline::Finetune;
  throw ConfigError("unknown baseline '" + s + "' (expected scratch or finetune)");
}

std::vector<double> default_release_schedule(int tasks) {
  if (tasks < 1) throw ConfigError("a sequence needs at least one task");
  std::vector<double> out;
  for (int k = 1; k <= tasks; ++k) out.push_back(k < tasks ? 1.0 - 1.0 / (tasks - k + 1) : 0.5);
  return out;
}

namespace {

/// Weights of the open task during training: shared kernels are gated by
/// phase and ownership, exclusive tensors are ordinary parameters.
class TrainingSession : public WeightSource {
 public:
  TrainingSession(ParamStore& store, TaskRecord& record, Phase phase, bool scoring, double score_init)
      : store_(store), record_(record), phase_(phase) {
    const int t = record.id;
    for (auto& layer : store.layers()) {
      if (!family_used_by(layer.info.family, record.spec.mode)) continue;
      LayerState st;
      st.layer = &layer;
      const std::size_t n = layer.size();
      st.grad.assign(n, Real(0));
      st.trainable.assign(n, 0);
      st.gate.assign(n, Real(0));
      st.pickable.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const Owner o = layer.owner[i];
        const bool earlier = o != kFree && o < t;
        switch (phase) {
          case Phase::Train: st.trainable[i] = o == kFree; break;
          case Phase::Retrain: st.trainable[i] = o == t; break;
          case Phase::Finetune: st.trainable[i] = 1; break;
        }
        const bool live = phase == Phase::Finetune || st.trainable[i] || (earlier && record.picks(layer.info.name, i));
        st.gate[i] = live ? Real(1) : Real(0);
        st.pickable[i] = scoring && earlier;
      }
      if (scoring) {
        st.score.assign(n, Real(0));
        st.score_grad.assign(n, Real(0));
        for (std::size_t i = 0; i < n; ++i)
          if (st.pickable[i]) st.score[i] = static_cast<Real>(score_init);
      }
      layers_.emplace(layer.info.name, std::move(st));
    }
    for (auto& [name, value] : record.exclusive) params_.emplace(name, Parameter(value));
  }

  Var tensor(Graph& g, const std::string& name) override {
    if (auto it = layers_.find(name); it != layers_.end()) {
      LayerState& st = it->second;
      GatedWeight w;
      w.value = st.layer->value;
      w.out = st.layer->dim0();
      w.in = st.layer->dim1();
      w.taps = st.layer->info.taps;
      w.gate = st.gate;
      w.grad = st.grad;
      w.trainable = st.trainable;
      if (!st.score.empty()) {
        w.score = st.score;
        w.score_grad = st.score_grad;
        w.pickable = st.pickable;
      }
      return g.weight(w);
    }
    auto it = params_.find(name);
    if (it == params_.end()) throw LookupError("task '" + record_.spec.name + "' has no tensor '" + name + "'");
    return g.parameter(it->second);
  }

  NormStats& norm(const std::string& name) override {
    auto it = record_.norms.find(name);
    if (it == record_.norms.end()) throw LookupError("no norm layer '" + name + "'");
    return it->second;
  }

  void register_groups(Optimizer& weights, Optimizer* scores) {
    for (auto& [_, st] : layers_) {
      weights.add_group({st.layer->value, st.grad, st.trainable});
      if (scores && !st.score.empty()) scores->add_group({st.score, st.score_grad, st.pickable});
    }
    for (auto& [_, p] : params_) weights.add_group({p.value.data, p.grad.data, p.trainable});
  }

  void zero_grads() {
    for (auto& [_, st] : layers_) {
      std::fill(st.grad.begin(), st.grad.end(), Real(0));
      std::fill(st.score_grad.begin(), st.score_grad.end(), Real(0));
    }
    for (auto& [_, p] : params_) p.zero_grad();
  }

  bool has_preserved() const {
    for (const auto& [_, st] : layers_)
      if (std::any_of(st.pickable.begin(), st.pickable.end(), [](auto v) { return v != 0; })) return true;
    return false;
  }

  /// Freezes the learned scores into the record's pick mask and stops scoring.
  void fix_mask() {
    for (auto& [name, st] : layers_) {
      if (st.score.empty()) continue;
      auto& mask = record_.pick[name];
      for (std::size_t i = 0; i < st.score.size(); ++i) {
        mask[i] = st.pickable[i] && st.score[i] > Real(0) ? 1 : 0;
        if (st.pickable[i]) st.gate[i] = mask[i] ? Real(1) : Real(0);
      }
      st.score.clear();
      st.score_grad.clear();
    }
  }

  void write_back() {
    for (auto& [name, p] : params_) record_.exclusive[name] = p.value;
  }

 private:
  struct LayerState {
    SharedLayer* layer = nullptr;
    std::vector<Real> grad, gate, score, score_grad;
    std::vector<std::uint8_t> trainable, pickable;
  };
  ParamStore& store_;
  TaskRecord& record_;
  Phase phase_;
  std::map<std::string, LayerState> layers_;
  std::map<std::string, Parameter> params_;
};

std::uint64_t phase_seed(std::uint64_t seed, int task, Phase phase) {
  std::uint64_t x = seed ^ (static_cast<std::uint64_t>(task) << 32) ^ (static_cast<std::uint64_t>(phase) << 56);
  x = (x ^ (x >> 33)) * 0xff51afd7ed558ccdULL;
  x = (x ^ (x >> 33)) * 0xc4ceb9fe1a85ec53ULL;
  return x ^ (x >> 33);
}

void check_data(const TaskRecord& record, const TaskData& data) {
  if (data.size() == 0) throw ConfigError("task '" + record.spec.name + "': empty dataset");
  if (data.mode != record.spec.mode) throw ConfigError("task '" + record.spec.name + "': dataset mode differs from task mode");
  if (data.leads() != record.spec.leads)
    throw LeadMismatchError("task '" + record.spec.name + "': lead adapter 'adapter.w' expects " +
                            std::to_string(record.spec.leads) + " leads, data has " + std::to_string(data.leads()) +
                            " (shape mismatch)");
  if (record.spec.mode == Mode::Cls && data.classes != record.spec.classes)
    throw ConfigError("task '" + record.spec.name + "': dataset has " + std::to_string(data.classes) +
                      " classes, task expects " + std::to_string(record.spec.classes));
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::vector<double> train_phase(ParamStore& store, TaskRecord& record, const TaskData& data, Phase phase,
                                const OptimConfig& optim, int epochs, const std::function<double(int)>& lr_of,
                                const EngineOptions& options, std::vector<LrLogEntry>* log, const EpochHook& hook) {
  optim.validate();
  if (record.complete) throw ContractError("task " + std::to_string(record.id) + " is already complete");
  check_data(record, data);
  const bool want_scores = phase == Phase::Train && options.pick == PickMode::Trained && options.pick_epochs > 0;
  TrainingSession session(store, record, phase, want_scores, options.pick_init);
  bool scoring = want_scores && session.has_preserved();
  if (want_scores && !scoring) session.fix_mask();

  Optimizer opt(optim);
  OptimConfig score_cfg;
  score_cfg.optimizer = OptimizerKind::Adam;
  Optimizer score_opt(score_cfg);
  session.register_groups(opt, scoring ? &score_opt : nullptr);

  std::mt19937_64 rng(phase_seed(options.seed, record.id, phase));
  std::vector<int> order(data.size());
  std::vector<double> losses;
  const std::string phase_name = phase == Phase::Retrain ? "retrain" : "train";
  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (scoring && epoch == options.pick_epochs) {
      session.fix_mask();
      scoring = false;
    }
    const double lr = lr_of(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (int start = 0; start < data.size(); start += optim.batch_size) {
      const int count = std::min(optim.batch_size, data.size() - start);
      // batch statistics of a single example are degenerate
      if (count < 2 && data.size() >= 2) continue;
      const TaskData batch = data.subset(std::span<const int>(order).subspan(start, count));
      session.zero_grads();
      Graph g;
      NetContext ctx(g, session, NormMode::Train);
      Var y = network_forward(ctx, store.config(), record.spec.mode, g.constant(batch.x));
      Var loss = bce_loss(y, batch.y);
      g.backward(loss);
      opt.step(lr);
      if (scoring) score_opt.step(options.pick_lr);
      total += loss.value().data[0];
      ++batches;
    }
    const double mean = batches ? total / batches : 0.0;
    losses.push_back(mean);
    LrLogEntry entry{record.id, phase_name, epoch, lr, mean};
    if (log) log->push_back(entry);
    if (hook) hook(entry);
  }
  if (scoring) session.fix_mask();
  session.write_back();
  return losses;
}

std::vector<double> train_task(ParamStore& store, TaskRecord& record, const TaskData& data, const OptimConfig& optim,
                               const EngineOptions& options, std::vector<LrLogEntry>* log, const EpochHook& hook) {
  if (options.pick == PickMode::All) set_pick_all(store, record);
  return train_phase(store, record, data, Phase::Train, optim, optim.epochs,
                     [&](int e) { return lr_at(e, optim); }, options, log, hook);
}

void set_pick_all(const ParamStore& store, TaskRecord& record) {
  for (auto& [name, mask] : record.pick) {
    const auto& layer = store.layer(name);
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = layer.owner[i] != kFree && layer.owner[i] < record.id ? 1 : 0;
  }
}

void prune(ParamStore& store, TaskRecord& record, double fraction) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("prune fraction must lie in (0,1)");
  if (record.complete) throw ContractError("prune: task " + std::to_string(record.id) + " is already complete");
  const auto t = static_cast<Owner>(record.id);
  for (auto& layer : store.layers()) {
    if (!family_used_by(layer.info.family, record.spec.mode)) continue;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < layer.size(); ++i)
      if (layer.owner[i] == kFree) pool.push_back(i);
    if (pool.size() < 2) {
      spdlog::warn("prune: layer '{}' has {} trainable scalar(s); kept without pruning", layer.info.name, pool.size());
      for (auto i : pool) layer.owner[i] = t;
      continue;
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(layer.value[a]) < std::abs(layer.value[b]); });
    const auto release = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
    for (std::size_t r = 0; r < pool.size(); ++r) {
      if (r < release)
        layer.value[pool[r]] = Real(0);
      else
        layer.owner[pool[r]] = t;
    }
    const double kept = static_cast<double>(pool.size() - release) / static_cast<double>(pool.size());
    if (std::abs(kept - (1.0 - fraction)) > 1.0 / static_cast<double>(pool.size()) + 1e-12)
      throw ContractError("prune: layer '" + layer.info.name + "' missed its sparsity target");
  }
  record.release_fraction = fraction;
}

std::vector<double> retrain(ParamStore& store, TaskRecord& record, const TaskData& data, const OptimConfig& optim,
                            int epochs, const EngineOptions& options, std::vector<LrLogEntry>* log,
                            const EpochHook& hook, double lr) {
  return train_phase(store, record, data, Phase::Retrain, optim, epochs, [lr](int) { return lr; }, options, log, hook);
}

Tensor probe_batch(const TaskData& data, int probe_size) {
  std::vector<int> idx(std::min(probe_size, data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return data.subset(idx).x;
}

void finalize_task(const ParamStore& store, TaskRecord& record, const Tensor& probe, bool ignore_ownership) {
  record.probe = probe;
  record.fingerprint = probe.empty() ? 0 : fingerprint_bytes(task_forward(store, record, probe, ignore_ownership));
  record.complete = true;
}

MetricsReport evaluate(const ParamStore& store, const TaskRecord& record, const TaskData& data,
                       const EngineOptions& options, bool ignore_ownership) {
  check_data(record, data);
  const Tensor out = task_forward(store, record, data.x, ignore_ownership, options.eval_batch);
  MetricsReport report;
  report.task = record.spec.name;
  report.task_id = record.id;
  report.mode = record.spec.mode;
  report.parameter_count =
      model_parameter_count(store.config(), record.spec.leads, record.spec.mode, record.spec.classes);
  if (record.spec.mode == Mode::Seg) {
    const int tol = default_match_tolerance(data.fs);
    MatchCounts total;
    for (int i = 0; i < out.n; ++i) {
      const auto peaks = seg_predictions(std::span<const Real>(out.row(i, 0), out.l));
      const auto m = qrs_match(peaks, data.qrs[i], tol);
      total.tp += m.tp;
      total.fp += m.fp;
      total.fn += m.fn;
    }
    report.segmentation = SegMetrics::from_counts(total.tp, total.fp, total.fn);
  } else {
    std::vector<std::vector<double>> scores(out.c, std::vector<double>(out.n));
    std::vector<std::vector<int>> labels(out.c, std::vector<int>(out.n));
    for (int k = 0; k < out.c; ++k)
      for (int i = 0; i < out.n; ++i) {
        scores[k][i] = out(i, k, 0);
        labels[k][i] = data.y(i, k, 0) > Real(0.5) ? 1 : 0;
      }
    const AucResult auc = macro_auc(scores, labels);
    report.classification = ClsMetrics{auc.per_class, auc.excluded, auc.macro};
  }
  return report;
}

std::uint64_t storage_bytes(const ParamStore& store) {
  std::uint64_t bytes = 0;
  for (const auto& layer : store.layers()) bytes += layer.size() * 4 + layer.size();  // values + owner labels
  for (const auto& t : store.tasks()) {
    for (const auto& [_, v] : t.exclusive) bytes += v.size() * 4;
    for (const auto& [_, n] : t.norms) bytes += n.mean.size() * 8;
    for (const auto& [_, m] : t.pick) bytes += (m.size() + 7) / 8;
  }
  return bytes;
}

std::string occupancy_table(const std::vector<LayerOccupancy>& occ) {
  std::ostringstream out;
  std::size_t tasks = occ.empty() ? 0 : occ.front().owned.size();
  out << fmt::format("{:<28} {:>8} {:>8}", "layer", "total", "free");
  for (std::size_t t = 1; t <= tasks; ++t) out << fmt::format(" {:>8}", "task" + std::to_string(t));
  out << '\n';
  for (const auto& o : occ) {
    out << fmt::format("{:<28} {:>8} {:>8}", o.layer, o.total, o.free);
    for (auto c : o.owned) out << fmt::format(" {:>8}", c);
    out << '\n';
  }
  return out.str();
}

namespace {

std::size_t total_free(const ParamStore& store) {
  std::size_t n = 0;
  for (const auto& l : store.layers()) n += l.count(kFree);
  return n;
}

}  // namespace

SequenceResult run_sequence(const std::vector<TaskPlan>& plans, ParamStore& store, std::vector<double> schedule,
                            const EngineOptions& options, const EpochHook& hook) {
  if (plans.empty()) throw ConfigError("a sequence needs at least one task");
  if (schedule.empty()) schedule = default_release_schedule(static_cast<int>(plans.size()));
  if (schedule.size() < plans.size())
    throw ConfigError("sparsity schedule has " + std::to_string(schedule.size()) + " entries for " +
                      std::to_string(plans.size()) + " tasks");
  for (double f : schedule)
    if (!(f > 0 && f < 1)) throw ConfigError("every release fraction must lie in (0,1)");

  SequenceResult result;
  result.schedule = schedule;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const TaskPlan& plan = plans[k];
    const double started = now_seconds();
    int id = 0;
    try {
      id = store.begin_task(plan.spec).id;
    } catch (const CapacityError& e) {
      throw CapacityError(std::string(e.what()) + "\n" + occupancy_table(store.occupancy()), e.layer());
    }
    TaskRecord& rec = store.task(id);
    spdlog::info("task {} '{}' ({}, {} leads): train {} epochs, release {:.3f}", id, plan.spec.name,
                 to_string(plan.spec.mode), plan.spec.leads, plan.optim.epochs, schedule[k]);
    const std::size_t free_before = total_free(store);
    train_task(store, rec, plan.data.train, plan.optim, options, &result.lr_log, hook);
    prune(store, rec, schedule[k]);
    store.check_partition();
    if (total_free(store) > free_before) throw ContractError("FREE capacity grew during a prune");
    result.occupancy.push_back(store.occupancy());
    retrain(store, rec, plan.data.train, plan.optim, plan.retrain_epochs, options, &result.lr_log, hook);
    finalize_task(store, rec, probe_batch(plan.data.test, options.probe_size));
    MetricsReport rep = evaluate(store, rec, plan.data.test, options);
    rep.runtime_seconds = options.deterministic ? 0.0 : now_seconds() - started;
    spdlog::info("task {} done: primary metric {:.4f}", id, rep.primary());
    result.after_task.push_back(std::move(rep));
  }
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const TaskRecord& rec = store.task(static_cast<int>(k) + 1);
    result.final.push_back(evaluate(store, rec, plans[k].data.test, options));
    if (fingerprint_bytes(task_forward(store, rec, rec.probe)) != rec.fingerprint)
      spdlog::error("task {} no longer reproduces its fingerprint", rec.id);
  }
  result.storage_bytes = storage_bytes(store);
  return result;
}

SequenceResult run_baseline(const std::vector<TaskPlan>& plans, const EncoderConfig& cfg, Baseline mode,
                            const EngineOptions& options, const EpochHook& hook) {
  if (plans.empty()) throw ConfigError("a sequence needs at least one task");
  SequenceResult result;
  std::vector<ParamStore> stores;
  if (mode == Baseline::Finetune) stores.emplace_back(cfg, options.seed);
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const TaskPlan& plan = plans[k];
    const double started = now_seconds();
    if (mode == Baseline::Scratch) stores.emplace_back(cfg, options.seed);
    ParamStore& store = stores.back();
    TaskRecord& rec = store.begin_task(plan.spec, false, mode == Baseline::Scratch);
    const int id = rec.id;
    spdlog::info("{} task {} '{}': {} + {} epochs", to_string(mode), k + 1, plan.spec.name, plan.optim.epochs,
                 plan.retrain_epochs);
    train_phase(store, rec, plan.data.train, Phase::Finetune, plan.optim, plan.optim.epochs,
                [&](int e) { return lr_at(e, plan.optim); }, options, &result.lr_log, hook);
    train_phase(store, rec, plan.data.train, Phase::Finetune, plan.optim, plan.retrain_epochs,
                [](int) { return kRetrainLearningRate; }, options, &result.lr_log, hook);
    finalize_task(store, rec, probe_batch(plan.data.test, options.probe_size), true);
    MetricsReport rep = evaluate(store, store.task(id), plan.data.test, options, true);
    rep.task_id = static_cast<int>(k) + 1;
    rep.runtime_seconds = options.deterministic ? 0.0 : now_seconds() - started;
    result.after_task.push_back(std::move(rep));

    if (mode == Baseline::Finetune) {
      // earlier tasks see the current shared state; only adapter and head stay theirs
      const TaskRecord& latest = store.task(id);
      for (int j = 1; j < id; ++j) {
        TaskRecord& old = store.task(j);
        for (auto& [name, value] : old.exclusive) {
          if (name.rfind("adapter.", 0) == 0 || name.rfind("head.", 0) == 0) continue;
          if (auto it = latest.exclusive.find(name); it != latest.exclusive.end()) value = it->second;
        }
        for (auto& [name, stats] : old.norms)
          if (auto it = latest.norms.find(name); it != latest.norms.end()) stats = it->second;
      }
    }
  }
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const ParamStore& store = mode == Baseline::Scratch ? stores[k] : stores.front();
    const int id = mode == Baseline::Scratch ? 1 : static_cast<int>(k) + 1;
    MetricsReport rep = evaluate(store, store.task(id), plans[k].data.test, options, true);
    rep.task_id = static_cast<int>(k) + 1;
    result.final.push_back(std::move(rep));
  }
  for (const auto& s : stores) result.storage_bytes += storage_bytes(s);
  return result;
}

nlohmann::json to_json(const LrLogEntry& e) {
  return {{"task", e.task}, {"phase", e.phase}, {"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}};
}

nlohmann::json to_json(const SequenceResult& r) {
  nlohmann::json j;
  auto reports = [](const std::vector<MetricsReport>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& rep : v) a.push_back(rep.to_json());
    return a;
  };
  j["after_task"] = reports(r.after_task);
  j["final"] = reports(r.final);
  j["schedule"] = r.schedule;
  j["storage_bytes"] = r.storage_bytes;
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.lr_log) log.push_back(to_json(e));
  j["lr_log"] = log;
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& snapshot : r.occupancy) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& o : snapshot)
      layers.push_back({{"layer", o.layer}, {"family", to_string(o.family)}, {"total", o.total}, {"free", o.free},
                        {"owned", o.owned}});
    occ.push_back(layers);
  }
  j["occupancy"] = occ;
  return j;
}

ECGCL_NAMESPACE_END
