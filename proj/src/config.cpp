#include "ecgcl/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "ecgcl/csv_io.hpp"
#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

using nlohmann::json;

namespace {

/// Object reader that remembers which keys were read so that leftovers can
/// be reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config: '" + where + "' " + what);
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    if (!has(key)) fail(sub(key), "is required");
    return j_.at(key);
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double num(const char* key, double fallback) { return has(key) ? as_num(at(key), sub(key)) : fallback; }

  int integer(const char* key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_integer()) fail(sub(key), "must be an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(sub(key), "is out of range");
    return static_cast<int>(x);
  }

  std::uint64_t u64(const char* key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(sub(key), "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const char* key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) fail(sub(key), "must be true or false");
    return v.get<bool>();
  }

  std::string str(const char* key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_string()) fail(sub(key), "must be a string");
    return v.get<std::string>();
  }

  std::vector<std::string> strings(const char* key, std::vector<std::string> fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_array()) fail(sub(key), "must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(sub(key), "must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::vector<double> numbers(const char* key) {
    if (!has(key)) return {};
    const json& v = at(key);
    if (!v.is_array()) fail(sub(key), "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(as_num(e, sub(key)));
    return out;
  }

  void done() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) fail(sub(key), "is not a recognised key");
  }

 private:
  static double as_num(const json& v, const std::string& where) {
    if (!v.is_number()) fail(where, "must be a number");
    return v.get<double>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("config:", 0) == 0) throw;
    throw ConfigError("config: '" + where + "' " + msg);
  }
}

EncoderConfig parse_encoder(const json& j, const std::string& path) {
  Obj o(j, path);
  EncoderConfig e;
  e.base_channels = o.integer("base_channels", e.base_channels);
  e.blocks_per_stage = o.integer("blocks_per_stage", e.blocks_per_stage);
  e.kernel_size = o.integer("kernel_size", e.kernel_size);
  o.done();
  wrap(path, [&] { e.validate(); return 0; });
  return e;
}

OptimConfig parse_optim(const json& j, const std::string& path) {
  Obj o(j, path);
  OptimConfig c;
  if (o.has("optimizer")) c.optimizer = wrap(o.sub("optimizer"), [&] { return optimizer_from_string(o.str("optimizer", "")); });
  c.base_lr = o.num("base_lr", c.base_lr);
  c.momentum = o.num("momentum", c.momentum);
  c.beta1 = o.num("beta1", c.beta1);
  c.beta2 = o.num("beta2", c.beta2);
  c.adam_eps = o.num("adam_eps", c.adam_eps);
  c.batch_size = o.integer("batch_size", c.batch_size);
  c.epochs = o.integer("epochs", c.epochs);
  c.warmup_epochs = o.integer("warmup_epochs", c.warmup_epochs);
  c.warmup_start_lr = o.num("warmup_start_lr", c.warmup_start_lr);
  c.halve_every = o.integer("halve_every", c.halve_every);
  o.done();
  wrap(path, [&] { c.validate(); return 0; });
  return c;
}

SourceConfig parse_source(const json& j, const std::string& path, const TaskSpec& spec) {
  Obj o(j, path);
  SourceConfig s;
  if (o.has("path")) s.path = o.str("path", "");
  if (o.has("synth")) {
    Obj y(o.at("synth"), o.sub("synth"));
    LabelledSynthConfig l;
    SynthConfig& b = l.base;
    b.fs = y.num("fs", b.fs);
    b.duration = y.num("duration", b.duration);
    b.leads = y.integer("leads", spec.leads);
    b.hr_min = y.num("hr_min", b.hr_min);
    b.hr_max = y.num("hr_max", b.hr_max);
    if (y.has("rhythm")) b.rhythm = wrap(y.sub("rhythm"), [&] { return rhythm_from_string(y.str("rhythm", "")); });
    b.morphology = y.strings("morphology", b.morphology);
    if (y.has("snr_db")) {
      const json& v = y.at("snr_db");
      if (v.is_null())
        b.snr_db = std::numeric_limits<double>::infinity();
      else if (v.is_number())
        b.snr_db = v.get<double>();
      else
        Obj::fail(y.sub("snr_db"), "must be a number or null (noiseless)");
    }
    if (y.has("seed")) b.seed = y.u64("seed", 0);
    b.records = y.integer("records", b.records);
    b.records_per_patient = y.integer("records_per_patient", b.records_per_patient);
    b.patient_prefix = y.str("patient_prefix", b.patient_prefix);
    l.classes = y.strings("classes", {});
    l.prevalence = y.num("prevalence", l.prevalence);
    y.done();
    if (b.leads != spec.leads) Obj::fail(o.sub("synth.leads"), "differs from the task lead count");
    if (spec.mode == Mode::Cls) {
      wrap(o.sub("synth"), [&] { l.validate(); return 0; });
      if (static_cast<int>(l.classes.size()) != spec.classes)
        Obj::fail(o.sub("synth.classes"), "must list exactly 'classes' class names");
    } else {
      if (!l.classes.empty()) Obj::fail(o.sub("synth.classes"), "is only valid for classification tasks");
      wrap(o.sub("synth"), [&] { b.validate(); return 0; });
    }
    s.synth = l;
  }
  o.done();
  if (s.synth.has_value() == s.path.has_value()) Obj::fail(path, "needs exactly one of 'synth' or 'path'");
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::size_t k) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (k + 1);
  x ^= x >> 31;
  return x * 0xBF58476D1CE4E5B9ULL;
}

}  // namespace

EngineOptions SequenceConfig::engine_options() const {
  EngineOptions o;
  o.pick = pick;
  o.pick_epochs = pick_epochs;
  o.pick_lr = pick_lr;
  o.deterministic = deterministic;
  o.seed = seed;
  return o;
}

SequenceConfig parse_sequence_config(const json& j) {
  Obj o(j, "");
  SequenceConfig c;
  c.seed = o.u64("seed", c.seed);
  c.deterministic = o.boolean("deterministic", c.deterministic);
  if (o.has("encoder")) c.encoder = parse_encoder(o.at("encoder"), "encoder");
  if (o.has("pick")) c.pick = wrap("pick", [&] { return pick_mode_from_string(o.str("pick", "")); });
  c.pick_epochs = o.integer("pick_epochs", c.pick_epochs);
  if (c.pick_epochs < 0) Obj::fail("pick_epochs", "must be >= 0");
  c.pick_lr = o.num("pick_lr", c.pick_lr);
  if (!(c.pick_lr > 0)) Obj::fail("pick_lr", "must be positive");
  c.schedule = o.numbers("schedule");
  for (double f : c.schedule)
    if (!(f > 0 && f < 1)) Obj::fail("schedule", "entries must lie in (0,1)");
  if (o.has("preprocess")) {
    Obj p(o.at("preprocess"), "preprocess");
    c.preprocess.bandpass = p.boolean("bandpass", c.preprocess.bandpass);
    c.preprocess.lo = p.num("lo", c.preprocess.lo);
    c.preprocess.hi = p.num("hi", c.preprocess.hi);
    c.preprocess.window_seconds = p.num("window_seconds", c.preprocess.window_seconds);
    p.done();
    if (!(c.preprocess.window_seconds > 0)) Obj::fail("preprocess.window_seconds", "must be positive");
  }
  if (o.has("split")) {
    Obj s(o.at("split"), "split");
    c.split.fractions.train = s.num("train", c.split.fractions.train);
    c.split.fractions.val = s.num("val", c.split.fractions.val);
    c.split.fractions.test = s.num("test", c.split.fractions.test);
    c.split.stratify_by_patient = s.boolean("stratify_by_patient", c.split.stratify_by_patient);
    s.done();
    const auto& f = c.split.fractions;
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
      Obj::fail("split", "fractions must be non-negative and sum to 1");
    if (!(f.train > 0) || !(f.test > 0)) Obj::fail("split", "needs non-empty train and test folds");
  }
  const json& tasks = o.at("tasks");
  if (!tasks.is_array() || tasks.empty()) Obj::fail("tasks", "must be a non-empty array");
  if (tasks.size() > static_cast<std::size_t>(kMaxTasks)) Obj::fail("tasks", "has too many entries");
  std::set<std::string> names;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const std::string path = "tasks[" + std::to_string(k) + "]";
    Obj t(tasks[k], path);
    TaskConfig tc;
    tc.spec.name = t.str("name", "task" + std::to_string(k + 1));
    if (!names.insert(tc.spec.name).second) Obj::fail(t.sub("name"), "duplicates an earlier task name");
    if (!t.has("mode")) Obj::fail(t.sub("mode"), "is required");
    tc.spec.mode = wrap(t.sub("mode"), [&] { return mode_from_string(t.str("mode", "")); });
    tc.spec.leads = t.integer("leads", 1);
    if (tc.spec.leads < 1) Obj::fail(t.sub("leads"), "must be positive");
    tc.spec.classes = t.integer("classes", 0);
    if (tc.spec.mode == Mode::Cls && tc.spec.classes < 1) Obj::fail(t.sub("classes"), "must be positive for cls tasks");
    if (tc.spec.mode == Mode::Seg && tc.spec.classes != 0) Obj::fail(t.sub("classes"), "must be 0 for seg tasks");
    tc.source = parse_source(t.at("source"), t.sub("source"), tc.spec);
    if (t.has("optim")) tc.optim = parse_optim(t.at("optim"), t.sub("optim"));
    tc.retrain_epochs = t.integer("retrain_epochs", tc.retrain_epochs);
    if (tc.retrain_epochs < 0) Obj::fail(t.sub("retrain_epochs"), "must be >= 0");
    // echoed by to_json; the retrain rate itself is not configurable
    if (t.has("retrain_lr") && t.num("retrain_lr", 0) != kRetrainLearningRate)
      Obj::fail(t.sub("retrain_lr"), "is fixed at 0.0005");
    t.done();
    c.tasks.push_back(std::move(tc));
  }
  if (!c.schedule.empty() && c.schedule.size() != c.tasks.size())
    Obj::fail("schedule", "must have one entry per task");
  o.done();
  return c;
}

SequenceConfig load_sequence_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  SequenceConfig c = parse_sequence_config(j);
  // relative data paths are resolved against the config file's directory
  for (std::size_t k = 0; k < c.tasks.size(); ++k) {
    auto& src = c.tasks[k].source.path;
    if (!src) continue;
    if (src->is_relative()) src = path.parent_path() / *src;
    if (!std::filesystem::exists(*src))
      throw ConfigError("config: 'tasks[" + std::to_string(k) + "].source.path' does not exist: " + src->string());
  }
  return c;
}

json to_json(const SequenceConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["encoder"] = {{"base_channels", c.encoder.base_channels},
                  {"blocks_per_stage", c.encoder.blocks_per_stage},
                  {"kernel_size", c.encoder.kernel_size}};
  j["pick"] = to_string(c.pick);
  j["pick_epochs"] = c.pick_epochs;
  j["pick_lr"] = c.pick_lr;
  j["schedule"] = c.schedule.empty() ? default_release_schedule(static_cast<int>(c.tasks.size())) : c.schedule;
  j["preprocess"] = {{"bandpass", c.preprocess.bandpass},
                     {"lo", c.preprocess.lo},
                     {"hi", c.preprocess.hi},
                     {"window_seconds", c.preprocess.window_seconds}};
  j["split"] = {{"train", c.split.fractions.train},
                {"val", c.split.fractions.val},
                {"test", c.split.fractions.test},
                {"stratify_by_patient", c.split.stratify_by_patient}};
  json tasks = json::array();
  for (const auto& t : c.tasks) {
    json tj;
    tj["name"] = t.spec.name;
    tj["mode"] = to_string(t.spec.mode);
    tj["leads"] = t.spec.leads;
    tj["classes"] = t.spec.classes;
    tj["retrain_epochs"] = t.retrain_epochs;
    tj["retrain_lr"] = kRetrainLearningRate;
    const auto& o = t.optim;
    tj["optim"] = {{"optimizer", to_string(o.optimizer)}, {"base_lr", o.base_lr},     {"momentum", o.momentum},
                   {"beta1", o.beta1},                     {"beta2", o.beta2},         {"adam_eps", o.adam_eps},
                   {"batch_size", o.batch_size},           {"epochs", o.epochs},       {"warmup_epochs", o.warmup_epochs},
                   {"warmup_start_lr", o.warmup_start_lr}, {"halve_every", o.halve_every}};
    if (t.source.path) {
      tj["source"] = {{"path", t.source.path->string()}};
    } else {
      const auto& l = *t.source.synth;
      const auto& b = l.base;
      json s = {{"fs", b.fs},
                {"duration", b.duration},
                {"leads", b.leads},
                {"hr_min", b.hr_min},
                {"hr_max", b.hr_max},
                {"rhythm", to_string(b.rhythm)},
                {"morphology", b.morphology},
                {"snr_db", std::isfinite(b.snr_db) ? json(b.snr_db) : json(nullptr)},
                {"seed", b.seed},
                {"records", b.records},
                {"records_per_patient", b.records_per_patient},
                {"patient_prefix", b.patient_prefix}};
      if (t.spec.mode == Mode::Cls) {
        s["classes"] = l.classes;
        s["prevalence"] = l.prevalence;
      }
      tj["source"] = {{"synth", s}};
    }
    tasks.push_back(tj);
  }
  j["tasks"] = tasks;
  return j;
}

SequenceConfig resolve_seeds(SequenceConfig cfg) {
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    auto& s = cfg.tasks[k].source.synth;
    if (s && s->base.seed == 0) s->base.seed = derive_seed(cfg.seed, k);
  }
  return cfg;
}

std::vector<EcgRecord> task_records(const SequenceConfig& cfg, std::size_t k) {
  const TaskConfig& t = cfg.tasks.at(k);
  if (t.source.path) return load_csv(*t.source.path);
  LabelledSynthConfig synth = *t.source.synth;
  if (synth.base.seed == 0) synth.base.seed = derive_seed(cfg.seed, k);
  return t.spec.mode == Mode::Cls ? synth_labelled(synth) : synth_ecg(synth.base);
}

TaskData records_to_data(const std::vector<EcgRecord>& records, const PreprocessConfig& pre, Mode mode, int classes) {
  std::vector<EcgWindow> windows;
  for (const auto& r : records) {
    auto w = pre.bandpass ? preprocess(r, pre.window_seconds, pre.lo, pre.hi) : window_and_normalize(r, pre.window_seconds);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  if (windows.empty()) {
    TaskData empty;
    empty.mode = mode;
    empty.classes = mode == Mode::Cls ? classes : 0;
    return empty;
  }
  return make_task_data(windows, mode, classes);
}

TaskData3 build_task_data(const SequenceConfig& cfg, std::size_t k, const std::vector<EcgRecord>& records) {
  const TaskConfig& t = cfg.tasks.at(k);
  const Split s = split(records, cfg.split.fractions, cfg.split.stratify_by_patient, derive_seed(cfg.seed, k) ^ 0x5bd1e995);
  TaskData3 d;
  d.train = records_to_data(s.train, cfg.preprocess, t.spec.mode, t.spec.classes);
  d.val = records_to_data(s.val, cfg.preprocess, t.spec.mode, t.spec.classes);
  d.test = records_to_data(s.test, cfg.preprocess, t.spec.mode, t.spec.classes);
  if (d.train.size() == 0 || d.test.size() == 0)
    throw ConfigError("task '" + t.spec.name + "': train or test fold has no complete window");
  return d;
}

std::vector<TaskPlan> build_plans(const SequenceConfig& cfg) {
  std::vector<TaskPlan> plans;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    const auto& t = cfg.tasks[k];
    TaskPlan p;
    p.spec = t.spec;
    p.optim = t.optim;
    p.retrain_epochs = t.retrain_epochs;
    p.data = build_task_data(cfg, k, task_records(cfg, k));
    plans.push_back(std::move(p));
  }
  return plans;
}

ECGCL_NAMESPACE_END
