// ecgcl: generate synthetic data, run continual-learning sequences and
// baselines, evaluate checkpoints and export ownership masks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "ecgcl/checkpoint.hpp"
#include "ecgcl/config.hpp"
#include "ecgcl/csv_io.hpp"
#include "ecgcl/engine.hpp"
#include "ecgcl/error.hpp"
#include "ecgcl/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecgcl;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCapacity = 3, kIo = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

SequenceConfig load_config(const Common& c) {
  SequenceConfig cfg = load_sequence_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.deterministic) cfg.deterministic = true;
  return cfg;
}

std::string report_name(const MetricsReport& r) { return fmt::format("task{}_{}.json", r.task_id, r.task); }

/// One row per task; identical columns for every mode so tables can be joined.
std::string summary_csv(const std::string& mode, const SequenceResult& r) {
  std::string out = "mode,task_id,task,task_mode,metric,after_task,final,parameter_count,storage_bytes\n";
  for (std::size_t k = 0; k < r.final.size(); ++k) {
    const auto& a = r.after_task[k];
    const auto& f = r.final[k];
    out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{},{}\n", mode, f.task_id, f.task, to_string(f.mode),
                       f.mode == Mode::Seg ? "f1" : "macro_auc", a.primary(), f.primary(), f.parameter_count,
                       r.storage_bytes);
  }
  return out;
}

void write_results(const fs::path& out, const std::string& mode, const SequenceResult& result,
                   const SequenceConfig& cfg) {
  for (const auto& r : result.final) write_json(out / "reports" / report_name(r), r.to_json());
  write_json(out / "sequence.json", to_json(result));
  write_json(out / "run_config.json", to_json(resolve_seeds(cfg)));
  write_text(out / "summary.csv", summary_csv(mode, result));
}

EpochHook progress() {
  return [](const LrLogEntry& e) {
    spdlog::info("task {} {} epoch {} lr {:.3g} loss {:.5f}", e.task, e.phase, e.epoch, e.lr, e.loss);
  };
}

int cmd_generate(const Common& c) {
  const SequenceConfig cfg = load_config(c);
  const fs::path out = c.out;
  json manifest;
  manifest["seed"] = cfg.seed;
  json tasks = json::array();
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    const auto& t = cfg.tasks[k];
    const auto records = task_records(cfg, k);
    const auto files = save_csv(records, out / t.spec.name, t.spec.name);
    json balance = json::object();
    if (t.spec.mode == Mode::Cls) {
      const auto& names = t.source.synth ? t.source.synth->classes : std::vector<std::string>{};
      std::vector<int> counts(t.spec.classes, 0);
      for (const auto& r : records)
        for (int l : r.labels) ++counts.at(l);
      for (int i = 0; i < t.spec.classes; ++i)
        balance[i < static_cast<int>(names.size()) ? names[i] : std::to_string(i)] = counts[i];
    }
    std::set<std::string> patients;
    for (const auto& r : records) patients.insert(r.patient_id);
    json files_j = json::array();
    for (const auto& f : files) files_j.push_back(fs::relative(f, out).generic_string());
    tasks.push_back({{"name", t.spec.name},
                     {"mode", to_string(t.spec.mode)},
                     {"leads", t.spec.leads},
                     {"classes", t.spec.classes},
                     {"records", records.size()},
                     {"patients", patients.size()},
                     {"class_balance", balance},
                     {"files", files_j}});
    spdlog::info("task '{}': {} records written to {}", t.spec.name, records.size(), (out / t.spec.name).string());
  }
  manifest["tasks"] = tasks;
  write_json(out / "manifest.json", manifest);
  return kOk;
}

int cmd_train_sequence(const Common& c) {
  const SequenceConfig cfg = load_config(c);
  const fs::path out = c.out;
  fs::create_directories(out);
  const auto plans = build_plans(cfg);
  ParamStore store(cfg.encoder, cfg.seed);
  const SequenceResult result = run_sequence(plans, store, cfg.schedule, cfg.engine_options(), progress());
  for (std::size_t k = 0; k < result.occupancy.size(); ++k)
    std::cout << fmt::format("occupancy after task {} ('{}'):\n", k + 1, plans[k].spec.name)
              << occupancy_table(result.occupancy[k]) << '\n';
  save_checkpoint(store, result.schedule, out / "checkpoint.ecgcl");
  write_results(out, "cl", result, cfg);
  for (const auto& r : result.final)
    std::cout << fmt::format("task {} {:<16} {:<4} {:.4f}\n", r.task_id, r.task, to_string(r.mode), r.primary());
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  int task = 0;
  std::string data;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const TaskRecord& rec = ck.store.task(a.task);
  EngineOptions options;
  options.deterministic = true;

  const std::uint64_t replay = fingerprint_bytes(task_forward(ck.store, rec, rec.probe));
  const bool match = replay == rec.fingerprint;
  std::cout << fmt::format("task {} '{}': fingerprint {:016x} stored {:016x} {}\n", rec.id, rec.spec.name, replay,
                           rec.fingerprint, match ? "match" : "MISMATCH");

  std::optional<TaskData> data;
  if (!a.data.empty()) {
    PreprocessConfig pre;
    if (!c.config.empty()) pre = load_config(c).preprocess;
    data = records_to_data(load_csv(a.data), pre, rec.spec.mode, rec.spec.classes);
  } else if (!c.config.empty()) {
    const SequenceConfig cfg = load_config(c);
    const std::size_t k = static_cast<std::size_t>(a.task) - 1;
    if (k >= cfg.tasks.size()) throw LookupError("config has no task " + std::to_string(a.task));
    data = build_task_data(cfg, k, task_records(cfg, k)).test;
  }
  if (data) {
    if (data->size() == 0) throw ConfigError("evaluation data has no complete window");
    const MetricsReport rep = evaluate(ck.store, rec, *data, options);
    std::cout << fmt::format("task {} {} {:.4f}\n", rep.task_id, rep.mode == Mode::Seg ? "f1" : "macro_auc",
                             rep.primary());
    if (!c.out.empty()) write_json(c.out, rep.to_json());
  }
  return match ? kOk : kFailure;
}

int cmd_baselines(const Common& c, const std::string& mode_name) {
  const SequenceConfig cfg = load_config(c);
  const Baseline mode = baseline_from_string(mode_name);
  const auto plans = build_plans(cfg);
  const SequenceResult result = run_baseline(plans, cfg.encoder, mode, cfg.engine_options(), progress());
  write_results(c.out, to_string(mode), result, cfg);
  for (std::size_t k = 0; k < result.final.size(); ++k)
    std::cout << fmt::format("task {} {:<16} after {:.4f} final {:.4f}\n", k + 1, result.final[k].task,
                             result.after_task[k].primary(), result.final[k].primary());
  std::cout << fmt::format("storage bytes: {}\n", result.storage_bytes);
  return kOk;
}

int cmd_export_masks(const std::string& checkpoint, const std::string& out) {
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  export_masks_csv(ck.store, out);
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const CapacityError& e) {
    std::cerr << "capacity exhausted in layer '" << e.layer() << "': " << e.what() << '\n';
    return kCapacity;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kConfig;
  } catch (const LookupError& e) {
    std::cerr << "lookup error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ecgcl"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"ECG continual learning: multi-resolution encoder with per-task weight ownership"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  Common common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "Sequence config (JSON)")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_flag("--deterministic", common.deterministic, "Zero runtimes so reports are byte-identical");
  };

  auto* gen = app.add_subcommand("generate", "Write the synthetic records of every task as CSV plus a manifest");
  add_common(gen, true);
  gen->add_option("--out", common.out, "Output directory")->required();

  auto* train = app.add_subcommand("train-sequence", "Train, prune and retrain every task in order");
  add_common(train, true);
  train->add_option("--out", common.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Replay a task's fingerprint and evaluate it from a checkpoint");
  add_common(eval, false);
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("--task", ev.task, "Task id (1-based)")->required();
  eval->add_option("--data", ev.data, "CSV record file or directory");
  eval->add_option("--out", common.out, "Report JSON path");

  std::string baseline = "scratch";
  auto* base = app.add_subcommand("baselines", "Scratch or finetune runs of a sequence");
  add_common(base, true);
  base->add_option("--mode", baseline, "scratch | finetune")->check(CLI::IsMember({"scratch", "finetune"}));
  base->add_option("--out", common.out, "Output directory")->required();

  std::string mask_ck;
  auto* masks = app.add_subcommand("export-masks", "Per-layer ownership histogram as CSV");
  masks->add_option("--checkpoint", mask_ck, "Checkpoint file")->required();
  masks->add_option("--out", common.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);
  spdlog::debug("{} worker thread(s)", thread_count());

  if (*gen) return guarded([&] { return cmd_generate(common); });
  if (*train) return guarded([&] { return cmd_train_sequence(common); });
  if (*eval) return guarded([&] { return cmd_eval(common, ev); });
  if (*base) return guarded([&] { return cmd_baselines(common, baseline); });
  if (*masks) return guarded([&] { return cmd_export_masks(mask_ck, common.out); });
  return kFailure;
}
