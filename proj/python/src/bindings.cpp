#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"

#include "ecgcl/checkpoint.hpp"
#include "ecgcl/config.hpp"
#include "ecgcl/csv_io.hpp"
#include "ecgcl/engine.hpp"
#include "ecgcl/filter.hpp"
#include "ecgcl/metrics.hpp"
#include "ecgcl/network.hpp"
#include "ecgcl/synth.hpp"

namespace py = pybind11;
using namespace ecgcl;
using nlohmann::json;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

// JSON crosses the boundary through Python's json module.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  if (py::isinstance<py::str>(o)) return json::parse(o.cast<std::string>());
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Tensor to_tensor(const F32& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (batch, leads, samples) array");
  Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy_n(a.data(), t.size(), t.data.begin());
  return t;
}

py::array_t<float> to_array(const Tensor& t) {
  py::array_t<float> a({t.n, t.c, t.l});
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

py::dict record_dict(const EcgRecord& r) {
  py::array_t<double> sig({r.leads, r.samples()});
  std::copy(r.signal.begin(), r.signal.end(), sig.mutable_data());
  py::dict d;
  d["fs"] = r.fs;
  d["signal"] = sig;
  d["qrs"] = r.qrs;
  d["labels"] = r.labels;
  d["patient_id"] = r.patient_id;
  return d;
}

EcgRecord record_from(double fs, const F64& signal, std::vector<int> qrs, std::vector<int> labels,
                      std::string patient) {
  if (signal.ndim() != 2) throw ShapeError("signal must be (leads, samples)");
  EcgRecord r;
  r.fs = fs;
  r.leads = static_cast<int>(signal.shape(0));
  r.signal.assign(signal.data(), signal.data() + signal.size());
  r.qrs = std::move(qrs);
  r.labels = std::move(labels);
  r.patient_id = std::move(patient);
  r.validate();
  return r;
}

std::vector<std::tuple<int, int>> encoder_shapes(const EncoderConfig& cfg, int leads, int length,
                                                 std::uint64_t seed) {
  ParamStore store(cfg, seed);
  TaskSpec spec{"probe", Mode::Seg, leads, 0};
  const TaskRecord& rec = store.begin_task(spec);
  TaskView view(store, rec, true);
  Graph g;
  NetContext ctx(g, view, NormMode::Eval);
  const BranchSet b = encoder_forward(ctx, cfg, g.constant(Tensor(1, leads, length)));
  std::vector<std::tuple<int, int>> out;
  for (const Var& v : b) out.emplace_back(v.value().c, v.value().l);
  return out;
}

struct Run {
  ParamStore store;
  json result;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ECG continual learning core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_RuntimeError);
  py::register_exception<LookupError>(m, "LookupError", PyExc_KeyError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init([](int c, int blocks, int k) {
             EncoderConfig e{c, blocks, k};
             e.validate();
             return e;
           }),
           py::arg("base_channels") = 8, py::arg("blocks_per_stage") = 4, py::arg("kernel_size") = 3)
      .def_readonly("base_channels", &EncoderConfig::base_channels)
      .def_readonly("blocks_per_stage", &EncoderConfig::blocks_per_stage)
      .def_readonly("kernel_size", &EncoderConfig::kernel_size);

  m.def(
      "parameter_count",
      [](const EncoderConfig& cfg, int leads, const std::string& mode, int classes) {
        return model_parameter_count(cfg, leads, mode_from_string(mode), classes);
      },
      py::arg("config"), py::arg("leads"), py::arg("mode"), py::arg("classes") = 0);
  m.def("encoder_shapes", &encoder_shapes, py::arg("config"), py::arg("leads"), py::arg("length"),
        py::arg("seed") = 0, "(channels, length) of every encoder branch for one input");

  m.def(
      "lr_at",
      [](int epoch, double base_lr, int warmup_epochs, double warmup_start_lr, int halve_every) {
        OptimConfig o;
        o.base_lr = base_lr;
        o.warmup_epochs = warmup_epochs;
        o.warmup_start_lr = warmup_start_lr;
        o.halve_every = halve_every;
        o.validate();
        return lr_at(epoch, o);
      },
      py::arg("epoch"), py::arg("base_lr") = 0.001, py::arg("warmup_epochs") = 5, py::arg("warmup_start_lr") = 1e-6,
      py::arg("halve_every") = 30);
  m.attr("RETRAIN_LR") = kRetrainLearningRate;
  m.def("default_release_schedule", &default_release_schedule, py::arg("tasks"));

  m.def(
      "bandpass",
      [](const F64& x, double fs, double lo, double hi) {
        std::vector<double> y = bandpass(std::span<const double>(x.data(), x.size()), fs, lo, hi);
        return py::array_t<double>(y.size(), y.data());
      },
      py::arg("signal"), py::arg("fs"), py::arg("lo") = 0.5, py::arg("hi") = 45.0);

  m.def(
      "qrs_match",
      [](std::vector<int> pred, std::vector<int> truth, int tol) {
        const MatchCounts c = qrs_match(pred, truth, tol);
        return py::make_tuple(c.tp, c.fp, c.fn);
      },
      py::arg("predicted"), py::arg("truth"), py::arg("tol"), "(tp, fp, fn)");
  m.def(
      "roc_auc", [](std::vector<double> s, std::vector<int> l) { return roc_auc(s, l); }, py::arg("scores"),
      py::arg("labels"));
  m.def(
      "macro_auc",
      [](const std::vector<std::vector<double>>& s, const std::vector<std::vector<int>>& l) {
        return macro_auc(s, l).macro;
      },
      py::arg("scores"), py::arg("labels"), "scores[k][i] and labels[k][i] for class k, sample i");

  m.def(
      "synth_ecg",
      [](int records, double fs, double duration, int leads, const std::string& rhythm,
         std::vector<std::string> morphology, std::optional<double> snr_db, std::uint64_t seed) {
        SynthConfig c;
        c.records = records;
        c.fs = fs;
        c.duration = duration;
        c.leads = leads;
        c.rhythm = rhythm_from_string(rhythm);
        c.morphology = std::move(morphology);
        if (snr_db) c.snr_db = *snr_db;
        c.seed = seed;
        py::list out;
        for (const auto& r : synth_ecg(c)) out.append(record_dict(r));
        return out;
      },
      py::arg("records") = 1, py::arg("fs") = 100.0, py::arg("duration") = 10.0, py::arg("leads") = 1,
      py::arg("rhythm") = "regular", py::arg("morphology") = std::vector<std::string>{"normal"},
      py::arg("snr_db") = py::none(), py::arg("seed") = 0);

  m.def(
      "load_csv",
      [](const std::filesystem::path& p) {
        py::list out;
        for (const auto& r : load_csv(p)) out.append(record_dict(r));
        return out;
      },
      py::arg("path"));
  m.def(
      "save_csv",
      [](double fs, const F64& signal, std::vector<int> qrs, std::vector<int> labels, std::string patient,
         const std::filesystem::path& file) { save_record_csv(record_from(fs, signal, qrs, labels, patient), file); },
      py::arg("fs"), py::arg("signal"), py::arg("qrs"), py::arg("labels"), py::arg("patient_id"), py::arg("file"));

  m.def(
      "parse_config", [](const py::object& cfg) { return to_py(to_json(parse_sequence_config(from_py(cfg)))); },
      py::arg("config"), "Validated config with every default filled in");

  py::class_<ParamStore>(m, "ParamStore")
      .def_property_readonly("task_count", [](const ParamStore& s) { return s.tasks().size(); })
      .def("occupancy",
           [](const ParamStore& s) {
             py::list out;
             for (const auto& o : s.occupancy()) {
               py::dict d;
               d["layer"] = o.layer;
               d["family"] = to_string(o.family);
               d["total"] = o.total;
               d["free"] = o.free;
               d["owned"] = o.owned;
               out.append(d);
             }
             return out;
           })
      .def("check_partition", &ParamStore::check_partition)
      .def("fingerprint", [](const ParamStore& s, int id) { return s.task(id).fingerprint; })
      .def(
          "replay_fingerprint",
          [](const ParamStore& s, int id) {
            const TaskRecord& r = s.task(id);
            return fingerprint_bytes(task_forward(s, r, r.probe));
          },
          "Fingerprint recomputed from the stored probe batch")
      .def(
          "forward",
          [](const ParamStore& s, int id, const F32& x) {
            Tensor out;
            {
              py::gil_scoped_release release;
              out = task_forward(s, s.task(id), to_tensor(x));
            }
            return to_array(out);
          },
          py::arg("task_id"), py::arg("x"))
      .def("save", [](const ParamStore& s, const std::filesystem::path& p) { save_checkpoint(s, {}, p); })
      .def("export_masks", [](const ParamStore& s, const std::filesystem::path& p) { export_masks_csv(s, p); })
      .def("__eq__", [](const ParamStore& a, const ParamStore& b) { return a == b; });

  m.def(
      "load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p).store; }, py::arg("path"));

  m.def(
      "train_sequence",
      [](const py::object& cfg_obj, const std::string& baseline) {
        const SequenceConfig cfg = parse_sequence_config(from_py(cfg_obj));
        Run run{ParamStore(cfg.encoder, cfg.seed), {}};
        {
          py::gil_scoped_release release;
          const auto plans = build_plans(cfg);
          if (baseline.empty())
            run.result = to_json(run_sequence(plans, run.store, cfg.schedule, cfg.engine_options()));
          else
            run.result = to_json(run_baseline(plans, cfg.encoder, baseline_from_string(baseline), cfg.engine_options()));
        }
        return py::make_tuple(std::move(run.store), to_py(run.result));
      },
      py::arg("config"), py::arg("baseline") = "",
      "Runs a sequence config (dict or JSON string). With baseline 'scratch' or 'finetune' the returned store is "
      "unused and empty.");
}
