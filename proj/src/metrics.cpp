#include "ecgcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

MatchCounts qrs_match(std::span<const int> predicted, std::span<const int> truth, int tol_samples) {
  if (tol_samples < 0) throw ContractError("qrs_match: negative tolerance");
  MatchCounts counts;
  // truths before `first` are either matched or too early for every later prediction
  std::size_t first = 0;
  for (int p : predicted) {
    while (first < truth.size() && truth[first] < p - tol_samples) ++first;
    if (first < truth.size() && truth[first] <= p + tol_samples) {
      ++counts.tp;
      ++first;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = static_cast<long>(truth.size()) - counts.tp;
  return counts;
}

int default_match_tolerance(double fs) { return static_cast<int>(std::lround(0.075 * fs)); }

std::vector<int> seg_predictions(std::span<const Real> probabilities, int downsample) {
  std::vector<int> peaks;
  const int len = static_cast<int>(probabilities.size());
  int t = 0;
  while (t < len) {
    if (!(probabilities[t] > Real(0.5))) {
      ++t;
      continue;
    }
    const int start = t;
    while (t < len && probabilities[t] > Real(0.5)) ++t;
    const double centroid = 0.5 * (start + (t - 1));
    peaks.push_back(static_cast<int>(std::lround(centroid * downsample)));
  }
  return peaks;
}

SegMetrics SegMetrics::from_counts(long tp, long fp, long fn) {
  SegMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.sen = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.pp = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.f1 = m.sen + m.pp > 0 ? 2.0 * m.sen * m.pp / (m.sen + m.pp) : 0.0;
  return m;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  if (labels.size() != n) throw ShapeError("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks (1-based) over tie groups
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  long positives = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] != 0) {
      pos_rank_sum += rank[k];
      ++positives;
    }
  const long negatives = static_cast<long>(n) - positives;
  if (positives == 0 || negatives == 0) throw ContractError("roc_auc: class has a single label value");
  const double u = pos_rank_sum - 0.5 * static_cast<double>(positives) * static_cast<double>(positives + 1);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

AucResult macro_auc(const std::vector<std::vector<double>>& scores,
                    const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("macro_auc: class count mismatch");
  AucResult result;
  double total = 0;
  int included = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const auto& lab = labels[k];
    const long pos = std::count_if(lab.begin(), lab.end(), [](int v) { return v != 0; });
    if (pos == 0 || pos == static_cast<long>(lab.size())) {
      spdlog::warn("macro_auc: class {} has a single label value; excluded from the macro mean", k);
      result.per_class.emplace_back(std::nullopt);
      result.excluded.push_back(static_cast<int>(k));
      continue;
    }
    const double auc = roc_auc(scores[k], lab);
    result.per_class.emplace_back(auc);
    total += auc;
    ++included;
  }
  result.macro = included > 0 ? total / included : 0.0;
  return result;
}

double MetricsReport::primary() const {
  if (segmentation) return segmentation->f1;
  if (classification) return classification->macro_auc;
  return 0.0;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["task_id"] = task_id;
  j["mode"] = to_string(mode);
  j["runtime_seconds"] = runtime_seconds;
  j["parameter_count"] = parameter_count;
  if (segmentation) {
    const auto& s = *segmentation;
    j["segmentation"] = {{"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}, {"sen", s.sen}, {"pp", s.pp}, {"f1", s.f1}};
  }
  if (classification) {
    const auto& c = *classification;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& a : c.per_class_auc) per.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
    j["classification"] = {{"per_class_auc", per}, {"macro_auc", c.macro_auc}, {"excluded_classes", c.excluded_classes}};
  }
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  if (auto problems = validate_report_json(j); !problems.empty())
    throw ParseError("invalid metrics report: " + problems.front(), 1);
  MetricsReport r;
  r.task = j.at("task").get<std::string>();
  r.task_id = j.at("task_id").get<int>();
  r.mode = mode_from_string(j.at("mode").get<std::string>());
  r.runtime_seconds = j.at("runtime_seconds").get<double>();
  r.parameter_count = j.at("parameter_count").get<std::uint64_t>();
  if (j.contains("segmentation")) {
    const auto& s = j["segmentation"];
    SegMetrics m;
    m.tp = s.at("tp").get<long>();
    m.fp = s.at("fp").get<long>();
    m.fn = s.at("fn").get<long>();
    m.sen = s.at("sen").get<double>();
    m.pp = s.at("pp").get<double>();
    m.f1 = s.at("f1").get<double>();
    r.segmentation = m;
  }
  if (j.contains("classification")) {
    const auto& c = j["classification"];
    ClsMetrics m;
    for (const auto& a : c.at("per_class_auc"))
      m.per_class_auc.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    m.excluded_classes = c.at("excluded_classes").get<std::vector<int>>();
    m.macro_auc = c.at("macro_auc").get<double>();
    r.classification = m;
  }
  return r;
}

std::vector<std::string> validate_report_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) return {"report is not an object"};
  const std::set<std::string> allowed{"task", "task_id", "mode", "runtime_seconds", "parameter_count",
                                      "segmentation", "classification"};
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) problems.push_back("unknown key '" + key + "'");
  auto need = [&](const nlohmann::json& obj, const char* key, auto pred, const char* what) {
    if (!obj.contains(key) || !pred(obj[key])) problems.push_back(std::string("'") + key + "' must be " + what);
  };
  auto is_string = [](const nlohmann::json& v) { return v.is_string(); };
  auto is_int = [](const nlohmann::json& v) { return v.is_number_integer(); };
  auto is_num = [](const nlohmann::json& v) { return v.is_number(); };
  need(j, "task", is_string, "a string");
  need(j, "task_id", is_int, "an integer");
  need(j, "mode", [](const nlohmann::json& v) { return v.is_string() && (v == "seg" || v == "cls"); },
       "\"seg\" or \"cls\"");
  need(j, "runtime_seconds", is_num, "a number");
  need(j, "parameter_count", is_int, "an integer");
  if (!problems.empty()) return problems;

  const bool seg = j["mode"] == "seg";
  if (seg && !j.contains("segmentation")) problems.push_back("segmentation block missing");
  if (!seg && !j.contains("classification")) problems.push_back("classification block missing");
  if (j.contains("segmentation")) {
    const auto& s = j["segmentation"];
    for (const char* k : {"tp", "fp", "fn"}) need(s, k, is_int, "an integer");
    for (const char* k : {"sen", "pp", "f1"}) need(s, k, is_num, "a number");
    if (problems.empty()) {
      const auto expect = SegMetrics::from_counts(s["tp"], s["fp"], s["fn"]);
      auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
      if (!close(expect.sen, s["sen"]) || !close(expect.pp, s["pp"]) || !close(expect.f1, s["f1"]))
        problems.push_back("segmentation SEN/PP/F1 inconsistent with TP/FP/FN");
    }
  }
  if (j.contains("classification")) {
    const auto& c = j["classification"];
    if (!c.contains("per_class_auc") || !c["per_class_auc"].is_array()) {
      problems.push_back("'per_class_auc' must be an array");
    } else {
      double total = 0;
      int included = 0;
      for (const auto& a : c["per_class_auc"]) {
        if (a.is_null()) continue;
        if (!a.is_number() || a.get<double>() < 0 || a.get<double>() > 1) {
          problems.push_back("per-class AUC outside [0,1]");
          break;
        }
        total += a.get<double>();
        ++included;
      }
      need(c, "macro_auc", is_num, "a number");
      need(c, "excluded_classes", [](const nlohmann::json& v) { return v.is_array(); }, "an array");
      if (problems.empty() && included > 0 && std::abs(total / included - c["macro_auc"].get<double>()) > 1e-9)
        problems.push_back("macro AUC is not the mean of the per-class values");
    }
  }
  return problems;
}

ECGCL_NAMESPACE_END
