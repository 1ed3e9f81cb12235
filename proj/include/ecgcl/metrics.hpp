#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecgcl/architecture.hpp"
#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

struct MatchCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

/// One-to-one matching of sorted predicted and true beat positions within
/// +-tol samples. Predictions are visited in increasing order and each takes
/// the earliest unmatched truth inside its window, which yields a maximum
/// cardinality matching.
MatchCounts qrs_match(std::span<const int> predicted, std::span<const int> truth, int tol_samples);

/// Default matching tolerance: round(0.075 * fs).
int default_match_tolerance(double fs);

/// Positions with probability > 0.5 form runs; each run's centroid is mapped
/// back to the input resolution (x4) and rounded.
std::vector<int> seg_predictions(std::span<const Real> probabilities, int downsample = 4);

struct SegMetrics {
  long tp = 0, fp = 0, fn = 0;
  double sen = 0, pp = 0, f1 = 0;

  static SegMetrics from_counts(long tp, long fp, long fn);
};

struct AucResult {
  std::vector<std::optional<double>> per_class;  // nullopt for degenerate classes
  std::vector<int> excluded;
  double macro = 0;
};

/// Mann-Whitney AUC for one class (ties get half credit). Requires at least
/// one positive and one negative.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// scores[k][i], labels[k][i]: class k, sample i. Classes with a single label
/// value are excluded from the macro mean (a warning is logged).
AucResult macro_auc(const std::vector<std::vector<double>>& scores,
                    const std::vector<std::vector<int>>& labels);

struct ClsMetrics {
  std::vector<std::optional<double>> per_class_auc;
  std::vector<int> excluded_classes;
  double macro_auc = 0;
};

struct MetricsReport {
  std::string task;
  int task_id = 0;
  Mode mode = Mode::Seg;
  std::optional<SegMetrics> segmentation;
  std::optional<ClsMetrics> classification;
  double runtime_seconds = 0;
  std::uint64_t parameter_count = 0;

  /// Headline number: F1 for segmentation, macro AUC for classification.
  double primary() const;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Checks a report document against the published schema (key set, types,
/// metric identities). Returns the list of problems; empty when valid.
std::vector<std::string> validate_report_json(const nlohmann::json& j);

ECGCL_NAMESPACE_END
