#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgcl/architecture.hpp"
#include "ecgcl/tensor.hpp"

ECGCL_NAMESPACE_BEGIN

/// Multi-lead recording in millivolts, stored lead-major.
struct EcgRecord {
  double fs = 0;
  int leads = 0;
  std::vector<double> signal;  // leads * samples
  std::vector<int> qrs;        // sorted R-peak sample indices
  std::vector<int> labels;     // class IDs
  std::string patient_id;

  int samples() const { return leads > 0 ? static_cast<int>(signal.size()) / leads : 0; }
  std::span<double> lead(int i) { return {signal.data() + static_cast<std::size_t>(i) * samples(), static_cast<std::size_t>(samples())}; }
  std::span<const double> lead(int i) const {
    return {signal.data() + static_cast<std::size_t>(i) * samples(), static_cast<std::size_t>(samples())};
  }

  /// Throws ConfigError when fs, shapes or annotations are inconsistent.
  void validate() const;
};

/// A fixed-length slice of a record. Same layout as EcgRecord.
using EcgWindow = EcgRecord;

inline constexpr double kWindowSeconds = 10.0;

/// Non-overlapping windows of `seconds`, each lead shifted to zero mean and
/// scaled to unit variance (constant leads become zeros). The tail shorter
/// than one window is dropped; annotations are re-indexed per window.
std::vector<EcgWindow> window_and_normalize(const EcgRecord& record, double seconds = kWindowSeconds);

/// Band-pass every lead, then window and normalize.
std::vector<EcgWindow> preprocess(const EcgRecord& record, double seconds = kWindowSeconds, double lo = 0.5,
                                  double hi = 45.0);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct Split {
  std::vector<EcgRecord> train, val, test;
};

/// Seeded shuffle into three folds. With stratification whole patients are
/// assigned to one fold, so no patient_id appears twice across folds.
Split split(const std::vector<EcgRecord>& records, SplitFractions fractions, bool stratify_by_patient,
            std::uint64_t seed);

/// Half-width, in samples, of the neighbourhood labelled positive around an R peak.
int seg_target_halfwidth(double fs);

/// Position p of the 4x downsampled output is positive iff an R peak lies
/// within +-floor(0.075 fs) samples of 4p.
std::vector<Real> seg_targets(const EcgWindow& window);

/// Windows stacked into network inputs and targets.
struct TaskData {
  Mode mode = Mode::Seg;
  double fs = 0;
  int classes = 0;
  Tensor x;                          // (n x leads x L)
  Tensor y;                          // seg: (n x 1 x ceil(L/4)), cls: (n x classes x 1)
  std::vector<std::vector<int>> qrs; // per-window annotations (seg)

  int size() const { return x.n; }
  int leads() const { return x.c; }
  /// Entries idx of x and y as a batch.
  TaskData subset(std::span<const int> idx) const;
};

/// Requires equally shaped windows. Class IDs must lie in [0, classes).
TaskData make_task_data(std::span<const EcgWindow> windows, Mode mode, int classes);

ECGCL_NAMESPACE_END
