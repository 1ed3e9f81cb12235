#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ecgcl/data.hpp"

ECGCL_NAMESPACE_BEGIN

enum class Rhythm : std::uint8_t { Regular, Irregular, Bigeminy };

std::string to_string(Rhythm r);
Rhythm rhythm_from_string(const std::string& s);

/// Morphology modifiers. "normal" may not be combined with any other.
inline const std::vector<std::string>& morphology_names() {
  static const std::vector<std::string> names{"normal", "wide_qrs", "st_shift", "t_inversion", "high_voltage",
                                              "deep_q"};
  return names;
}

struct SynthConfig {
  double fs = 100;
  double duration = 10;  // seconds
  int leads = 1;
  double hr_min = 60;  // beats per minute
  double hr_max = 90;
  Rhythm rhythm = Rhythm::Regular;
  std::vector<std::string> morphology{"normal"};
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  int records = 1;
  int records_per_patient = 1;
  std::string patient_prefix = "p";

  void validate() const;
};

/// Gaussian P/Q/R/S/T beats placed at integer R-peak indices, which are
/// emitted as the QRS annotations. Record i depends only on (seed, i).
std::vector<EcgRecord> synth_ecg(const SynthConfig& config);

/// Draws per-record findings for a classification task. Each class name is a
/// morphology modifier, a rhythm ("irregular", "bigeminy") or "normal"
/// (no other finding present). Every finding is drawn independently with
/// probability `prevalence`; at most one rhythm finding is kept.
struct LabelledSynthConfig {
  SynthConfig base;
  std::vector<std::string> classes;
  double prevalence = 0.4;

  void validate() const;
};

std::vector<EcgRecord> synth_labelled(const LabelledSynthConfig& config);

ECGCL_NAMESPACE_END
