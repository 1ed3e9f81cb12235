#include "ecgcl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "ecgcl/error.hpp"
#include "ecgcl/filter.hpp"

ECGCL_NAMESPACE_BEGIN

std::string to_string(Rhythm r) {
  switch (r) {
    case Rhythm::Regular: return "regular";
    case Rhythm::Irregular: return "irregular";
    case Rhythm::Bigeminy: return "bigeminy";
  }
  return "?";
}

Rhythm rhythm_from_string(const std::string& s) {
  if (s == "regular") return Rhythm::Regular;
  if (s == "irregular" || s == "af") return Rhythm::Irregular;
  if (s == "bigeminy") return Rhythm::Bigeminy;
  throw ConfigError("unknown rhythm '" + s + "' (expected regular, irregular or bigeminy)");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, int record, int stream) {
  return splitmix(splitmix(seed) ^ splitmix(static_cast<std::uint64_t>(record) * 4 + stream));
}

void check_morphology(const std::vector<std::string>& morph) {
  if (morph.empty()) throw ConfigError("morphology set is empty");
  const auto& known = morphology_names();
  std::set<std::string> seen;
  for (const auto& m : morph) {
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw ConfigError("unknown morphology class '" + m + "'");
    if (!seen.insert(m).second) throw ConfigError("morphology class '" + m + "' listed twice");
  }
  if (seen.count("normal") && seen.size() > 1) throw ConfigError("'normal' cannot be combined with other morphology classes");
}

struct Wave {
  double amp, offset, sigma;  // volts, seconds from the R peak, seconds
};

struct BeatShape {
  std::vector<Wave> waves;
};

BeatShape beat_shape(const std::set<std::string>& morph, Rhythm rhythm) {
  const bool wide = morph.count("wide_qrs") > 0;
  const double widen = wide ? 2.5 : 1.0, spread = wide ? 2.2 : 1.0;
  const double volt = morph.count("high_voltage") ? 1.8 : 1.0;
  BeatShape s;
  if (rhythm != Rhythm::Irregular) s.waves.push_back({0.15, -0.16, 0.02});
  s.waves.push_back({morph.count("deep_q") ? -0.35 : -0.1, -0.025 * spread, 0.008 * widen});
  s.waves.push_back({1.0 * volt, 0.0, 0.010 * widen});
  s.waves.push_back({-0.2 * volt, 0.025 * spread, 0.008 * widen});
  if (morph.count("st_shift")) s.waves.push_back({-0.2, 0.13, 0.05});
  s.waves.push_back({morph.count("t_inversion") ? -0.3 : 0.3, 0.27, 0.04});
  return s;
}

std::vector<int> beat_positions(Rhythm rhythm, double rr, double fs, int samples, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<int> peaks;
  double t = unit(rng) * rr;
  for (int k = 0;; ++k) {
    const int idx = static_cast<int>(std::lround(t * fs));
    if (idx >= samples) break;
    if (peaks.empty() || idx > peaks.back()) peaks.push_back(idx);
    double step = rr;
    if (rhythm == Rhythm::Irregular) step = std::clamp(rr * std::exp(0.18 * gauss(rng)), 0.3, 2.0);
    if (rhythm == Rhythm::Bigeminy) step = rr * (k % 2 == 0 ? 0.7 : 1.3);
    t += step;
  }
  return peaks;
}

EcgRecord make_record(const SynthConfig& cfg, int index, Rhythm rhythm, const std::set<std::string>& morph) {
  std::mt19937_64 wave_rng(stream_seed(cfg.seed, index, 0));
  std::mt19937_64 noise_rng(stream_seed(cfg.seed, index, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int samples = static_cast<int>(std::lround(cfg.duration * cfg.fs));
  const double hr = cfg.hr_min + (cfg.hr_max - cfg.hr_min) * unit(wave_rng);
  EcgRecord rec;
  rec.fs = cfg.fs;
  rec.leads = cfg.leads;
  rec.signal.assign(static_cast<std::size_t>(cfg.leads) * samples, 0.0);
  rec.patient_id = cfg.patient_prefix + std::to_string(index / cfg.records_per_patient);
  rec.qrs = beat_positions(rhythm, 60.0 / hr, cfg.fs, samples, wave_rng);

  std::vector<double> gain(cfg.leads, 1.0), t_scale(cfg.leads, 1.0);
  for (int ld = 1; ld < cfg.leads; ++ld) {
    gain[ld] = 0.6 + 0.8 * unit(wave_rng);
    t_scale[ld] = 0.7 + 0.6 * unit(wave_rng);
  }
  const BeatShape shape = beat_shape(morph, rhythm);
  std::vector<double> clean(samples, 0.0), twave(samples, 0.0);
  for (int r : rec.qrs) {
    const double r_jitter = 1.0 + 0.05 * gauss(wave_rng);
    const double t_jitter = 1.0 + 0.1 * gauss(wave_rng);
    for (std::size_t w = 0; w < shape.waves.size(); ++w) {
      const Wave& wave = shape.waves[w];
      const bool is_t = w + 1 == shape.waves.size();
      const double amp = wave.amp * (is_t ? t_jitter : r_jitter);
      const double centre = r + wave.offset * cfg.fs;
      const double sigma = wave.sigma * cfg.fs;
      const int lo = std::max(0, static_cast<int>(std::floor(centre - 5 * sigma)));
      const int hi = std::min(samples - 1, static_cast<int>(std::ceil(centre + 5 * sigma)));
      auto& dst = is_t ? twave : clean;
      for (int i = lo; i <= hi; ++i) {
        const double z = (i - centre) / sigma;
        dst[i] += amp * std::exp(-0.5 * z * z);
      }
    }
  }
  if (rhythm == Rhythm::Irregular) {
    // fibrillatory baseline in place of P waves
    const double phase = 2 * std::numbers::pi * unit(wave_rng);
    for (int i = 0; i < samples; ++i) clean[i] += 0.04 * std::sin(2 * std::numbers::pi * 6.0 * i / cfg.fs + phase);
  }

  const bool noisy = std::isfinite(cfg.snr_db);
  const auto noise_filter = butterworth(FilterType::Lowpass, 2, std::min(40.0, 0.4 * cfg.fs), cfg.fs, false);
  for (int ld = 0; ld < cfg.leads; ++ld) {
    auto out = rec.lead(ld);
    for (int i = 0; i < samples; ++i) out[i] = gain[ld] * (clean[i] + t_scale[ld] * twave[i]);
    if (!noisy) continue;
    std::vector<double> white(samples);
    for (auto& v : white) v = gauss(noise_rng);
    const auto noise = sosfilt(noise_filter, white);
    double mean = 0, p_sig = 0, p_noise = 0;
    for (double v : out) mean += v;
    mean /= samples;
    for (int i = 0; i < samples; ++i) {
      p_sig += (out[i] - mean) * (out[i] - mean);
      p_noise += noise[i] * noise[i];
    }
    if (!(p_noise > 0)) continue;
    const double scale = std::sqrt(p_sig / p_noise * std::pow(10.0, -cfg.snr_db / 10.0));
    for (int i = 0; i < samples; ++i) out[i] += scale * noise[i];
  }
  return rec;
}

}  // namespace

void SynthConfig::validate() const {
  if (!(fs > 0)) throw ConfigError("synth: fs must be positive");
  if (!(duration * fs >= 32)) throw ConfigError("synth: duration * fs must be at least 32 samples");
  if (leads < 1) throw ConfigError("synth: lead count must be positive");
  if (!(hr_min > 0) || !(hr_max >= hr_min)) throw ConfigError("synth: heart-rate range must satisfy 0 < min <= max");
  if (records < 1 || records_per_patient < 1) throw ConfigError("synth: record counts must be positive");
  if (std::isnan(snr_db)) throw ConfigError("synth: SNR is NaN");
  check_morphology(morphology);
}

std::vector<EcgRecord> synth_ecg(const SynthConfig& config) {
  config.validate();
  const std::set<std::string> morph(config.morphology.begin(), config.morphology.end());
  std::vector<EcgRecord> out;
  out.reserve(config.records);
  for (int i = 0; i < config.records; ++i) out.push_back(make_record(config, i, config.rhythm, morph));
  return out;
}

void LabelledSynthConfig::validate() const {
  base.validate();
  if (classes.empty()) throw ConfigError("synth: classification task needs at least one class");
  if (!(prevalence > 0 && prevalence < 1)) throw ConfigError("synth: prevalence must lie in (0,1)");
  const auto& known = morphology_names();
  std::set<std::string> seen;
  for (const auto& c : classes) {
    const bool ok = std::find(known.begin(), known.end(), c) != known.end() || c == "irregular" || c == "bigeminy";
    if (!ok) throw ConfigError("unknown class '" + c + "'");
    if (!seen.insert(c).second) throw ConfigError("class '" + c + "' listed twice");
  }
}

std::vector<EcgRecord> synth_labelled(const LabelledSynthConfig& config) {
  config.validate();
  std::vector<EcgRecord> out;
  out.reserve(config.base.records);
  for (int i = 0; i < config.base.records; ++i) {
    std::mt19937_64 label_rng(stream_seed(config.base.seed, i, 2));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::set<std::string> morph;
    Rhythm rhythm = Rhythm::Regular;
    std::vector<int> labels;
    int normal_id = -1;
    for (int c = 0; c < static_cast<int>(config.classes.size()); ++c) {
      const std::string& name = config.classes[c];
      if (name == "normal") {
        normal_id = c;
        continue;
      }
      if (unit(label_rng) >= config.prevalence) continue;
      if (name == "irregular" || name == "bigeminy") {
        if (rhythm != Rhythm::Regular) continue;
        rhythm = rhythm_from_string(name);
      } else {
        morph.insert(name);
      }
      labels.push_back(c);
    }
    if (labels.empty() && normal_id >= 0) labels.push_back(normal_id);
    if (morph.empty()) morph.insert("normal");
    EcgRecord rec = make_record(config.base, i, rhythm, morph);
    rec.labels = std::move(labels);
    out.push_back(std::move(rec));
  }
  return out;
}

ECGCL_NAMESPACE_END
