#include "ecgcl/filter.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

std::vector<Biquad> butterworth(FilterType type, int order, double cutoff_hz, double fs,
                                bool zero_phase_compensation) {
  if (order < 2 || order % 2 != 0) throw ConfigError("butterworth: order must be even and >= 2");
  if (!(fs > 0) || !(cutoff_hz > 0) || !(cutoff_hz < fs / 2))
    throw ConfigError("butterworth: cutoff " + std::to_string(cutoff_hz) + " Hz is not inside (0, fs/2) for fs " +
                      std::to_string(fs));
  double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  if (zero_phase_compensation) {
    // two passes: each pass must sit at |H|^2 = 1/sqrt(2) at the requested corner
    const double shift = std::pow(std::numbers::sqrt2 - 1.0, 1.0 / (2.0 * order));
    k = type == FilterType::Lowpass ? k / shift : k * shift;
  }
  std::vector<Biquad> sections;
  for (int i = 1; i <= order / 2; ++i) {
    // 1/Q of the i-th conjugate pole pair of the analog prototype
    const double q = 2.0 * std::sin(std::numbers::pi * (2.0 * i - 1.0) / (2.0 * order));
    const double a0 = 1.0 + q * k + k * k;
    Biquad s{};
    if (type == FilterType::Lowpass) {
      s.b0 = k * k / a0;
      s.b1 = 2.0 * k * k / a0;
      s.b2 = k * k / a0;
    } else {
      s.b0 = 1.0 / a0;
      s.b1 = -2.0 / a0;
      s.b2 = 1.0 / a0;
    }
    s.a1 = 2.0 * (k * k - 1.0) / a0;
    s.a2 = (1.0 - q * k + k * k) / a0;
    sections.push_back(s);
  }
  return sections;
}

double cascade_magnitude(std::span<const Biquad> sections, double f_hz, double fs) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / fs);
  const std::complex<double> z2 = z1 * z1;
  double mag = 1.0;
  for (const auto& s : sections) mag *= std::abs((s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2));
  return mag;
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  if (y.empty()) return y;
  double steady_in = y.front();
  for (const auto& s : sections) {
    // direct form II transposed, initialised at the steady state of steady_in
    const double steady_out = s.dc_gain() * steady_in;
    double z1 = steady_out - s.b0 * steady_in;
    double z2 = s.b2 * steady_in - s.a2 * steady_out;
    for (auto& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    steady_in = steady_out;
  }
  return y;
}

std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x, int pad) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  if (pad < 0) pad = 3 * (2 * static_cast<int>(sections.size()) + 1);
  pad = std::min(n - 1, pad);
  std::vector<double> ext;
  ext.reserve(static_cast<std::size_t>(n + 2 * pad));
  for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> fwd = sosfilt(sections, ext);
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> back = sosfilt(sections, fwd);
  std::reverse(back.begin(), back.end());
  return {back.begin() + pad, back.begin() + pad + n};
}

std::vector<double> bandpass(std::span<const double> signal, double fs, double lo, double hi) {
  if (!(fs > 0) || !(lo > 0) || !(hi > lo) || !(hi < fs / 2))
    throw ConfigError("bandpass: band [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] Hz needs 0 < lo < hi < fs/2 (fs = " + std::to_string(fs) + " Hz is too low)");
  std::vector<Biquad> sections = butterworth(FilterType::Highpass, kBandpassOrder, lo, fs, true);
  const auto low = butterworth(FilterType::Lowpass, kBandpassOrder, hi, fs, true);
  sections.insert(sections.end(), low.begin(), low.end());
  // the high-pass transient lasts seconds; let it play out inside the padding
  return sosfiltfilt(sections, signal, static_cast<int>(std::ceil(3.0 * fs / lo)));
}

ECGCL_NAMESPACE_END
