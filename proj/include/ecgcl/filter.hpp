#pragma once

#include <span>
#include <vector>

#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

/// Second-order section: y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

enum class FilterType { Lowpass, Highpass };

/// Butterworth design (even order) via the bilinear transform with
/// pre-warping. With `zero_phase_compensation` the corner is shifted so that
/// the forward-backward response is -3 dB at `cutoff_hz`.
std::vector<Biquad> butterworth(FilterType type, int order, double cutoff_hz, double fs,
                                bool zero_phase_compensation);

/// Magnitude of a cascade at frequency f (single pass).
double cascade_magnitude(std::span<const Biquad> sections, double f_hz, double fs);

/// Causal single pass starting from the steady state of the first sample.
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);

/// Forward-backward (zero-phase) filtering with odd reflection padding of
/// `pad` samples per side, capped at n-1; a negative pad picks 3(2S+1).
std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x, int pad = -1);

inline constexpr int kBandpassOrder = 6;

/// Zero-phase Butterworth band-pass. The forward-backward response is -3 dB
/// at lo and hi. Throws ConfigError unless 0 < lo < hi < fs/2.
std::vector<double> bandpass(std::span<const double> signal, double fs, double lo = 0.5, double hi = 45.0);

ECGCL_NAMESPACE_END
