#pragma once

#include <span>

#include "ecgcl/graph.hpp"

ECGCL_NAMESPACE_BEGIN

enum class NormMode { Train, Eval };

inline constexpr Real kNormEps = Real(1e-5);
inline constexpr Real kNormMomentum = Real(0.1);
inline constexpr Real kBceClamp = Real(1e-7);

/// Output length of a strided convolution.
int conv_out_len(int in_len, int taps, int stride, int padding);

/// x: (n x inC x L), kernel: (outC x inC x k), bias: (1 x outC x 1) or absent.
Var conv1d(Var x, Var kernel, Var bias, int stride, int padding);

/// x: (n x inC x L), kernel: (inC x outC x k). Output length (L - 1) * stride + k.
Var conv_transpose1d(Var x, Var kernel, Var bias, int stride);

/// Per-channel linear interpolation with both endpoints aligned.
Var linear_interpolate(Var x, int target_len);

/// gamma, beta: (1 x C x 1). Train mode normalizes with batch moments and
/// updates `stats` in place; eval mode uses `stats` as stored.
Var batchnorm1d(Var x, Var gamma, Var beta, NormStats& stats, NormMode mode);

Var relu(Var x);
Var sigmoid(Var x);

/// Mean over length: (n x C x L) -> (n x C x 1).
Var global_avg_pool(Var x);
/// Bin i averages [floor(i*L/out), floor((i+1)*L/out)).
Var adaptive_avg_pool(Var x, int out_len);

Var add(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
/// x: (n x C x L) scaled by s: (n x C x 1) broadcast along length.
Var scale_channels(Var x, Var s);
Var concat_channels(std::span<const Var> parts);
/// Truncate or zero-pad (at the end) along length.
Var fit_length(Var x, int target_len);
/// Sum of all entries -> (1 x 1 x 1).
Var sum(Var x);
/// Mean binary cross-entropy against 0/1 targets of the same shape.
/// Probabilities are clamped to [kBceClamp, 1 - kBceClamp].
Var bce_loss(Var probs, const Tensor& targets);

ECGCL_NAMESPACE_END
