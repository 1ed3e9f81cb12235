#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

/// Dense (batch x channels x length) array. A FeatureMap is one batch entry;
/// kernels reuse the same layout as (out x in x taps).
struct Tensor {
  int n = 0;
  int c = 0;
  int l = 0;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(int n, int c, int l, Real fill = Real(0));
  Tensor(int n, int c, int l, std::vector<Real> values);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  Real* row(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c + ch) * l; }
  const Real* row(int b, int ch) const {
    return data.data() + (static_cast<std::size_t>(b) * c + ch) * l;
  }
  Real& operator()(int b, int ch, int t) { return row(b, ch)[t]; }
  Real operator()(int b, int ch, int t) const { return row(b, ch)[t]; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && l == o.l; }
  std::string shape_str() const;

  /// Copy of batch entry b as a 1-entry tensor.
  Tensor slice(int b) const;
  void fill(Real v);
};

/// Stack equally-shaped single tensors along the batch axis.
Tensor stack(std::span<const Tensor> items);

bool all_finite(const Tensor& t);

/// Running statistics of one normalization layer.
struct NormStats {
  std::vector<Real> mean;
  std::vector<Real> var;

  NormStats() = default;
  explicit NormStats(int channels) : mean(channels, Real(0)), var(channels, Real(1)) {}
  int channels() const { return static_cast<int>(mean.size()); }
};

/// Trainable weights plus their gradient and a per-scalar trainable flag.
/// Scalars whose flag is 0 always end a backward pass with a zero gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  std::vector<std::uint8_t> trainable;

  Parameter() = default;
  explicit Parameter(Tensor v);

  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.fill(Real(0)); }
  void set_trainable(bool on);
};

ECGCL_NAMESPACE_END
