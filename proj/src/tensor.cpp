#include "ecgcl/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

Tensor::Tensor(int n_, int c_, int l_, Real fill_value)
    : n(n_), c(c_), l(l_), data(static_cast<std::size_t>(n_) * c_ * l_, fill_value) {
  if (n_ < 0 || c_ < 0 || l_ < 0) throw ShapeError("negative tensor dimension");
}

Tensor::Tensor(int n_, int c_, int l_, std::vector<Real> values)
    : n(n_), c(c_), l(l_), data(std::move(values)) {
  if (data.size() != static_cast<std::size_t>(n) * c * l)
    throw ShapeError("tensor data size does not match " + shape_str());
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(l) + ")";
}

Tensor Tensor::slice(int b) const {
  if (b < 0 || b >= n) throw ShapeError("batch index out of range");
  Tensor out(1, c, l);
  const auto stride = static_cast<std::size_t>(c) * l;
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(b * stride), stride, out.data.begin());
  return out;
}

void Tensor::fill(Real v) { std::fill(data.begin(), data.end(), v); }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  const Tensor& first = items.front();
  int total = 0;
  for (const auto& t : items) {
    if (t.c != first.c || t.l != first.l)
      throw ShapeError("stack: " + t.shape_str() + " vs " + first.shape_str());
    total += t.n;
  }
  Tensor out(total, first.c, first.l);
  auto it = out.data.begin();
  for (const auto& t : items) it = std::copy(t.data.begin(), t.data.end(), it);
  return out;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](Real v) { return std::isfinite(v); });
}

Parameter::Parameter(Tensor v)
    : value(std::move(v)), grad(value.n, value.c, value.l), trainable(value.size(), 1) {}

void Parameter::set_trainable(bool on) {
  std::fill(trainable.begin(), trainable.end(), static_cast<std::uint8_t>(on ? 1 : 0));
}

ECGCL_NAMESPACE_END
