#pragma once

// Scalar type for the network. Training builds use 32-bit floats; defining
// ECGCL_DOUBLE switches the whole library to 64-bit, which is what the
// finite-difference gradient checks link against. The inline namespace keeps
// the two variants link-compatible inside one executable.

#if defined(ECGCL_DOUBLE) && ECGCL_DOUBLE
#define ECGCL_ABI_NAMESPACE f64
#else
#define ECGCL_ABI_NAMESPACE f32
#endif

#define ECGCL_NAMESPACE_BEGIN \
  namespace ecgcl {           \
  inline namespace ECGCL_ABI_NAMESPACE {
#define ECGCL_NAMESPACE_END \
  }                         \
  }

ECGCL_NAMESPACE_BEGIN

#if defined(ECGCL_DOUBLE) && ECGCL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

inline constexpr bool kDoublePrecision = sizeof(Real) == sizeof(double);

ECGCL_NAMESPACE_END
