#pragma once

// Precision selection. The library is compiled twice: single precision for
// training and sampling, double precision for finite-difference oracle runs.
// Each build lives in its own inline namespace so the two never collide.

#if defined(RESTOK_DOUBLE)
#define RESTOK_PRECISION_NS f64
#else
#define RESTOK_PRECISION_NS f32
#endif

#define RESTOK_BEGIN_NAMESPACE \
  namespace restok {           \
  inline namespace RESTOK_PRECISION_NS {
#define RESTOK_END_NAMESPACE \
  }                          \
  }

RESTOK_BEGIN_NAMESPACE

#if defined(RESTOK_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

RESTOK_END_NAMESPACE
