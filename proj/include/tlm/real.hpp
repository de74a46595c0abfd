// SPDX-License-Identifier: Apache-2.0
#pragma once

// The library is built twice: once with real = float (the artifact) and once
// with real = double (linked by the finite-difference test oracles). The two
// instantiations live in distinct inline namespaces so a test binary can link
// both without ODR clashes.
#ifndef TLM_REAL
#define TLM_REAL float
#endif
#ifndef TLM_REAL_NS
#define TLM_REAL_NS r32
#endif

#define TLM_NAMESPACE_BEGIN \
  namespace tlm {           \
  inline namespace TLM_REAL_NS {
#define TLM_NAMESPACE_END \
  }                       \
  }

TLM_NAMESPACE_BEGIN
using real = TLM_REAL;
TLM_NAMESPACE_END
