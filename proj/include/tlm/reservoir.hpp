// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <stdexcept>

#include "tlm/ternary.hpp"

TLM_NAMESPACE_BEGIN

struct ReservoirSpec {
  size_t dim = 0;
  double sparsity = 0.85;  // probability of a zero entry
  uint64_t seed = 0;
};

// Sparse fixed recurrent matrix: each entry is independently 0 with
// probability sparsity, otherwise +1/-1 equiprobable; scale 1. Deterministic
// in the seed.
TernaryMatrix gen_sparse_ternary(const ReservoirSpec& spec);

// Dense fixed matrix: xavier-uniform d x d sample quantized with the absmean
// rule, then frozen.
TernaryMatrix gen_fixed_dense_ternary(size_t d, uint64_t seed);

struct SpectralRadiusError : std::runtime_error {
  explicit SpectralRadiusError(const std::string& what, double last)
      : std::runtime_error(what), last_estimate(last) {}
  double last_estimate;
};

// Largest eigenvalue magnitude, estimated by the Gelfand iteration
// ||W^k v||^(1/k) with per-step renormalization, three random restarts and
// Richardson extrapolation over doubling checkpoints. Throws
// SpectralRadiusError (carrying the last estimate) if max_iter is exhausted
// before the estimate stabilizes to the requested relative accuracy.
double spectral_radius(const TernaryMatrix& t, double tol = 1e-3, int max_iter = 200000);

// The single shared storage for the fixed matrices. Blocks hold copies of
// these handles, so the number of distinct fixed instances is 2 for rc
// (w_c, w_r) and 4 for grc (+ w_f, w_g) regardless of layer count.
struct SharedFixed {
  std::shared_ptr<QuantizedLinear> w_c;  // frozen, no bias
  std::shared_ptr<QuantizedLinear> w_f;  // grc only
  std::shared_ptr<QuantizedLinear> w_g;  // grc only
  std::shared_ptr<const TernaryMatrix> w_r;
  real lambda_max = 0;
};

// Builds the shared set from seeds; grc adds the fixed forget/output gate
// matrices. lambda_max is computed once here and cached.
SharedFixed make_shared_fixed(size_t d, double sparsity, uint64_t seed, bool grc_gates);

// Reference leaky-integrator echo state cell used to validate the reservoir
// machinery:
//   c_t = tanh(x w_c + h_prev (w_r / lambda) + b_c)
//   h_t = f h_prev + (1 - f) c_t
//   o_t = h_t w_o + b_o
struct LiEsnParams {
  std::shared_ptr<const TernaryMatrix> w_c;
  std::shared_ptr<const TernaryMatrix> w_r;
  real lambda_max = 0;
  Tensor b_c;
  real leak_f = 0;  // forget gate in [0,1]
  TernaryMatrix w_o;
  Tensor b_o;
};

struct LiEsnOut {
  Tensor o;
  Tensor h;
};

LiEsnOut li_esn_step(const Tensor& x, const Tensor& h_prev, const LiEsnParams& params);

TLM_NAMESPACE_END
