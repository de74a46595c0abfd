// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tlm/ternary.hpp"

TLM_NAMESPACE_BEGIN

// Observable for the kernel-fusion claim: exact counts of size-d vector
// buffer reads/writes during a recurrent traversal. Reads of the reservoir
// matrix and 1/lambda are not recurrent and are excluded by design; the
// fused-vs-unfused delta is carried entirely by the f_t/c_t round trips.
struct TrafficCounter {
  uint64_t reads = 0;
  uint64_t writes = 0;
  uint64_t kernel_launches = 0;

  uint64_t total() const { return reads + writes; }
  TrafficCounter& operator+=(const TrafficCounter& o) {
    reads += o.reads;
    writes += o.writes;
    kernel_launches += o.kernel_launches;
    return *this;
  }
};

inline real sigmoid_r(real x) { return real(1) / (real(1) + std::exp(-x)); }
inline real silu_r(real x) { return x * sigmoid_r(x); }
// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
inline real silu_grad_r(real x) {
  real s = sigmoid_r(x);
  return s * (real(1) + x * (real(1) - s));
}

// One recurrent timestep, shared verbatim by the fused kernel, the unfused
// reference and the training scan so their arithmetic is identical:
//   f   = sigmoid(xf)
//   f'  = gamma + (1 - gamma) * f
//   c   = silu(xc + r)        (r = reservoir contribution, may be null)
//   h   = f' * h_prev + (1 - f') * c
// f_out/c_out may be null when the caller keeps them in locals only.
inline void recurrent_step(size_t d, const real* xf, const real* xc, const real* r,
                           const real* gamma, const real* h_prev, real* f_out,
                           real* c_out, real* h_out) {
  for (size_t i = 0; i < d; ++i) {
    real f = sigmoid_r(xf[i]);
    real fp = gamma[i] + (real(1) - gamma[i]) * f;
    real cpre = r ? xc[i] + r[i] : xc[i];
    real c = silu_r(cpre);
    if (f_out) f_out[i] = f;
    if (c_out) c_out[i] = c;
    h_out[i] = fp * h_prev[i] + (real(1) - fp) * c;
  }
}

struct ReservoirTerm;  // autodiff.hpp

// Reference two-pass implementation: pass 1 computes and stores f_t and the
// c-path buffer for every t, pass 2 re-reads them and runs the state update.
// reservoir_seq_out, when non-null, receives r_t = h_{t-1} applied to the
// scaled reservoir matrix (it is an output: r_t depends on h_{t-1} computed
// in-pass, so it cannot be supplied as an input).
Tensor unfused_recurrent(const Tensor& x_proj_f, const Tensor& x_proj_c,
                         Tensor* reservoir_seq_out, const Tensor& gamma_k,
                         const Tensor& h0, const ReservoirTerm* res,
                         TrafficCounter& counter);

// Single traversal with f_t and c_t held in locals only; numerically equal
// to the unfused path within 1e-6 (identical op order within each timestep).
Tensor fused_recurrent(const Tensor& x_proj_f, const Tensor& x_proj_c,
                       Tensor* reservoir_seq_out, const Tensor& gamma_k,
                       const Tensor& h0, const ReservoirTerm* res,
                       TrafficCounter& counter);

struct BenchReport {
  size_t d = 0, t = 0;
  std::string variant;
  uint64_t wall_ns_fused = 0, wall_ns_unfused = 0;
  TrafficCounter traffic_fused, traffic_unfused;
};

// Median-of-repetitions timings plus exact traffic counts on seeded random
// inputs. with_reservoir switches the rc/grc path on.
BenchReport bench_recurrent(size_t d, size_t t, int repetitions, bool with_reservoir,
                            uint64_t seed = 1234);

// CSV: d,T,variant,impl,wall_ns_median,reads,writes,launches (one row per impl)
std::string bench_csv_header();
std::string bench_csv_rows(const BenchReport& r);

TLM_NAMESPACE_END
