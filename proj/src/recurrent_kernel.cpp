// SPDX-License-Identifier: Apache-2.0
#include "tlm/recurrent_kernel.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <vector>

#include "tlm/autodiff.hpp"
#include "tlm/rng.hpp"

TLM_NAMESPACE_BEGIN

namespace {

void check_inputs(const Tensor& xf, const Tensor& xc, const Tensor& gamma, const Tensor& h0,
                  const ReservoirTerm* res) {
  if (xf.shape.size() != 2 || !xf.same_shape(xc))
    throw std::invalid_argument("recurrent: xf/xc must be equal rank-2, got " + shape_str(xf.shape) + " vs " +
                                shape_str(xc.shape));
  size_t d = xf.shape[1];
  if (gamma.numel() != d || h0.numel() != d) throw std::invalid_argument("recurrent: gamma/h0 width mismatch");
  if (res) {
    if (!res->w_r || res->w_r->rows() != d || res->w_r->cols() != d)
      throw std::invalid_argument("recurrent: reservoir matrix must be d x d");
  }
}

// r_t = h_prev applied to the scaled reservoir matrix; matrix/scalar reads
// are not recurrent and are excluded from the traffic counts by design
void reservoir_contrib(const ReservoirTerm& res, const real* h_prev, size_t d, real* out) {
  const TernaryMatrix& t = *res.w_r;
  std::fill(out, out + d, real(0));
  for (size_t k = 0; k < d; ++k) {
    real a = h_prev[k];
    if (a == real(0)) continue;
    for (const uint16_t* p = t.plus_begin(k); p != t.plus_end(k); ++p) out[*p] += a;
    for (const uint16_t* p = t.minus_begin(k); p != t.minus_end(k); ++p) out[*p] -= a;
  }
  real s = t.scale() * res.inv_lambda;
  for (size_t j = 0; j < d; ++j) out[j] *= s;
}

}  // namespace

Tensor unfused_recurrent(const Tensor& x_proj_f, const Tensor& x_proj_c, Tensor* reservoir_seq_out,
                         const Tensor& gamma_k, const Tensor& h0, const ReservoirTerm* res,
                         TrafficCounter& counter) {
  check_inputs(x_proj_f, x_proj_c, gamma_k, h0, res);
  size_t t_len = x_proj_f.shape[0], d = x_proj_f.shape[1];
  Tensor h_seq = Tensor::zeros({t_len, d});
  Tensor f_buf = Tensor::zeros({t_len, d});
  Tensor c_buf = Tensor::zeros({t_len, d});
  if (reservoir_seq_out) *reservoir_seq_out = Tensor::zeros({t_len, d});

  // kernel 1: gate activations written to memory for every timestep.
  // Without a reservoir the c path is fully activated here; with one, the
  // silu must wait for h_{t-1}, so the buffer carries the x projection.
  counter.kernel_launches++;
  for (size_t t = 0; t < t_len; ++t) {
    const real* xf = x_proj_f.row_ptr(t);
    const real* xc = x_proj_c.row_ptr(t);
    real* f = f_buf.row_ptr(t);
    real* c = c_buf.row_ptr(t);
    counter.reads++;  // x_proj_f[t]
    for (size_t j = 0; j < d; ++j) f[j] = sigmoid_r(xf[j]);
    counter.writes++;  // f[t]
    counter.reads++;   // x_proj_c[t]
    if (res) {
      std::copy(xc, xc + d, c);
    } else {
      for (size_t j = 0; j < d; ++j) c[j] = silu_r(xc[j]);
    }
    counter.writes++;  // c[t]
  }

  // kernel 2: state update, re-reading the f/c buffers
  counter.kernel_launches++;
  std::vector<real> rbuf(res ? d : 0);
  const real* h_prev = h0.data.data();
  for (size_t t = 0; t < t_len; ++t) {
    const real* f = f_buf.row_ptr(t);
    const real* c = c_buf.row_ptr(t);
    real* h = h_seq.row_ptr(t);
    counter.reads++;  // f[t]
    counter.reads++;  // c[t]
    if (res) {
      reservoir_contrib(*res, h_prev, d, rbuf.data());
      if (reservoir_seq_out) std::copy(rbuf.begin(), rbuf.end(), reservoir_seq_out->row_ptr(t));
      for (size_t j = 0; j < d; ++j) {
        real fp = gamma_k.data[j] + (real(1) - gamma_k.data[j]) * f[j];
        real cv = silu_r(c[j] + rbuf[j]);
        h[j] = fp * h_prev[j] + (real(1) - fp) * cv;
      }
    } else {
      for (size_t j = 0; j < d; ++j) {
        real fp = gamma_k.data[j] + (real(1) - gamma_k.data[j]) * f[j];
        h[j] = fp * h_prev[j] + (real(1) - fp) * c[j];
      }
    }
    counter.writes++;  // h[t]
    h_prev = h;
  }
  return h_seq;
}

Tensor fused_recurrent(const Tensor& x_proj_f, const Tensor& x_proj_c, Tensor* reservoir_seq_out,
                       const Tensor& gamma_k, const Tensor& h0, const ReservoirTerm* res,
                       TrafficCounter& counter) {
  check_inputs(x_proj_f, x_proj_c, gamma_k, h0, res);
  size_t t_len = x_proj_f.shape[0], d = x_proj_f.shape[1];
  Tensor h_seq = Tensor::zeros({t_len, d});
  if (reservoir_seq_out) *reservoir_seq_out = Tensor::zeros({t_len, d});

  // single traversal; f_t and c_t never leave locals
  counter.kernel_launches++;
  std::vector<real> rbuf(res ? d : 0);
  const real* h_prev = h0.data.data();
  for (size_t t = 0; t < t_len; ++t) {
    counter.reads++;  // x_proj_f[t]
    counter.reads++;  // x_proj_c[t]
    if (res) {
      reservoir_contrib(*res, h_prev, d, rbuf.data());
      if (reservoir_seq_out) std::copy(rbuf.begin(), rbuf.end(), reservoir_seq_out->row_ptr(t));
    }
    recurrent_step(d, x_proj_f.row_ptr(t), x_proj_c.row_ptr(t), res ? rbuf.data() : nullptr,
                   gamma_k.data.data(), h_prev, nullptr, nullptr, h_seq.row_ptr(t));
    counter.writes++;  // h[t]
    h_prev = h_seq.row_ptr(t);
  }
  return h_seq;
}

BenchReport bench_recurrent(size_t d, size_t t, int repetitions, bool with_reservoir, uint64_t seed) {
  if (repetitions < 3) throw std::invalid_argument("bench_recurrent: repetitions must be >= 3");
  Rng rng(seed);
  Tensor xf = Tensor::zeros({t, d});
  Tensor xc = Tensor::zeros({t, d});
  for (real& v : xf.data) v = static_cast<real>(rng.uniform(-1, 1));
  for (real& v : xc.data) v = static_cast<real>(rng.uniform(-1, 1));
  Tensor gamma = Tensor::zeros({d});
  for (real& v : gamma.data) v = static_cast<real>(rng.uniform(0, 0.9));
  Tensor h0 = Tensor::zeros({d});

  TernaryMatrix w_r;
  ReservoirTerm res;
  if (with_reservoir) {
    std::vector<int8_t> trits(d * d, 0);
    for (auto& tr : trits)
      if (rng.uniform() > 0.85) tr = rng.bernoulli(0.5) ? 1 : -1;
    w_r = TernaryMatrix(d, d, trits, 1);
    res.w_r = &w_r;
    res.inv_lambda = 1;
  }
  const ReservoirTerm* rp = with_reservoir ? &res : nullptr;

  auto time_ns = [&](auto&& fn) {
    std::vector<uint64_t> samples;
    for (int i = 0; i < repetitions; ++i) {
      auto t0 = std::chrono::steady_clock::now();
      fn();
      auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };

  BenchReport rep;
  rep.d = d;
  rep.t = t;
  rep.variant = with_reservoir ? "rc" : "base";
  rep.wall_ns_fused = time_ns([&] {
    TrafficCounter c;
    fused_recurrent(xf, xc, nullptr, gamma, h0, rp, c);
  });
  rep.wall_ns_unfused = time_ns([&] {
    TrafficCounter c;
    unfused_recurrent(xf, xc, nullptr, gamma, h0, rp, c);
  });
  fused_recurrent(xf, xc, nullptr, gamma, h0, rp, rep.traffic_fused);
  unfused_recurrent(xf, xc, nullptr, gamma, h0, rp, rep.traffic_unfused);
  return rep;
}

std::string bench_csv_header() { return "d,T,variant,impl,wall_ns_median,reads,writes,launches"; }

static std::string csv_row(const BenchReport& r, const char* impl, uint64_t ns, const TrafficCounter& c) {
  return std::to_string(r.d) + "," + std::to_string(r.t) + "," + r.variant + "," + impl + "," +
         std::to_string(ns) + "," + std::to_string(c.reads) + "," + std::to_string(c.writes) + "," +
         std::to_string(c.kernel_launches);
}

std::string bench_csv_rows(const BenchReport& r) {
  return csv_row(r, "fused", r.wall_ns_fused, r.traffic_fused) + "\n" +
         csv_row(r, "unfused", r.wall_ns_unfused, r.traffic_unfused) + "\n";
}

TLM_NAMESPACE_END
