// SPDX-License-Identifier: Apache-2.0
#include "tlm/reservoir.hpp"

#include <cmath>
#include <vector>

#include "tlm/autodiff.hpp"
#include "tlm/rng.hpp"

TLM_NAMESPACE_BEGIN

TernaryMatrix gen_sparse_ternary(const ReservoirSpec& spec) {
  if (spec.dim < 1) throw std::invalid_argument("gen_sparse_ternary: dim must be >= 1");
  if (spec.sparsity < 0 || spec.sparsity >= 1)
    throw std::invalid_argument("gen_sparse_ternary: sparsity must be in [0,1); 1 would give lambda_max = 0");
  Rng rng(hash_combine(spec.seed, 0x7e5e7e5e));
  std::vector<int8_t> trits(spec.dim * spec.dim, 0);
  for (auto& t : trits) {
    if (rng.uniform() >= spec.sparsity) t = rng.bernoulli(0.5) ? 1 : -1;
  }
  return TernaryMatrix(spec.dim, spec.dim, trits, 1);
}

TernaryMatrix gen_fixed_dense_ternary(size_t d, uint64_t seed) {
  if (d < 1) throw std::invalid_argument("gen_fixed_dense_ternary: d must be >= 1");
  Rng rng(hash_combine(seed, 0xd417));
  Tensor w = Tensor::zeros({d, d});
  double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(d)));
  for (real& v : w.data) v = static_cast<real>(rng.uniform(-bound, bound));
  return quantize_absmean(w);
}

double spectral_radius(const TernaryMatrix& t, double tol, int max_iter) {
  if (t.rows() != t.cols()) throw std::invalid_argument("spectral_radius: matrix must be square");
  if (t.all_zero()) throw std::invalid_argument("spectral_radius: matrix is all-zero");
  size_t d = t.rows();

  double best = 0;
  double last_partial = 0;
  bool any_converged = false;
  for (int restart = 0; restart < 3; ++restart) {
    Rng rng(hash_combine(0x5bec7a1u + restart, d));
    std::vector<double> v(d), w(d);
    double norm0 = 0;
    for (auto& x : v) {
      x = rng.uniform(-1, 1);
      norm0 += x * x;
    }
    norm0 = std::sqrt(norm0);
    for (auto& x : v) x /= norm0;

    double log_acc = 0;
    double prev_checkpoint = -1;
    double est = 0;
    bool converged = false;
    int next_check = 64;
    for (int k = 1; k <= max_iter; ++k) {
      // w = v W (trit products; scale folded in via log)
      std::fill(w.begin(), w.end(), 0.0);
      for (size_t i = 0; i < d; ++i) {
        double a = v[i];
        if (a == 0) continue;
        for (const uint16_t* p = t.plus_begin(i); p != t.plus_end(i); ++p) w[*p] += a;
        for (const uint16_t* p = t.minus_begin(i); p != t.minus_end(i); ++p) w[*p] -= a;
      }
      double norm = 0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0) {
        // v landed in the kernel of W^k: nilpotent direction, radius 0 along it
        est = 0;
        converged = true;
        break;
      }
      log_acc += std::log(norm);
      for (size_t i = 0; i < d; ++i) v[i] = w[i] / norm;

      if (k == next_check) {
        est = std::exp(log_acc / k) * t.scale();
        if (prev_checkpoint > 0) {
          double diff = std::fabs(est - prev_checkpoint);
          if (diff <= tol * 0.25 * est) {
            // error decays ~c/k, so extrapolate the doubling sequence
            est = 2 * est - prev_checkpoint;
            converged = true;
            break;
          }
        }
        prev_checkpoint = est;
        next_check *= 2;
      }
    }
    if (!converged) {
      last_partial = est > 0 ? est : prev_checkpoint;
      continue;
    }
    any_converged = true;
    best = std::max(best, est);
  }
  if (!any_converged)
    throw SpectralRadiusError("spectral_radius: no restart stabilized within max_iter", last_partial);
  return best;
}

SharedFixed make_shared_fixed(size_t d, double sparsity, uint64_t seed, bool grc_gates) {
  SharedFixed sf;
  auto wc = std::make_shared<TernaryMatrix>(gen_fixed_dense_ternary(d, hash_combine(seed, 1)));
  sf.w_c = std::make_shared<QuantizedLinear>(std::move(wc));
  sf.w_r = std::make_shared<const TernaryMatrix>(gen_sparse_ternary({d, sparsity, hash_combine(seed, 2)}));
  if (sf.w_r->all_zero())
    throw std::runtime_error("make_shared_fixed: sampled reservoir is all-zero (lambda_max would be 0); "
                             "use a larger d or lower sparsity");
  sf.lambda_max = static_cast<real>(spectral_radius(*sf.w_r));
  if (!(sf.lambda_max > 0))
    throw std::runtime_error("make_shared_fixed: reservoir spectral radius is 0 (nilpotent sample); "
                             "use a different seed");
  if (grc_gates) {
    auto wf = std::make_shared<TernaryMatrix>(gen_fixed_dense_ternary(d, hash_combine(seed, 3)));
    auto wg = std::make_shared<TernaryMatrix>(gen_fixed_dense_ternary(d, hash_combine(seed, 4)));
    sf.w_f = std::make_shared<QuantizedLinear>(std::move(wf));
    sf.w_g = std::make_shared<QuantizedLinear>(std::move(wg));
  }
  return sf;
}

LiEsnOut li_esn_step(const Tensor& x, const Tensor& h_prev, const LiEsnParams& params) {
  if (!(params.lambda_max > 0)) throw std::invalid_argument("li_esn_step: lambda_max must be positive");
  if (params.leak_f < 0 || params.leak_f > 1) throw std::invalid_argument("li_esn_step: leak f must be in [0,1]");
  size_t d = h_prev.numel();
  Tensor xc = ternary_matmul(x, *params.w_c);
  Tensor hr = ternary_matmul(h_prev, *params.w_r);
  Tensor c = Tensor::zeros({d});
  real inv_l = real(1) / params.lambda_max;
  for (size_t j = 0; j < d; ++j)
    c.data[j] = std::tanh(xc.data[j] + hr.data[j] * inv_l + params.b_c.data[j]);
  Tensor h = Tensor::zeros({d});
  for (size_t j = 0; j < d; ++j)
    h.data[j] = params.leak_f * h_prev.data[j] + (real(1) - params.leak_f) * c.data[j];
  Tensor o = ternary_matmul(h, params.w_o);
  for (size_t j = 0; j < o.numel(); ++j) o.data[j] += params.b_o.data[j];
  return {std::move(o), std::move(h)};
}

TLM_NAMESPACE_END
