// SPDX-License-Identifier: Apache-2.0
#include "tlm/ternary.hpp"

#include <cmath>
#include <stdexcept>

#include "tlm/autodiff.hpp"

TLM_NAMESPACE_BEGIN

namespace {

uint8_t trit_code(int8_t t) {
  if (t == 0) return 0;
  if (t == 1) return 1;
  if (t == -1) return 2;
  throw std::invalid_argument("trit value out of {-1,0,+1}: " + std::to_string(int(t)));
}

std::vector<uint8_t> pack_trits(const std::vector<int8_t>& trits) {
  std::vector<uint8_t> packed((trits.size() + 3) / 4, 0);
  for (size_t i = 0; i < trits.size(); ++i) {
    packed[i >> 2] |= static_cast<uint8_t>(trit_code(trits[i]) << ((i & 3) * 2));
  }
  return packed;
}

std::vector<int8_t> unpack_trits(const std::vector<uint8_t>& packed, size_t n) {
  std::vector<int8_t> trits(n);
  for (size_t i = 0; i < n; ++i) {
    uint8_t code = (packed[i >> 2] >> ((i & 3) * 2)) & 3u;
    switch (code) {
      case 0: trits[i] = 0; break;
      case 1: trits[i] = 1; break;
      case 2: trits[i] = -1; break;
      default: throw std::invalid_argument("invalid trit code 11 in packed buffer");
    }
  }
  return trits;
}

}  // namespace

TernaryMatrix::TernaryMatrix(size_t rows, size_t cols, const std::vector<int8_t>& trits, real scale)
    : rows_(rows), cols_(cols), scale_(scale) {
  if (trits.size() != rows * cols) throw std::invalid_argument("TernaryMatrix: trit count != rows*cols");
  if (!(scale > 0)) throw std::invalid_argument("TernaryMatrix: scale must be positive");
  if (cols > 65535) throw std::invalid_argument("TernaryMatrix: cols exceeds index width");
  packed_ = pack_trits(trits);
  build_index_lists(trits);
}

TernaryMatrix TernaryMatrix::from_packed(size_t rows, size_t cols, std::vector<uint8_t> packed, real scale) {
  if (packed.size() != (rows * cols + 3) / 4) throw std::invalid_argument("TernaryMatrix: packed size mismatch");
  std::vector<int8_t> trits = unpack_trits(packed, rows * cols);
  TernaryMatrix t(rows, cols, trits, scale);
  return t;
}

void TernaryMatrix::build_index_lists(const std::vector<int8_t>& trits) {
  plus_off_.assign(rows_ + 1, 0);
  minus_off_.assign(rows_, 0);
  idx_.clear();
  idx_.reserve(trits.size());
  for (size_t r = 0; r < rows_; ++r) {
    plus_off_[r] = static_cast<uint32_t>(idx_.size());
    const int8_t* row = trits.data() + r * cols_;
    for (size_t c = 0; c < cols_; ++c)
      if (row[c] > 0) idx_.push_back(static_cast<uint16_t>(c));
    minus_off_[r] = static_cast<uint32_t>(idx_.size());
    for (size_t c = 0; c < cols_; ++c)
      if (row[c] < 0) idx_.push_back(static_cast<uint16_t>(c));
  }
  plus_off_[rows_] = static_cast<uint32_t>(idx_.size());
}

size_t TernaryMatrix::nonzero_count() const { return idx_.size(); }

bool TernaryMatrix::all_zero() const { return idx_.empty(); }

Tensor TernaryMatrix::dequantize() const {
  Tensor out = Tensor::zeros({rows_, cols_});
  for (size_t r = 0; r < rows_; ++r) {
    real* dst = out.row_ptr(r);
    for (const uint16_t* p = plus_begin(r); p != plus_end(r); ++p) dst[*p] = scale_;
    for (const uint16_t* p = minus_begin(r); p != minus_end(r); ++p) dst[*p] = -scale_;
  }
  return out;
}

TernaryMatrix quantize_absmean(const Tensor& w) {
  if (w.shape.size() != 2) throw std::invalid_argument("quantize_absmean: expected rank-2 tensor, got " + shape_str(w.shape));
  double sum = 0;
  for (real v : w.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("quantize_absmean: non-finite entry");
    sum += std::fabs(v);
  }
  real beta = static_cast<real>(sum / static_cast<double>(w.numel()));
  if (beta < real(1e-8)) beta = real(1e-8);
  std::vector<int8_t> trits(w.numel());
  for (size_t i = 0; i < w.numel(); ++i) {
    real q = std::round(w.data[i] / beta);
    trits[i] = static_cast<int8_t>(q < -1 ? -1 : (q > 1 ? 1 : q));
  }
  return TernaryMatrix(w.shape[0], w.shape[1], trits, beta);
}

Tensor ternary_matmul(const Tensor& x, const TernaryMatrix& t) {
  size_t r = t.rows(), c = t.cols();
  if (x.cols() != r)
    throw std::invalid_argument("ternary_matmul: inner extents differ, x " + shape_str(x.shape) +
                                " vs weights [" + std::to_string(r) + "x" + std::to_string(c) + "]");
  size_t m = x.rows();
  Tensor y = x.shape.size() == 1 ? Tensor::zeros({c}) : Tensor::zeros({m, c});
  for (size_t i = 0; i < m; ++i) {
    const real* xi = x.data.data() + i * r;
    real* yi = y.data.data() + i * c;
    for (size_t k = 0; k < r; ++k) {
      real a = xi[k];
      if (a == real(0)) continue;
      for (const uint16_t* p = t.plus_begin(k); p != t.plus_end(k); ++p) yi[*p] += a;
      for (const uint16_t* p = t.minus_begin(k); p != t.minus_end(k); ++p) yi[*p] -= a;
    }
    real beta = t.scale();
    for (size_t j = 0; j < c; ++j) yi[j] *= beta;
  }
  return y;
}

Tensor ternary_matmul_transposed(const Tensor& g, const TernaryMatrix& t) {
  size_t r = t.rows(), c = t.cols();
  if (g.cols() != c)
    throw std::invalid_argument("ternary_matmul_transposed: inner extents differ, g " + shape_str(g.shape) +
                                " vs weights [" + std::to_string(r) + "x" + std::to_string(c) + "]");
  size_t m = g.rows();
  Tensor out = g.shape.size() == 1 ? Tensor::zeros({r}) : Tensor::zeros({m, r});
  real beta = t.scale();
  for (size_t i = 0; i < m; ++i) {
    const real* gi = g.data.data() + i * c;
    real* oi = out.data.data() + i * r;
    for (size_t k = 0; k < r; ++k) {
      real acc = 0;
      for (const uint16_t* p = t.plus_begin(k); p != t.plus_end(k); ++p) acc += gi[*p];
      for (const uint16_t* p = t.minus_begin(k); p != t.minus_end(k); ++p) acc -= gi[*p];
      oi[k] = acc * beta;
    }
  }
  return out;
}

double trit_memory_bits(double n) { return n * 1.5849625007211562; }

// ---- QuantizedLinear ----

static Tensor xavier_uniform(size_t rows, size_t cols, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (real& v : t.data) v = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}

QuantizedLinear::QuantizedLinear(std::string name, size_t rows, size_t cols, bool with_bias, Rng& rng)
    : name_(std::move(name)) {
  latent_ = std::make_unique<Parameter>(name_ + ".latent", xavier_uniform(rows, cols, rng));
  if (with_bias) bias_ = std::make_unique<Parameter>(name_ + ".bias", Tensor::zeros({cols}));
}

QuantizedLinear::QuantizedLinear(std::string name, Tensor latent, bool with_bias) : name_(std::move(name)) {
  size_t cols = latent.shape.at(1);
  latent_ = std::make_unique<Parameter>(name_ + ".latent", std::move(latent));
  if (with_bias) bias_ = std::make_unique<Parameter>(name_ + ".bias", Tensor::zeros({cols}));
}

QuantizedLinear::QuantizedLinear(std::shared_ptr<const TernaryMatrix> fixed)
    : frozen_(true), fixed_(std::move(fixed)) {
  if (!fixed_) throw std::invalid_argument("QuantizedLinear: null fixed matrix");
}

QuantizedLinear::~QuantizedLinear() = default;
QuantizedLinear::QuantizedLinear(QuantizedLinear&&) noexcept = default;
QuantizedLinear& QuantizedLinear::operator=(QuantizedLinear&&) noexcept = default;

size_t QuantizedLinear::rows() const { return frozen_ ? fixed_->rows() : latent_->value.shape[0]; }
size_t QuantizedLinear::cols() const { return frozen_ ? fixed_->cols() : latent_->value.shape[1]; }

void QuantizedLinear::refresh_cache() {
  if (frozen_) return;
  if (cache_version_ == latent_->version) return;
  cache_ = quantize_absmean(latent_->value);
  cache_version_ = latent_->version;
}

const TernaryMatrix& QuantizedLinear::cached() {
  if (frozen_) return *fixed_;
  refresh_cache();
  return cache_;
}

const TernaryMatrix& QuantizedLinear::cached_const() const {
  if (frozen_) return *fixed_;
  if (cache_version_ != latent_->version)
    throw std::logic_error("QuantizedLinear::cached_const: stale cache for " + name_);
  return cache_;
}

Parameter& QuantizedLinear::latent() {
  if (frozen_) throw std::logic_error("QuantizedLinear: frozen linear has no latent");
  return *latent_;
}
const Parameter& QuantizedLinear::latent_const() const {
  if (frozen_) throw std::logic_error("QuantizedLinear: frozen linear has no latent");
  return *latent_;
}

bool QuantizedLinear::has_bias() const { return bias_ != nullptr; }
Parameter& QuantizedLinear::bias() { return *bias_; }
const Parameter& QuantizedLinear::bias_const() const { return *bias_; }

TLM_NAMESPACE_END
