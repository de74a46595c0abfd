// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tlm/rng.hpp"
#include "tlm/tensor.hpp"

TLM_NAMESPACE_BEGIN

// Weight matrix quantized to {-1, 0, +1} with a single positive scale.
// Canonical storage is the packed byte buffer (row-major, 4 trits per byte,
// little-endian bit order within each byte; codes 00->0, 01->+1, 10->-1,
// code 11 is invalid). The packed layout is part of the checkpoint format.
//
// For the add/sub-only matmul each row also keeps per-column index lists of
// its +1 and -1 entries, built once at construction; the packed buffer stays
// the source of truth.
class TernaryMatrix {
 public:
  TernaryMatrix() = default;
  // trits entries must be -1, 0 or +1
  TernaryMatrix(size_t rows, size_t cols, const std::vector<int8_t>& trits, real scale);
  // from packed bytes (checkpoint load path); throws on code 11
  static TernaryMatrix from_packed(size_t rows, size_t cols, std::vector<uint8_t> packed, real scale);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  real scale() const { return scale_; }
  const std::vector<uint8_t>& packed() const { return packed_; }

  int8_t trit(size_t r, size_t c) const { return unpack_at(r * cols_ + c); }
  size_t nonzero_count() const;
  bool all_zero() const;

  Tensor dequantize() const;  // scale * trit, full precision

  // row r's column indices holding +1 / -1 (for the add/sub inner loops)
  const uint16_t* plus_begin(size_t r) const { return idx_.data() + plus_off_[r]; }
  const uint16_t* plus_end(size_t r) const { return idx_.data() + minus_off_[r]; }
  const uint16_t* minus_begin(size_t r) const { return idx_.data() + minus_off_[r]; }
  const uint16_t* minus_end(size_t r) const { return idx_.data() + plus_off_[r + 1]; }

 private:
  int8_t unpack_at(size_t flat) const {
    uint8_t code = (packed_[flat >> 2] >> ((flat & 3) * 2)) & 3u;
    return code == 1 ? 1 : (code == 2 ? -1 : 0);
  }
  void build_index_lists(const std::vector<int8_t>& trits);

  size_t rows_ = 0, cols_ = 0;
  real scale_ = 1;
  std::vector<uint8_t> packed_;
  // per row: [plus_off_[r], minus_off_[r]) are +1 columns,
  //          [minus_off_[r], plus_off_[r+1]) are -1 columns
  std::vector<uint16_t> idx_;
  std::vector<uint32_t> plus_off_, minus_off_;
};

// absmean quantizer: scale = max(mean|W|, 1e-8), trit = clip(round(W/scale), -1, +1)
TernaryMatrix quantize_absmean(const Tensor& w);

// y = scale * (x . trits), additions/subtractions only, zero trits skipped.
// x is [m x r] (or a length-r vector), result [m x c] (or length-c vector).
Tensor ternary_matmul(const Tensor& x, const TernaryMatrix& t);

// out = g . trits^T, the transpose product used by backward passes:
// out[m x r] from g[m x c]; same add/sub discipline.
Tensor ternary_matmul_transposed(const Tensor& g, const TernaryMatrix& t);

// memory-report size of n ternary parameters, in bits (log2(3) per trit).
// Distinct from the 2-bit runtime packing.
double trit_memory_bits(double n);

// Latent full-precision weights trained through the straight-through
// estimator; the forward pass always sees the quantized cache. A frozen
// linear wraps a fixed TernaryMatrix and never owns a latent tensor.
struct Parameter;  // autodiff.hpp

class QuantizedLinear {
 public:
  // trainable; latent is initialized xavier-uniform over (rows + cols)
  QuantizedLinear(std::string name, size_t rows, size_t cols, bool with_bias, Rng& rng);
  // trainable with caller-provided latent (tests)
  QuantizedLinear(std::string name, Tensor latent, bool with_bias);
  // frozen around a fixed matrix
  explicit QuantizedLinear(std::shared_ptr<const TernaryMatrix> fixed);

  ~QuantizedLinear();
  QuantizedLinear(QuantizedLinear&&) noexcept;
  QuantizedLinear& operator=(QuantizedLinear&&) noexcept;

  bool frozen() const { return frozen_; }
  size_t rows() const;
  size_t cols() const;
  const std::string& name() const { return name_; }

  // quantized view of the current weights; refreshes the cache when the
  // latent changed since the last call (trainable only)
  const TernaryMatrix& cached();
  const TernaryMatrix& cached_const() const;  // no refresh; caller must be current
  void refresh_cache();

  Parameter& latent();
  const Parameter& latent_const() const;
  bool has_bias() const;
  Parameter& bias();
  const Parameter& bias_const() const;
  const TernaryMatrix* fixed_storage() const { return fixed_.get(); }

 private:
  std::string name_;
  bool frozen_ = false;
  std::unique_ptr<Parameter> latent_;
  std::unique_ptr<Parameter> bias_;
  std::shared_ptr<const TernaryMatrix> fixed_;
  TernaryMatrix cache_;
  uint64_t cache_version_ = ~0ull;
};

TLM_NAMESPACE_END
