// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tlm/real.hpp"

TLM_NAMESPACE_BEGIN

// Dense row-major tensor. Rank is dynamic but the model only ever builds
// rank-1 vectors and rank-2 matrices.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<real> data;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, real value);
  static Tensor scalar(real value) { return Tensor({1}, {value}); }

  size_t numel() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }
  // rank-2 accessors; a rank-1 tensor counts as a single row
  size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  real& at(size_t i) { return data[i]; }
  real at(size_t i) const { return data[i]; }
  real& at2(size_t r, size_t c) { return data[r * cols() + c]; }
  real at2(size_t r, size_t c) const { return data[r * cols() + c]; }
  const real* row_ptr(size_t r) const { return data.data() + r * cols(); }
  real* row_ptr(size_t r) { return data.data() + r * cols(); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

std::string shape_str(const std::vector<size_t>& shape);
size_t shape_numel(const std::vector<size_t>& shape);

// max |a-b| over all entries; shapes must match
real max_abs_diff(const Tensor& a, const Tensor& b);

TLM_NAMESPACE_END
