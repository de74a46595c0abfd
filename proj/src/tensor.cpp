// SPDX-License-Identifier: Apache-2.0
#include "tlm/tensor.hpp"

#include <cmath>
#include <stdexcept>

TLM_NAMESPACE_BEGIN

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

Tensor Tensor::zeros(std::vector<size_t> shape) {
  size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<real>(n, real(0)));
}

Tensor Tensor::full(std::vector<size_t> shape, real value) {
  size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<real>(n, value));
}

bool Tensor::all_finite() const {
  for (real v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  real m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    real d = std::fabs(a.data[i] - b.data[i]);
    if (d > m) m = d;
  }
  return m;
}

TLM_NAMESPACE_END
