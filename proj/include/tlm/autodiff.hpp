// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tlm/tensor.hpp"
#include "tlm/ternary.hpp"

TLM_NAMESPACE_BEGIN

// Latent full-precision tensor with a trainable/frozen flag. Frozen
// parameters never allocate a gradient buffer.
struct Parameter {
  Tensor value;
  bool trainable = true;
  std::optional<Tensor> grad;
  std::string name;
  uint64_t version = 0;  // bumped on every optimizer update

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : value(std::move(v)), trainable(train), name(std::move(n)) {}

  void zero_grad() {
    if (grad) std::fill(grad->data.begin(), grad->data.end(), real(0));
  }
  void accumulate(const Tensor& g);
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

enum class EwOp { add, sub, mul, sigmoid, silu, tanh };

// Reservoir term fed into the recurrent scan: h_prev is multiplied by
// w_r scaled with 1/lambda_max inside the traversal.
struct ReservoirTerm {
  const TernaryMatrix* w_r = nullptr;
  real inv_lambda = 1;
};

// Reverse-mode tape. Operations append nodes in execution order; backward
// walks them strictly in reverse. One tape per forward pass; parameter
// gradients are collected locally and applied in first-use order (or
// reduced serially across tapes by the caller).
class Tape {
 public:
  Var leaf(Tensor value);
  Var param(Parameter& p);  // value leaf that routes gradient into p

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var sigmoid(Var a);
  Var silu(Var a);
  Var tanh(Var a);
  Var elementwise(EwOp op, Var a, std::optional<Var> b = std::nullopt);

  Var softmax_axis0(Var m);
  Var cumsum_axis0(Var m);
  // out row k = m row k - m row 0 (the cumax subtraction)
  Var sub_first_row(Var m);
  Var row(Var m, size_t r);
  Var sum(Var a);  // scalar

  // dense x @ W (+ bias); standard backward. Used by tests and by the
  // quantizer-bypass mode of QuantizedLinear forwards.
  Var dense_linear(Var x, Parameter& w, Parameter* bias = nullptr);

  // x through a quantized linear: forward sees the ternary cache, backward
  // applies the straight-through rule with clip-region masking. Frozen
  // linears register no weight gradient (x still gets one).
  Var quant_linear(Var x, QuantizedLinear& lin);

  Var embedding(Parameter& table, std::span<const int> ids);
  Var rmsnorm(Var x, Parameter& gain, real eps);

  // fused recurrent traversal over T timesteps (the MLGRU state update);
  // xf/xc are pre-projected gate inputs [T x d], gamma_k the layer's lower
  // bound [d]. Returns h_seq [T x d].
  Var mlgru_scan(Var xf_proj, Var xc_proj, Var gamma_k, const Tensor& h0,
                 const ReservoirTerm* res = nullptr);

  // mean next-token cross-entropy; logits [T x V], targets length T
  Var cross_entropy(Var logits, std::span<const int> targets);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // zeros if the var never received one

  // Runs reverse-mode from a scalar loss and applies gradients into the
  // bound Parameters (first-use order). Returns the number of distinct
  // trainable parameters whose gradient buffer was touched.
  size_t backward(Var loss);
  // same, but keeps gradients local to the tape (for cross-thread reduction)
  size_t backward_local(Var loss);
  const Tensor* local_grad(const Parameter& p) const;
  // applies local gradients into the parameters, in first-use order
  void apply_local_grads();

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    // backward(gout): propagate into children via accum()/param_accum()
    std::function<void(const Tensor&)> backward;
  };

  Var push(Tensor value, std::function<void(const Tensor&)> bw = nullptr);
  void accum(Var v, const Tensor& g);
  void accum_scaled_sign(Var v, const Tensor& g);
  Tensor& grad_buf(Var v);
  void param_accum(Parameter& p, Tensor g);
  Var binary_op(EwOp op, Var a, Var b);
  Var unary_op(EwOp op, Var a);

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  // parameter grads in first-use order
  std::vector<std::pair<Parameter*, Tensor>> pgrads_;
  std::vector<int> pgrad_index_;  // parallel lookup: hash via pointer scan (few params)
  size_t ops_since_backward_ = 0;

  friend struct ScanOp;
};

TLM_NAMESPACE_END
