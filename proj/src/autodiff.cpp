// SPDX-License-Identifier: Apache-2.0
#include "tlm/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "tlm/recurrent_kernel.hpp"

TLM_NAMESPACE_BEGIN

void Parameter::accumulate(const Tensor& g) {
  if (!trainable) throw std::logic_error("Parameter::accumulate on frozen parameter " + name);
  if (!grad) grad = Tensor::zeros(value.shape);
  if (!grad->same_shape(g))
    throw std::invalid_argument("Parameter::accumulate: grad shape " + shape_str(g.shape) +
                                " vs value " + shape_str(value.shape));
  for (size_t i = 0; i < g.data.size(); ++i) grad->data[i] += g.data[i];
}

namespace {

const char* ew_name(EwOp op) {
  switch (op) {
    case EwOp::add: return "add";
    case EwOp::sub: return "sub";
    case EwOp::mul: return "mul";
    case EwOp::sigmoid: return "sigmoid";
    case EwOp::silu: return "silu";
    case EwOp::tanh: return "tanh";
  }
  return "?";
}

}  // namespace

Var Tape::push(Tensor value, std::function<void(const Tensor&)> bw) {
  nodes_.push_back(Node{std::move(value), std::move(bw)});
  ++ops_since_backward_;
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) throw std::logic_error("Tape::value: invalid var");
  return nodes_[v.id].value;
}

Tensor& Tape::grad_buf(Var v) {
  auto& slot = grads_[v.id];
  if (!slot) slot = Tensor::zeros(nodes_[v.id].value.shape);
  return *slot;
}

const Tensor& Tape::grad(Var v) const {
  static const Tensor empty;
  if (!v.valid() || static_cast<size_t>(v.id) >= grads_.size() || !grads_[v.id]) return empty;
  return *grads_[v.id];
}

void Tape::accum(Var v, const Tensor& g) {
  Tensor& buf = grad_buf(v);
  for (size_t i = 0; i < g.data.size(); ++i) buf.data[i] += g.data[i];
}

void Tape::param_accum(Parameter& p, Tensor g) {
  if (!p.trainable) return;  // frozen parameters never receive gradients
  for (auto& [ptr, acc] : pgrads_) {
    if (ptr == &p) {
      for (size_t i = 0; i < g.data.size(); ++i) acc.data[i] += g.data[i];
      return;
    }
  }
  pgrads_.emplace_back(&p, std::move(g));
}

Var Tape::leaf(Tensor value) { return push(std::move(value)); }

Var Tape::param(Parameter& p) {
  Parameter* pp = &p;
  Var v = push(p.value, nullptr);
  nodes_[v.id].backward = [this, pp](const Tensor& g) { param_accum(*pp, g); };
  return v;
}

Var Tape::binary_op(EwOp op, Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  bool equal = ta.same_shape(tb);
  bool a_scalar = ta.is_scalar(), b_scalar = tb.is_scalar();
  if (!equal && !a_scalar && !b_scalar)
    throw std::invalid_argument(std::string(ew_name(op)) + ": incompatible shapes " + shape_str(ta.shape) +
                                " vs " + shape_str(tb.shape));
  const Tensor& big = (!equal && a_scalar) ? tb : ta;
  Tensor out = Tensor::zeros(big.shape);
  size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) {
    real va = a_scalar ? ta.data[0] : ta.data[i];
    real vb = b_scalar ? tb.data[0] : tb.data[i];
    out.data[i] = op == EwOp::add ? va + vb : op == EwOp::sub ? va - vb : va * vb;
  }
  return push(std::move(out), [this, op, a, b, a_scalar, b_scalar, n](const Tensor& g) {
    const Tensor& ta2 = value(a);
    const Tensor& tb2 = value(b);
    Tensor& ga = grad_buf(a);
    Tensor& gb = grad_buf(b);
    for (size_t i = 0; i < n; ++i) {
      real gi = g.data[i];
      real da, db;
      switch (op) {
        case EwOp::add: da = gi; db = gi; break;
        case EwOp::sub: da = gi; db = -gi; break;
        default:  // mul
          da = gi * (b_scalar ? tb2.data[0] : tb2.data[i]);
          db = gi * (a_scalar ? ta2.data[0] : ta2.data[i]);
      }
      ga.data[a_scalar ? 0 : i] += da;
      gb.data[b_scalar ? 0 : i] += db;
    }
  });
}

Var Tape::unary_op(EwOp op, Var a) {
  const Tensor& ta = value(a);
  Tensor out = Tensor::zeros(ta.shape);
  for (size_t i = 0; i < ta.numel(); ++i) {
    real x = ta.data[i];
    switch (op) {
      case EwOp::sigmoid: out.data[i] = sigmoid_r(x); break;
      case EwOp::silu: out.data[i] = silu_r(x); break;
      case EwOp::tanh: out.data[i] = std::tanh(x); break;
      default: throw std::logic_error("unary_op: bad op");
    }
  }
  Var r = push(std::move(out), nullptr);
  nodes_[r.id].backward = [this, op, a, r](const Tensor& g) {
    const Tensor& x = value(a);
    const Tensor& y = value(r);
    Tensor& ga = grad_buf(a);
    for (size_t i = 0; i < x.numel(); ++i) {
      real d;
      switch (op) {
        case EwOp::sigmoid: d = y.data[i] * (real(1) - y.data[i]); break;
        case EwOp::silu: d = silu_grad_r(x.data[i]); break;
        default: d = real(1) - y.data[i] * y.data[i];  // tanh
      }
      ga.data[i] += g.data[i] * d;
    }
  };
  return r;
}

Var Tape::add(Var a, Var b) { return binary_op(EwOp::add, a, b); }
Var Tape::sub(Var a, Var b) { return binary_op(EwOp::sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary_op(EwOp::mul, a, b); }
Var Tape::sigmoid(Var a) { return unary_op(EwOp::sigmoid, a); }
Var Tape::silu(Var a) { return unary_op(EwOp::silu, a); }
Var Tape::tanh(Var a) { return unary_op(EwOp::tanh, a); }

Var Tape::elementwise(EwOp op, Var a, std::optional<Var> b) {
  switch (op) {
    case EwOp::add:
    case EwOp::sub:
    case EwOp::mul:
      if (!b) throw std::invalid_argument(std::string(ew_name(op)) + ": second operand required");
      return binary_op(op, a, *b);
    default:
      if (b) throw std::invalid_argument(std::string(ew_name(op)) + ": unary op takes one operand");
      return unary_op(op, a);
  }
}

Var Tape::softmax_axis0(Var m) {
  const Tensor& x = value(m);
  if (x.shape.size() != 2) throw std::invalid_argument("softmax_axis0: expected rank-2, got " + shape_str(x.shape));
  size_t n = x.shape[0], d = x.shape[1];
  Tensor out = Tensor::zeros(x.shape);
  for (size_t j = 0; j < d; ++j) {
    real mx = x.at2(0, j);
    for (size_t k = 1; k < n; ++k) mx = std::max(mx, x.at2(k, j));
    double denom = 0;
    for (size_t k = 0; k < n; ++k) denom += std::exp(double(x.at2(k, j) - mx));
    for (size_t k = 0; k < n; ++k) out.at2(k, j) = static_cast<real>(std::exp(double(x.at2(k, j) - mx)) / denom);
  }
  Var r = push(std::move(out), nullptr);
  nodes_[r.id].backward = [this, m, r, n, d](const Tensor& g) {
    const Tensor& s = value(r);
    Tensor& gm = grad_buf(m);
    for (size_t j = 0; j < d; ++j) {
      double dot = 0;
      for (size_t k = 0; k < n; ++k) dot += double(g.at2(k, j)) * double(s.at2(k, j));
      for (size_t k = 0; k < n; ++k) gm.at2(k, j) += s.at2(k, j) * (g.at2(k, j) - static_cast<real>(dot));
    }
  };
  return r;
}

Var Tape::cumsum_axis0(Var m) {
  const Tensor& x = value(m);
  if (x.shape.size() != 2) throw std::invalid_argument("cumsum_axis0: expected rank-2, got " + shape_str(x.shape));
  size_t n = x.shape[0], d = x.shape[1];
  Tensor out = x;
  for (size_t k = 1; k < n; ++k)
    for (size_t j = 0; j < d; ++j) out.at2(k, j) += out.at2(k - 1, j);
  return push(std::move(out), [this, m, n, d](const Tensor& g) {
    // d in[i] = sum_{k >= i} g[k]
    Tensor& gm = grad_buf(m);
    std::vector<real> acc(d, 0);
    for (size_t k = n; k-- > 0;) {
      for (size_t j = 0; j < d; ++j) {
        acc[j] += g.at2(k, j);
        gm.at2(k, j) += acc[j];
      }
    }
  });
}

Var Tape::sub_first_row(Var m) {
  const Tensor& x = value(m);
  if (x.shape.size() != 2) throw std::invalid_argument("sub_first_row: expected rank-2, got " + shape_str(x.shape));
  size_t n = x.shape[0], d = x.shape[1];
  Tensor out = Tensor::zeros(x.shape);
  for (size_t k = 0; k < n; ++k)
    for (size_t j = 0; j < d; ++j) out.at2(k, j) = x.at2(k, j) - x.at2(0, j);
  return push(std::move(out), [this, m, n, d](const Tensor& g) {
    Tensor& gm = grad_buf(m);
    for (size_t j = 0; j < d; ++j) {
      real colsum = 0;
      for (size_t k = 0; k < n; ++k) colsum += g.at2(k, j);
      for (size_t k = 0; k < n; ++k) gm.at2(k, j) += g.at2(k, j);
      gm.at2(0, j) -= colsum;
    }
  });
}

Var Tape::row(Var m, size_t r) {
  const Tensor& x = value(m);
  if (x.shape.size() != 2) throw std::invalid_argument("row: expected rank-2, got " + shape_str(x.shape));
  if (r >= x.shape[0]) throw std::invalid_argument("row: index " + std::to_string(r) + " out of range");
  size_t d = x.shape[1];
  Tensor out({d}, std::vector<real>(x.row_ptr(r), x.row_ptr(r) + d));
  return push(std::move(out), [this, m, r, d](const Tensor& g) {
    Tensor& gm = grad_buf(m);
    for (size_t j = 0; j < d; ++j) gm.at2(r, j) += g.data[j];
  });
}

Var Tape::sum(Var a) {
  const Tensor& x = value(a);
  double acc = 0;
  for (real v : x.data) acc += v;
  return push(Tensor::scalar(static_cast<real>(acc)), [this, a](const Tensor& g) {
    Tensor& ga = grad_buf(a);
    for (real& v : ga.data) v += g.data[0];
  });
}

Var Tape::dense_linear(Var x, Parameter& w, Parameter* bias) {
  const Tensor& tx = value(x);
  const Tensor& tw = w.value;
  if (tw.shape.size() != 2) throw std::invalid_argument("dense_linear: weight must be rank-2");
  size_t r = tw.shape[0], c = tw.shape[1];
  if (tx.cols() != r)
    throw std::invalid_argument("dense_linear: inner extents differ, x " + shape_str(tx.shape) + " vs w " +
                                shape_str(tw.shape));
  size_t m = tx.rows();
  Tensor y = tx.shape.size() == 1 ? Tensor::zeros({c}) : Tensor::zeros({m, c});
  for (size_t i = 0; i < m; ++i) {
    const real* xi = tx.data.data() + i * r;
    real* yi = y.data.data() + i * c;
    for (size_t k = 0; k < r; ++k) {
      real a = xi[k];
      if (a == real(0)) continue;
      const real* wk = tw.row_ptr(k);
      for (size_t j = 0; j < c; ++j) yi[j] += a * wk[j];
    }
    if (bias)
      for (size_t j = 0; j < c; ++j) yi[j] += bias->value.data[j];
  }
  Parameter* wp = &w;
  return push(std::move(y), [this, x, wp, bias, m, r, c](const Tensor& g) {
    const Tensor& tx2 = value(x);
    const Tensor& tw2 = wp->value;
    Tensor& gx = grad_buf(x);
    // dx = g W^T
    for (size_t i = 0; i < m; ++i) {
      const real* gi = g.data.data() + i * c;
      real* gxi = gx.data.data() + i * r;
      for (size_t k = 0; k < r; ++k) {
        const real* wk = tw2.row_ptr(k);
        double acc = 0;
        for (size_t j = 0; j < c; ++j) acc += double(gi[j]) * double(wk[j]);
        gxi[k] += static_cast<real>(acc);
      }
    }
    if (wp->trainable) {
      Tensor gw = Tensor::zeros({r, c});
      for (size_t i = 0; i < m; ++i) {
        const real* xi = tx2.data.data() + i * r;
        const real* gi = g.data.data() + i * c;
        for (size_t k = 0; k < r; ++k) {
          real a = xi[k];
          if (a == real(0)) continue;
          real* gwk = gw.row_ptr(k);
          for (size_t j = 0; j < c; ++j) gwk[j] += a * gi[j];
        }
      }
      param_accum(*wp, std::move(gw));
    }
    if (bias && bias->trainable) {
      Tensor gb = Tensor::zeros({c});
      for (size_t i = 0; i < m; ++i) {
        const real* gi = g.data.data() + i * c;
        for (size_t j = 0; j < c; ++j) gb.data[j] += gi[j];
      }
      param_accum(*bias, std::move(gb));
    }
  });
}

Var Tape::quant_linear(Var x, QuantizedLinear& lin) {
  const TernaryMatrix& t = lin.cached();
  const Tensor& tx = value(x);
  Tensor y = ternary_matmul(tx, t);
  size_t c = t.cols();
  if (lin.has_bias()) {
    const Tensor& b = lin.bias().value;
    for (size_t i = 0; i < y.rows(); ++i) {
      real* yi = y.data.data() + i * c;
      for (size_t j = 0; j < c; ++j) yi[j] += b.data[j];
    }
  }
  QuantizedLinear* lp = &lin;
  return push(std::move(y), [this, x, lp](const Tensor& g) {
    const TernaryMatrix& t2 = lp->cached_const();
    // dx through the dequantized weights
    Tensor gx = ternary_matmul_transposed(g, t2);
    accum(x, gx);
    if (!lp->frozen()) {
      // straight-through: d latent as if the forward had used the latent
      // directly, masked to zero outside the clip region |latent| <= scale
      const Tensor& tx2 = value(x);
      size_t r = t2.rows(), c2 = t2.cols(), m = tx2.rows();
      Tensor gl = Tensor::zeros({r, c2});
      for (size_t i = 0; i < m; ++i) {
        const real* xi = tx2.data.data() + i * r;
        const real* gi = g.data.data() + i * c2;
        for (size_t k = 0; k < r; ++k) {
          real a = xi[k];
          if (a == real(0)) continue;
          real* glk = gl.row_ptr(k);
          for (size_t j = 0; j < c2; ++j) glk[j] += a * gi[j];
        }
      }
      const Tensor& latent = lp->latent_const().value;
      real beta = t2.scale();
      for (size_t i = 0; i < gl.data.size(); ++i)
        if (std::fabs(latent.data[i]) > beta) gl.data[i] = 0;
      param_accum(lp->latent(), std::move(gl));
      if (lp->has_bias() && lp->bias().trainable) {
        Tensor gb = Tensor::zeros({c2});
        for (size_t i = 0; i < m; ++i) {
          const real* gi = g.data.data() + i * c2;
          for (size_t j = 0; j < c2; ++j) gb.data[j] += gi[j];
        }
        param_accum(lp->bias(), std::move(gb));
      }
    }
  });
}

Var Tape::embedding(Parameter& table, std::span<const int> ids) {
  const Tensor& tab = table.value;
  if (tab.shape.size() != 2) throw std::invalid_argument("embedding: table must be rank-2");
  size_t v = tab.shape[0], d = tab.shape[1];
  Tensor out = Tensor::zeros({ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw std::out_of_range("embedding: token id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    const real* src = tab.row_ptr(static_cast<size_t>(id));
    std::copy(src, src + d, out.row_ptr(i));
  }
  Parameter* tp = &table;
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return push(std::move(out), [this, tp, ids_copy, v, d](const Tensor& g) {
    if (!tp->trainable) return;
    Tensor gt = Tensor::zeros({v, d});
    for (size_t i = 0; i < ids_copy.size(); ++i) {
      real* dst = gt.row_ptr(static_cast<size_t>(ids_copy[i]));
      const real* src = g.row_ptr(i);
      for (size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    param_accum(*tp, std::move(gt));
  });
}

Var Tape::rmsnorm(Var x, Parameter& gain, real eps) {
  const Tensor& tx = value(x);
  size_t d = tx.cols(), m = tx.rows();
  if (gain.value.numel() != d)
    throw std::invalid_argument("rmsnorm: gain size " + std::to_string(gain.value.numel()) + " vs width " + std::to_string(d));
  Tensor out = Tensor::zeros(tx.shape);
  Tensor inv_rms = Tensor::zeros({m});
  for (size_t i = 0; i < m; ++i) {
    const real* xi = tx.data.data() + i * d;
    double ms = 0;
    for (size_t j = 0; j < d; ++j) ms += double(xi[j]) * double(xi[j]);
    real r = static_cast<real>(1.0 / std::sqrt(ms / double(d) + double(eps)));
    inv_rms.data[i] = r;
    real* oi = out.data.data() + i * d;
    for (size_t j = 0; j < d; ++j) oi[j] = xi[j] * r * gain.value.data[j];
  }
  Parameter* gp = &gain;
  return push(std::move(out), [this, x, gp, d, m, inv_rms](const Tensor& g) {
    const Tensor& tx2 = value(x);
    Tensor& gx = grad_buf(x);
    Tensor ggain = Tensor::zeros({d});
    for (size_t i = 0; i < m; ++i) {
      const real* xi = tx2.data.data() + i * d;
      const real* gi = g.data.data() + i * d;
      real* gxi = gx.data.data() + i * d;
      real r = inv_rms.data[i];
      double s = 0;
      for (size_t j = 0; j < d; ++j) {
        real gg = gi[j] * gp->value.data[j];
        s += double(gg) * double(xi[j]);
        gxi[j] += r * gg;
        ggain.data[j] += gi[j] * xi[j] * r;
      }
      real k = static_cast<real>(s) * r * r * r / static_cast<real>(d);
      for (size_t j = 0; j < d; ++j) gxi[j] -= k * xi[j];
    }
    if (gp->trainable) param_accum(*gp, std::move(ggain));
  });
}

Var Tape::mlgru_scan(Var xf_proj, Var xc_proj, Var gamma_k, const Tensor& h0, const ReservoirTerm* res) {
  const Tensor& xf = value(xf_proj);
  const Tensor& xc = value(xc_proj);
  const Tensor& gamma = value(gamma_k);
  if (xf.shape.size() != 2 || !xf.same_shape(xc))
    throw std::invalid_argument("mlgru_scan: xf/xc must be equal rank-2, got " + shape_str(xf.shape) + " vs " +
                                shape_str(xc.shape));
  size_t t_len = xf.shape[0], d = xf.shape[1];
  if (gamma.numel() != d || h0.numel() != d) throw std::invalid_argument("mlgru_scan: gamma/h0 width mismatch");
  if (res && (!res->w_r || res->w_r->rows() != d || res->w_r->cols() != d))
    throw std::invalid_argument("mlgru_scan: reservoir matrix must be d x d");

  Tensor h_seq = Tensor::zeros({t_len, d});
  Tensor f_seq = Tensor::zeros({t_len, d});
  Tensor c_seq = Tensor::zeros({t_len, d});
  Tensor cpre_seq = Tensor::zeros({t_len, d});
  std::vector<real> rbuf(res ? d : 0);
  const real* h_prev = h0.data.data();
  for (size_t t = 0; t < t_len; ++t) {
    const real* xct = xc.row_ptr(t);
    real* cpre = cpre_seq.row_ptr(t);
    if (res) {
      Tensor hp({d}, std::vector<real>(h_prev, h_prev + d));
      Tensor r = ternary_matmul(hp, *res->w_r);
      for (size_t j = 0; j < d; ++j) rbuf[j] = r.data[j] * res->inv_lambda;
      for (size_t j = 0; j < d; ++j) cpre[j] = xct[j] + rbuf[j];
    } else {
      std::copy(xct, xct + d, cpre);
    }
    recurrent_step(d, xf.row_ptr(t), xct, res ? rbuf.data() : nullptr, gamma.data.data(), h_prev,
                   f_seq.row_ptr(t), c_seq.row_ptr(t), h_seq.row_ptr(t));
    h_prev = h_seq.row_ptr(t);
  }

  ReservoirTerm res_copy = res ? *res : ReservoirTerm{};
  bool has_res = res != nullptr;
  Tensor h0_copy = h0;
  Var out = push(std::move(h_seq), nullptr);
  Var self = out;
  nodes_[out.id].backward = [this, xf_proj, xc_proj, gamma_k, self, f_seq = std::move(f_seq),
                             c_seq = std::move(c_seq), cpre_seq = std::move(cpre_seq), h0_copy = std::move(h0_copy),
                             res_copy, has_res, t_len, d](const Tensor& g) {
    const Tensor& gamma = value(gamma_k);
    const Tensor& h_seq2 = value(self);
    Tensor& gxf = grad_buf(xf_proj);
    Tensor& gxc = grad_buf(xc_proj);
    Tensor& ggamma = grad_buf(gamma_k);
    std::vector<real> carry(d, 0);
    Tensor dcpre_row = Tensor::zeros({d});
    for (size_t t = t_len; t-- > 0;) {
      const real* gt = g.row_ptr(t);
      const real* ft = f_seq.row_ptr(t);
      const real* ct = c_seq.row_ptr(t);
      const real* cpret = cpre_seq.row_ptr(t);
      const real* hprev = t > 0 ? h_seq2.row_ptr(t - 1) : h0_copy.data.data();
      real* gxft = gxf.row_ptr(t);
      real* gxct = gxc.row_ptr(t);
      for (size_t j = 0; j < d; ++j) {
        real dh = gt[j] + carry[j];
        real gm = gamma.data[j];
        real fp = gm + (real(1) - gm) * ft[j];
        real dfp = dh * (hprev[j] - ct[j]);
        carry[j] = dh * fp;
        real dc = dh * (real(1) - fp);
        real dcpre = dc * silu_grad_r(cpret[j]);
        gxct[j] += dcpre;
        dcpre_row.data[j] = dcpre;
        real df = dfp * (real(1) - gm);
        ggamma.data[j] += dfp * (real(1) - ft[j]);
        gxft[j] += df * ft[j] * (real(1) - ft[j]);
      }
      if (has_res) {
        Tensor dh_extra = ternary_matmul_transposed(dcpre_row, *res_copy.w_r);
        for (size_t j = 0; j < d; ++j) carry[j] += dh_extra.data[j] * res_copy.inv_lambda;
      }
    }
  };
  return out;
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& z = value(logits);
  if (z.shape.size() != 2) throw std::invalid_argument("cross_entropy: logits must be rank-2");
  size_t t_len = z.shape[0], v = z.shape[1];
  if (targets.size() != t_len)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(t_len) + " rows");
  Tensor probs = Tensor::zeros({t_len, v});
  double loss = 0;
  for (size_t t = 0; t < t_len; ++t) {
    int y = targets[t];
    if (y < 0 || static_cast<size_t>(y) >= v) throw std::out_of_range("cross_entropy: target out of range");
    const real* zt = z.row_ptr(t);
    real mx = zt[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, zt[j]);
    double denom = 0;
    for (size_t j = 0; j < v; ++j) denom += std::exp(double(zt[j] - mx));
    real* pt = probs.row_ptr(t);
    for (size_t j = 0; j < v; ++j) pt[j] = static_cast<real>(std::exp(double(zt[j] - mx)) / denom);
    loss += std::log(denom) + double(mx) - double(zt[y]);
  }
  loss /= double(t_len);
  std::vector<int> tgt(targets.begin(), targets.end());
  return push(Tensor::scalar(static_cast<real>(loss)),
              [this, logits, probs = std::move(probs), tgt = std::move(tgt), t_len, v](const Tensor& g) {
                real scale = g.data[0] / static_cast<real>(t_len);
                Tensor& gz = grad_buf(logits);
                for (size_t t = 0; t < t_len; ++t) {
                  const real* pt = probs.row_ptr(t);
                  real* gzt = gz.row_ptr(t);
                  for (size_t j = 0; j < v; ++j) gzt[j] += scale * pt[j];
                  gzt[static_cast<size_t>(tgt[t])] -= scale;
                }
              });
}

size_t Tape::backward_local(Var loss) {
  if (ops_since_backward_ == 0)
    throw std::logic_error("Tape::backward: called twice without recording new forward operations");
  if (!loss.valid() || static_cast<size_t>(loss.id) >= nodes_.size())
    throw std::logic_error("Tape::backward: invalid loss var");
  if (!value(loss).is_scalar())
    throw std::invalid_argument("Tape::backward: loss must be scalar, got " + shape_str(value(loss).shape));
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.id] = Tensor::scalar(1);
  // strict reverse execution order
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (!grads_[i]) continue;
    if (nodes_[i].backward) nodes_[i].backward(*grads_[i]);
  }
  ops_since_backward_ = 0;
  return pgrads_.size();
}

size_t Tape::backward(Var loss) {
  size_t touched = backward_local(loss);
  apply_local_grads();
  return touched;
}

void Tape::apply_local_grads() {
  for (auto& [p, g] : pgrads_) p->accumulate(g);
  pgrads_.clear();
}

const Tensor* Tape::local_grad(const Parameter& p) const {
  for (const auto& [ptr, g] : pgrads_)
    if (ptr == &p) return &g;
  return nullptr;
}

TLM_NAMESPACE_END
