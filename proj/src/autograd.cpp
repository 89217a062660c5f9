// SPDX-License-Identifier: Apache-2.0
#include "hgsg/autograd.hpp"

#include <cmath>
#include <mutex>

#include "hgsg/error.hpp"
#include "hgsg/kernels.hpp"

namespace hgsg {

namespace {

struct BackwardFault {
  std::mutex mutex;
  std::string op;
  double factor = 1.0;
};

BackwardFault& fault() {
  static BackwardFault f;
  return f;
}

Tape& same_tape(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (v->tape() == nullptr) throw ContractError("operation on an unbound Var");
    if (tape != nullptr && v->tape() != tape) throw ContractError("operands recorded on different tapes");
    tape = v->tape();
  }
  return *tape;
}

Tensor like(const Tensor& t, std::vector<double> data) { return Tensor(t.shape(), std::move(data)); }

void accumulate(std::vector<double>& into, const Tensor& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Tensor Gradients::operator[](const Var& v) const {
  if (reached(v)) return *grads_[v.id()];
  return Tensor::zeros(v.shape());
}

void set_backward_fault(std::string_view op, double factor) {
  std::lock_guard lock(fault().mutex);
  fault().op = op;
  fault().factor = factor;
}

void clear_backward_fault() {
  std::lock_guard lock(fault().mutex);
  fault().op.clear();
  fault().factor = 1.0;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  Node node{op, std::move(value), {}, {}, false};
  for (const auto& in : inputs) {
    if (in.tape() != this) throw ContractError(std::string(op) + ": input recorded on another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape() != this) throw ContractError("backward: loss was recorded on another tape");
  if (loss.value().size() != 1 || loss.value().rank() > 1)
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));

  std::string fault_op;
  double fault_factor = 1.0;
  {
    std::lock_guard lock(fault().mutex);
    fault_op = fault().op;
    fault_factor = fault().factor;
  }

  std::vector<std::optional<std::vector<double>>> acc(nodes_.size());
  acc[loss.id()] = std::vector<double>(1, 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!acc[id]) continue;
    const Node& node = nodes_[id];
    if (!node.rule) continue;
    auto input_grads = node.rule(Tensor(node.value.shape(), *acc[id]));
    const bool corrupt = !fault_op.empty() && fault_op == node.op;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      Tensor g = corrupt ? ops::scale(input_grads[k], fault_factor) : input_grads[k];
      if (!acc[in])
        acc[in] = g.to_vector();
      else
        accumulate(*acc[in], g);
    }
  }

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id)
    if (acc[id]) grads[id] = Tensor(nodes_[id].value.shape(), std::move(*acc[id]));
  return Gradients(std::move(grads));
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  return t.record("add", ops::add(a.value(), b.value()), {a, b},
                  [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  Tensor av = a.value(), bv = b.value();
  return t.record("mul", ops::mul(av, bv), {a, b},
                  [av, bv](const Tensor& g) { return std::vector<Tensor>{ops::mul(g, bv), ops::mul(g, av)}; });
}

Var scale(const Var& a, double factor) {
  Tape& t = same_tape({&a});
  return t.record("scale", ops::scale(a.value(), factor), {a},
                  [factor](const Tensor& g) { return std::vector<Tensor>{ops::scale(g, factor)}; });
}

Var sum(const Var& a) {
  Tape& t = same_tape({&a});
  Shape shape = a.shape();
  return t.record("sum", ops::sum(a.value()), {a},
                  [shape](const Tensor& g) { return std::vector<Tensor>{Tensor::full(shape, g[0])}; });
}

Var relu(const Var& x) {
  Tape& t = same_tape({&x});
  Tensor xv = x.value();
  return t.record("relu", ops::relu(xv), {x}, [xv](const Tensor& g) {
    std::vector<double> dx(g.size());
    // Subgradient at exactly zero is taken as 0.
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? g[i] : 0.0;
    return std::vector<Tensor>{like(g, std::move(dx))};
  });
}

Var reshape(const Var& x, Shape shape) {
  Tape& t = same_tape({&x});
  Shape original = x.shape();
  return t.record("reshape", x.value().reshaped(std::move(shape)), {x},
                  [original](const Tensor& g) { return std::vector<Tensor>{g.reshaped(original)}; });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  Tensor av = a.value(), bv = b.value();
  return t.record("matmul", ops::matmul(av, bv), {a, b}, [av, bv](const Tensor& g) {
    const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    std::vector<double> da(m * k), db(k * n);
    kernels::gemm(g.data(), bv.data(), da, m, n, k, false, true);  // g * b^T
    kernels::gemm(av.data(), g.data(), db, k, m, n, true, false);  // a^T * g
    return std::vector<Tensor>{like(av, std::move(da)), like(bv, std::move(db))};
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  Tensor av = a.value(), bv = b.value();
  return t.record("batched_matmul", ops::batched_matmul(av, bv), {a, b}, [av, bv](const Tensor& g) {
    const auto batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    std::vector<double> da(batch * m * k), db(batch * k * n);
    for (std::size_t i = 0; i < batch; ++i) {
      auto gi = g.data().subspan(i * m * n, m * n);
      kernels::gemm(gi, bv.data().subspan(i * k * n, k * n), std::span(da).subspan(i * m * k, m * k), m, n, k,
                    false, true);
      kernels::gemm(av.data().subspan(i * m * k, m * k), gi, std::span(db).subspan(i * k * n, k * n), k, m, n,
                    true, false);
    }
    return std::vector<Tensor>{like(av, std::move(da)), like(bv, std::move(db))};
  });
}

Var transpose(const Var& a) {
  Tape& t = same_tape({&a});
  return t.record("transpose", ops::transpose(a.value()), {a},
                  [](const Tensor& g) { return std::vector<Tensor>{ops::transpose(g)}; });
}

Var conv1x1(const Var& x, const Var& w, const Var& bias) {
  Tape& t = same_tape({&x, &w, &bias});
  Tensor xv = x.value(), wv = w.value(), bv = bias.value();
  return t.record("conv1x1", ops::conv1x1(xv, wv, bv), {x, w, bias}, [xv, wv, bv](const Tensor& g) {
    const auto n = xv.dim(0), cin = xv.dim(1), l = xv.dim(2), cout = wv.dim(0);
    std::vector<double> dx(xv.size()), dw(wv.size()), db(cout, 0.0);
    kernels::conv1x1_backward_input(g.data(), wv.data(), dx, n, cin, cout, l);
    kernels::conv1x1_backward_weight(g.data(), xv.data(), dw, n, cin, cout, l);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t p = 0; p < l; ++p) db[co] += g[(b * cout + co) * l + p];
    return std::vector<Tensor>{like(xv, std::move(dx)), like(wv, std::move(dw)), like(bv, std::move(db))};
  });
}

Var row_reduce_conv(const Var& m, const Var& w, const Var& bias) {
  Tape& t = same_tape({&m, &w, &bias});
  Tensor mv = m.value(), wv = w.value(), bv = bias.value();
  return t.record("row_reduce_conv", ops::row_reduce_conv(mv, wv, bv), {m, w, bias}, [mv, wv, bv](const Tensor& g) {
    const std::size_t batch = mv.rank() == 3 ? mv.dim(0) : 1;
    const auto rows = mv.dim(mv.rank() - 2), cols = mv.dim(mv.rank() - 1);
    std::vector<double> dm(mv.size()), dw(rows, 0.0), db(1, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < cols; ++c) {
        const double gv = g[b * cols + c];
        db[0] += gv;
        for (std::size_t r = 0; r < rows; ++r) {
          dm[(b * rows + r) * cols + c] = wv[r] * gv;
          dw[r] += mv[(b * rows + r) * cols + c] * gv;
        }
      }
    return std::vector<Tensor>{like(mv, std::move(dm)), like(wv, std::move(dw)), like(bv, std::move(db))};
  });
}

Var pool_axis(const Var& x, std::size_t axis, PoolMode mode) {
  Tape& t = same_tape({&x});
  auto pooled = ops::pool_axis(x.value(), axis, mode);
  Shape in_shape = x.shape();
  const auto extent = in_shape[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  return t.record("pool_axis", std::move(pooled.value), {x},
                  [in_shape, extent, inner, mode, argmax = std::move(pooled.argmax)](const Tensor& g) {
                    std::vector<double> dx(shape_size(in_shape), 0.0);
                    if (mode == PoolMode::Max) {
                      for (std::size_t j = 0; j < g.size(); ++j) dx[argmax[j]] += g[j];
                    } else {
                      const double w = 1.0 / static_cast<double>(extent);
                      for (std::size_t j = 0; j < g.size(); ++j) {
                        const std::size_t o = j / inner, i = j % inner;
                        for (std::size_t e = 0; e < extent; ++e) dx[o * extent * inner + e * inner + i] = g[j] * w;
                      }
                    }
                    return std::vector<Tensor>{Tensor(in_shape, std::move(dx))};
                  });
}

Var broadcast_mul_over_pixels(const Var& x, const Var& m) {
  Tape& t = same_tape({&x, &m});
  Tensor xv = x.value(), mv = m.value();
  return t.record("broadcast_mul_over_pixels", ops::broadcast_mul_over_pixels(xv, mv), {x, m},
                  [xv, mv](const Tensor& g) {
                    const auto rows = xv.dim(0) * xv.dim(1), l = xv.dim(2);
                    std::vector<double> dx(xv.size()), dm(mv.size(), 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t p = 0; p < l; ++p) {
                        dx[r * l + p] = g[r * l + p] * mv[r];
                        dm[r] += g[r * l + p] * xv[r * l + p];
                      }
                    return std::vector<Tensor>{like(xv, std::move(dx)), like(mv, std::move(dm))};
                  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  Tape& t = same_tape({&logits});
  Tensor lv = logits.value();
  Tensor value = ops::cross_entropy(lv, targets);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return t.record("cross_entropy", std::move(value), {logits}, [lv, tg = std::move(tg)](const Tensor& g) {
    Tensor p = ops::softmax(lv);
    const auto n = lv.dim(0), k = lv.dim(1);
    const double w = g[0] / static_cast<double>(n);
    std::vector<double> d(lv.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) d[i * k + j] = w * (p[i * k + j] - (j == tg[i] ? 1.0 : 0.0));
    return std::vector<Tensor>{like(lv, std::move(d))};
  });
}

namespace {

void require_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 3 || gamma.shape() != Shape{x.dim(1)} || beta.shape() != Shape{x.dim(1)})
    throw DimensionError("batch_norm: input " + shape_string(x.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
}

}  // namespace

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, ops::BatchStats* stats) {
  Tape& t = same_tape({&x, &gamma, &beta});
  Tensor xv = x.value(), gv = gamma.value(), bv = beta.value();
  require_bn_shapes(xv, gv, bv);
  auto st = ops::batch_stats(xv);
  if (stats) *stats = st;
  const auto n = xv.dim(0), c = xv.dim(1), l = xv.dim(2);
  std::vector<double> xhat(xv.size()), y(xv.size()), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(st.variance[ch] + eps);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < l; ++p) {
        const auto i = (b * c + ch) * l + p;
        xhat[i] = (xv[i] - st.mean[ch]) * inv_std[ch];
        y[i] = gv[ch] * xhat[i] + bv[ch];
      }
  Tensor xhat_t(xv.shape(), std::move(xhat));
  return t.record("batch_norm", Tensor(xv.shape(), std::move(y)), {x, gamma, beta},
                  [xhat_t, gv, inv_std, n, c, l](const Tensor& g) {
                    const double m = static_cast<double>(n * l);
                    std::vector<double> dx(g.size()), dgamma(c, 0.0), dbeta(c, 0.0);
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t p = 0; p < l; ++p) {
                          const auto i = (b * c + ch) * l + p;
                          dbeta[ch] += g[i];
                          dgamma[ch] += g[i] * xhat_t[i];
                        }
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t p = 0; p < l; ++p) {
                          const auto i = (b * c + ch) * l + p;
                          dx[i] = gv[ch] * inv_std[ch] / m * (m * g[i] - dbeta[ch] - xhat_t[i] * dgamma[ch]);
                        }
                    return std::vector<Tensor>{Tensor(g.shape(), std::move(dx)), Tensor({c}, std::move(dgamma)),
                                               Tensor({c}, std::move(dbeta))};
                  });
}

Var batch_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& variance,
                     double eps) {
  Tape& t = same_tape({&x, &gamma, &beta});
  Tensor xv = x.value(), gv = gamma.value(), bv = beta.value();
  require_bn_shapes(xv, gv, bv);
  const auto n = xv.dim(0), c = xv.dim(1), l = xv.dim(2);
  if (mean.shape() != Shape{c} || variance.shape() != Shape{c})
    throw DimensionError("batch_norm_fixed: running statistics do not match " + std::to_string(c) + " channels");
  std::vector<double> xhat(xv.size()), y(xv.size()), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(variance[ch] + eps);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < l; ++p) {
        const auto i = (b * c + ch) * l + p;
        xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
        y[i] = gv[ch] * xhat[i] + bv[ch];
      }
  Tensor xhat_t(xv.shape(), std::move(xhat));
  return t.record("batch_norm_fixed", Tensor(xv.shape(), std::move(y)), {x, gamma, beta},
                  [xhat_t, gv, inv_std, n, c, l](const Tensor& g) {
                    std::vector<double> dx(g.size()), dgamma(c, 0.0), dbeta(c, 0.0);
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t p = 0; p < l; ++p) {
                          const auto i = (b * c + ch) * l + p;
                          dx[i] = g[i] * gv[ch] * inv_std[ch];
                          dbeta[ch] += g[i];
                          dgamma[ch] += g[i] * xhat_t[i];
                        }
                    return std::vector<Tensor>{Tensor(g.shape(), std::move(dx)), Tensor({c}, std::move(dgamma)),
                                               Tensor({c}, std::move(dbeta))};
                  });
}

}  // namespace hgsg
