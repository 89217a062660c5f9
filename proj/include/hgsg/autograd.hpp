// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every operation applied to its Vars in execution order, so
// the recording is topologically sorted by construction. backward() walks it
// once in reverse. A tape and its Vars belong to a single thread; run
// independent tapes for independent work.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hgsg/ops.hpp"
#include "hgsg/tensor.hpp"

namespace hgsg {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  /// Gradient of the loss with respect to v; zeros when v did not influence it.
  Tensor operator[](const Var& v) const;
  bool reached(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

class Tape {
 public:
  /// Given dL/d(output), returns dL/d(input) for every input, in order.
  using BackwardRule = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardRule rule);

  /// Reverse sweep from a scalar loss.
  Gradients backward(const Var& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

/// Test hook: scale every gradient produced by the named op's backward rule
/// by `factor`. Used as a negative control for the gradient checker.
void set_backward_fault(std::string_view op, double factor = 1.5);
void clear_backward_fault();

// Differentiable operations. Every operand must live on the same tape.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var relu(const Var& x);
Var reshape(const Var& x, Shape shape);
Var matmul(const Var& a, const Var& b);
Var batched_matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var conv1x1(const Var& x, const Var& w, const Var& bias);
Var row_reduce_conv(const Var& m, const Var& w, const Var& bias);
Var pool_axis(const Var& x, std::size_t axis, PoolMode mode);
Var broadcast_mul_over_pixels(const Var& x, const Var& m);
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);

/// Training-mode batch norm over x[N x C x L] with per-channel gamma/beta.
/// The batch statistics used are written to *stats when given.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, ops::BatchStats* stats = nullptr);
/// Inference-mode batch norm with fixed statistics.
Var batch_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& variance,
                     double eps);

}  // namespace hgsg
