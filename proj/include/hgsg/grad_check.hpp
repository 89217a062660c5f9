// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hgsg/autograd.hpp"

namespace hgsg {

/// Builds a scalar loss on `tape` from leaves bound to the parameters.
using LossFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  std::vector<std::string> names;
  std::vector<double> max_relative_error;  // per parameter tensor
  double worst = 0.0;
  double eps = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Compares reverse-mode gradients against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) for every coordinate of every
/// parameter. Relative error is |a - b| / max(|a|, |b|, 1e-8).
/// Throws DeterminismError when two evaluations at the same point differ.
GradCheckReport grad_check(const LossFunction& f, std::span<const Tensor> params, double eps, double tolerance,
                           std::vector<std::string> names = {});

double relative_error(double a, double b);

}  // namespace hgsg
