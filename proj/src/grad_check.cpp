// SPDX-License-Identifier: Apache-2.0
#include "hgsg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hgsg/error.hpp"

namespace hgsg {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

double evaluate(const LossFunction& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossFunction& f, std::span<const Tensor> params, double eps, double tolerance,
                           std::vector<std::string> names) {
  if (!(eps > 0.0)) throw ParameterError("grad_check: eps must be positive");
  if (names.empty())
    for (std::size_t i = 0; i < params.size(); ++i) names.push_back("param" + std::to_string(i));
  if (names.size() != params.size()) throw ParameterError("grad_check: one name per parameter required");

  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.leaf(p));
  const Var loss = f(tape, vars);
  const double base = loss.value().item();
  if (evaluate(f, params) != base)
    throw DeterminismError("grad_check: loss function returned different values for identical inputs");
  const Gradients grads = tape.backward(loss);

  GradCheckReport report;
  report.names = std::move(names);
  report.eps = eps;
  report.tolerance = tolerance;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor analytic = grads[vars[pi]];
    double worst = 0.0;
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      auto data = params[pi].to_vector();
      const double x0 = data[i];
      data[i] = x0 + eps;
      probe[pi] = Tensor(params[pi].shape(), data);
      const double up = evaluate(f, probe);
      data[i] = x0 - eps;
      probe[pi] = Tensor(params[pi].shape(), data);
      const double down = evaluate(f, probe);
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
    probe[pi] = params[pi];
    report.max_relative_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
  }
  report.pass = report.worst <= tolerance;
  return report;
}

}  // namespace hgsg
