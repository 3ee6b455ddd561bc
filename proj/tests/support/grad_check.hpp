// SPDX-License-Identifier: Apache-2.0
//
// Test-only oracles: central finite differences and a relative-error metric.
// These evaluate functions on constants only, never through a tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "segkv/autodiff/tape.hpp"
#include "segkv/autodiff/tensor.hpp"
#include "segkv/util/rng.hpp"

namespace segkv::testing {

using ad::Buffer;
using ad::Tensor;

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Tensor with_value(const Tensor& t, std::size_t i, double v) {
  Buffer b(t.values().begin(), t.values().end());
  b[i] = v;
  return Tensor(t.shape(), std::move(b));
}

// d f / d inputs[p][i] by central differences.
inline double central_difference(const ScalarFn& f, std::vector<Tensor> inputs, std::size_t p,
                                 std::size_t i, double h = 1e-5) {
  const Tensor base = inputs[p];
  inputs[p] = with_value(base, i, base[i] + h);
  const double up = f(inputs).item();
  inputs[p] = with_value(base, i, base[i] - h);
  const double down = f(inputs).item();
  return (up - down) / (2.0 * h);
}

inline std::vector<Buffer> analytic_gradients(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  return tape.backward(f(leaves), leaves);
}

// Largest relative error between analytic and numeric gradients over every
// input element.
inline double max_gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                 double h = 1e-5) {
  const auto grads = analytic_gradients(f, inputs);
  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p)
    for (std::size_t i = 0; i < inputs[p].numel(); ++i)
      worst = std::max(worst, rel_err(grads[p][i], central_difference(f, inputs, p, i, h)));
  return worst;
}

inline Tensor random_tensor(Rng& rng, ad::Shape shape, double stddev = 1.0) {
  Buffer b(ad::shape_numel(shape));
  for (double& v : b) v = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(b));
}

}  // namespace segkv::testing
