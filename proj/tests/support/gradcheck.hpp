#pragma once

// Finite-difference oracle. Only evaluates `f` forward; the analytic side
// comes from psyn::backward.

#include <cmath>
#include <functional>
#include <vector>

#include "psyn/autograd.hpp"
#include "psyn/rng.hpp"
#include "psyn/tensor.hpp"

namespace psyn::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            DType dt = DType::f64) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, dt);
}

/// Central differences of f with respect to inputs[which].
inline std::vector<double> numeric_grad(const ScalarFn& f, std::vector<Tensor> inputs,
                                        std::size_t which, double h = 1e-5) {
  NoGradGuard guard;
  auto base = inputs[which].values();
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    inputs[which] = Tensor::from_values(inputs[which].shape(), plus, inputs[which].dtype());
    const double fp = f(inputs).item();
    inputs[which] = Tensor::from_values(inputs[which].shape(), minus, inputs[which].dtype());
    const double fm = f(inputs).item();
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
  return std::sqrt(diff) / denom;
}

/// Worst relative error over all inputs between autodiff and central differences.
inline double gradcheck(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t = t.detach().set_requires_grad(true);
  Tensor loss = f(inputs);
  auto grads = backward(loss, std::span<const Tensor>(inputs), false);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto num = numeric_grad(f, inputs, k, h);
    worst = std::max(worst, relative_error(grads[k].values(), num));
  }
  return worst;
}

}  // namespace psyn::testing
