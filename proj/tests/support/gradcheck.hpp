#pragma once

// Central finite-difference oracle for reverse-mode gradients. Independent of
// the autodiff path: it only evaluates forward passes.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "deeplung/ops.hpp"
#include "deeplung/tensor.hpp"

namespace deeplung::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst norm-wise relative error over inputs
  bool finite = true;
};

/// `fn` maps the inputs to a scalar. Inputs are perturbed in place.
inline GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                  std::vector<Tensor> inputs, double h = 1e-5) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = fn(inputs);
  loss.backward();

  GradCheckResult result;
  for (Tensor& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(analytic.size());
    {
      NoGradGuard guard;
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double orig = t[static_cast<Index>(i)];
        t[static_cast<Index>(i)] = orig + h;
        const double fp = fn(inputs).item();
        t[static_cast<Index>(i)] = orig - h;
        const double fm = fn(inputs).item();
        t[static_cast<Index>(i)] = orig;
        numeric[i] = (fp - fm) / (2.0 * h);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
      result.finite = result.finite && std::isfinite(analytic[i]) && std::isfinite(numeric[i]);
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff) / denom);
  }
  return result;
}

/// Scalarizes an arbitrary output with fixed random weights so every output
/// element contributes a distinct cotangent.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor r = Tensor::randn(y.shape(), rng);
  return sum(mul(y, r));
}

}  // namespace deeplung::testing
