#pragma once

// Shared helpers: central-difference gradient checks and random tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "slicegen/autodiff.hpp"
#include "slicegen/random.hpp"

namespace testing {

using slicegen::Shape;
using slicegen::Tensor;
using slicegen::Var;

template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, double lo, double hi, slicegen::Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Real> v(slicegen::shape_size(shape));
  for (Real& x : v) x = static_cast<Real>(d(rng));
  return Tensor<Real>(std::move(shape), std::move(v));
}

/// Values in [lo, hi] kept at least `gap` away from zero (for kinks at 0).
template <typename Real>
Tensor<Real> away_from_zero(Shape shape, double lo, double hi, double gap, slicegen::Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Real> v(slicegen::shape_size(shape));
  for (Real& x : v) {
    double s;
    do s = d(rng);
    while (std::fabs(s) < gap);
    x = static_cast<Real>(s);
  }
  return Tensor<Real>(std::move(shape), std::move(v));
}

template <typename Real>
using ScalarFn = std::function<Var<Real>(const std::vector<Var<Real>>&)>;

struct GradCheck {
  double rel_error = 0.0;  // worst over inputs of |g_a - g_fd| / max(|g_a|, |g_fd|), 2-norms
  double scale = 0.0;      // norm of the analytic gradient
};

/// Compares reverse-mode gradients of a scalar function with central differences.
template <typename Real>
GradCheck gradient_check(const ScalarFn<Real>& f, const std::vector<Tensor<Real>>& inputs, double eps = 1e-3) {
  std::vector<Var<Real>> vars;
  for (const auto& t : inputs) vars.push_back(Var<Real>::parameter(t));
  slicegen::Tape<Real> tape;
  Var<Real> out;
  {
    slicegen::TapeScope<Real> scope(tape);
    out = f(vars);
  }
  tape.backward(out);

  GradCheck result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = vars[k].grad().storage();
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<Real>> args;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<Real> t = inputs[j];
          if (j == k) t[i] = static_cast<Real>(double(t[i]) + delta);
          args.push_back(Var<Real>::constant(t));
        }
        slicegen::NoGradScope<Real> no_grad;
        return double(f(args).item());
      };
      numeric[i] = (eval(eps) - eval(-eps)) / (2.0 * eps);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += double(analytic[i]) * double(analytic[i]);
      nn += numeric[i] * numeric[i];
    }
    // Gradients that vanish identically leave only rounding noise on both sides.
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    result.rel_error = std::max(result.rel_error, std::sqrt(diff) / denom);
    result.scale = std::max(result.scale, std::sqrt(na));
  }
  return result;
}

/// <w, y> for a fixed random weight tensor, turning any op output into a scalar.
template <typename Real>
Var<Real> project(const Var<Real>& y, std::uint64_t seed) {
  slicegen::Rng rng(seed);
  return slicegen::sum(slicegen::mul(y, Var<Real>::constant(uniform_tensor<Real>(y.shape(), -1.0, 1.0, rng))));
}

}  // namespace testing
