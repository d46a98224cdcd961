#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "volformer/core/ops.hpp"
#include "volformer/core/random.hpp"

namespace volformer::testing {

inline constexpr double kFiniteDiffStep = 1e-5;

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Central-difference derivative of a scalar loss w.r.t. every element of
/// `inputs`, compared against reverse-mode gradients. Returns the worst
/// relative error over the inputs.
inline double gradcheck(const std::function<Tensor<double>()>& loss_fn,
                        std::vector<Tensor<double>> inputs, double h = kFiniteDiffStep) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> loss = loss_fn();
  backward(loss);
  double worst = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic = t.grad();
    std::vector<double> numeric(t.numel());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// Scalarizes an arbitrary-shape output with fixed random weights so every
/// output element contributes a distinct sensitivity.
inline Tensor<double> weighted_sum(const Tensor<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(out.shape());
  rng.fill_uniform(w.mutable_data(), -1.0, 1.0);
  return sum(mul(out, w));
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  rng.fill_uniform(t.mutable_data(), lo, hi);
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace volformer::testing

namespace volformer::testing {

/// Central differences on `count` randomly chosen scalar entries drawn from
/// `params`; returns the norm-wise relative error over the sampled entries.
inline double sampled_gradcheck(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> params,
                                std::size_t count, std::uint64_t seed, double h = kFiniteDiffStep) {
  for (auto& t : params) t.zero_grad();
  backward(loss_fn());
  Rng rng(seed);
  std::vector<double> analytic, numeric;
  for (std::size_t s = 0; s < count; ++s) {
    Tensor<double>& t = params[rng.below(params.size())];
    const std::size_t i = rng.below(t.numel());
    analytic.push_back(t.grad()[i]);
    auto values = t.mutable_data();
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss_fn().item();
    values[i] = saved - h;
    const double down = loss_fn().item();
    values[i] = saved;
    numeric.push_back((up - down) / (2 * h));
  }
  return relative_error(analytic, numeric);
}

}  // namespace volformer::testing
