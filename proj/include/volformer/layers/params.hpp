#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "volformer/core/random.hpp"
#include "volformer/core/tensor.hpp"

namespace volformer {

/// Named view over a network's state. Tensors are shared handles, so
/// updating `params` updates the owning layers.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> params;   // trainable
  std::vector<std::pair<std::string, Tensor<T>>> buffers;  // running statistics

  void add_param(const std::string& name, const Tensor<T>& t) { params.emplace_back(name, t); }
  void add_buffer(const std::string& name, const Tensor<T>& t) { buffers.emplace_back(name, t); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [name, t] : params) t.zero_grad();
  }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Uniform(-b, b) with b = sqrt(6 / fan_in): He initialization for ReLU nets.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / double(fan_in));
  rng.fill_uniform(t.mutable_data(), -bound, bound);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> trainable(Shape shape, T fill) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

}  // namespace volformer
