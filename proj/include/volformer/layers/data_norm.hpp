#pragma once

#include "volformer/core/tensor.hpp"

namespace volformer {

inline constexpr double kDataNormEpsilon = 1e-6;

/// Per-volume instance normalization: (v - mean(v)) / (std(v) + eps) over all
/// voxels of each volume, population std. Accepts [D×H×W] or a batch
/// [B×D×H×W]. A constant volume maps to zeros.
template <typename T>
Tensor<T> data_norm(const Tensor<T>& volume, T epsilon = T(kDataNormEpsilon));

/// True when every voxel holds the same value (data_norm returns zeros).
template <typename T>
bool is_degenerate_volume(const Tensor<T>& volume);

template <typename T>
class DataNormLayer {
 public:
  explicit DataNormLayer(T epsilon = T(kDataNormEpsilon)) : epsilon_(epsilon) {}
  Tensor<T> forward(const Tensor<T>& x) const { return data_norm(x, epsilon_); }
  T epsilon() const { return epsilon_; }

 private:
  T epsilon_;
};

}  // namespace volformer
