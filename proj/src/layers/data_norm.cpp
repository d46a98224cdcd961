#include "volformer/layers/data_norm.hpp"

#include <algorithm>

#include "volformer/core/ops.hpp"

namespace volformer {

template <typename T>
Tensor<T> data_norm(const Tensor<T>& volume, T epsilon) {
  if (volume.dim() != 3 && volume.dim() != 4) {
    throw DimensionError("data_norm expects [D×H×W] or [B×D×H×W], got " + shape_str(volume.shape()));
  }
  const std::size_t first = volume.dim() == 4 ? 1 : 0;
  if (volume.numel() / (first ? volume.size(0) : 1) < 2) {
    throw ContractError("data_norm needs at least two voxels per volume");
  }
  std::vector<std::size_t> axes;
  for (std::size_t ax = first; ax < volume.dim(); ++ax) axes.push_back(ax);
  auto [mu, var] = mean_var(volume, axes);
  return div(sub(volume, mu), add_scalar(sqrt(var), epsilon));
}

template <typename T>
bool is_degenerate_volume(const Tensor<T>& volume) {
  auto v = volume.data();
  return v.empty() || std::all_of(v.begin(), v.end(), [&](T x) { return x == v[0]; });
}

template Tensor<float> data_norm(const Tensor<float>&, float);
template Tensor<double> data_norm(const Tensor<double>&, double);
template bool is_degenerate_volume(const Tensor<float>&);
template bool is_degenerate_volume(const Tensor<double>&);

}  // namespace volformer
