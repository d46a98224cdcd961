#pragma once

#include <vector>

#include "volformer/core/tensor.hpp"
#include "volformer/model/config.hpp"

namespace volformer {

/// Low-side padding offset per axis: floor((target - source) / 2).
Extent3 pad_offsets(const Extent3& source, const Extent3& target);

/// Zero-pads v [D×H×W] to `target` with the source centered. Axes larger than
/// the target raise ContractError unless `allow_crop`, which keeps the
/// centered window (floor offset on the low side).
Tensor<float> pad_volume(const Tensor<float>& v, const Extent3& target, bool allow_crop = false);

struct FcResult {
  Tensor<double> matrix;             // [p×p], symmetric, unit diagonal
  std::vector<std::size_t> flagged;  // ROI ids (1-based) whose mean series is constant
};

/// Mean series per ROI (ids 1..p in `parcellation`, 0 = background) and their
/// pairwise Pearson correlation with population moments.
template <typename T>
FcResult compute_fc(const Tensor<T>& series, const Tensor<T>& parcellation, std::size_t p);

}  // namespace volformer
