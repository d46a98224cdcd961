#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "volformer/model/network.hpp"

namespace volformer {

/// Class activation map in input-voxel space, values in [0, 1].
struct ActivationMap {
  Tensor<float> volume;  // [D×H×W]
  std::string layer;     // feature map name, e.g. "stage4"
  std::size_t target_class = 0;
  std::string interpolation = "trilinear";
  std::string normalization = "max";
  bool degenerate = false;  // the rectified map was zero everywhere
  double raw_max = 0;       // peak of the rectified map before normalization
  std::size_t averaged = 1; // number of per-volume maps folded into this one

  nlohmann::json sidecar() const;
};

/// Names of the feature maps grad_cam can target, in forward order.
std::vector<std::string> cam_layers(const ModelConfig& cfg);

/// Gradient-weighted activation map of `layer` (default: the last stage) for
/// a single-sample batch. Runs its own eval-mode forward and backward and
/// clears the parameter gradients it produced.
ActivationMap grad_cam(Network<float>& model, const Batch<float>& batch, std::size_t target_class,
                       const std::string& layer = "");
/// Convenience for fMRI-only models: one volume [D×H×W].
ActivationMap grad_cam(Network<float>& model, const Tensor<float>& volume, std::size_t target_class,
                       const std::string& layer = "");

/// Trilinear resampling of [d×h×w] onto `extent` with half-voxel aligned
/// centers and clamped edges.
Tensor<float> upsample_trilinear(const Tensor<float>& map, const Extent3& extent);

/// Voxelwise mean of maps sharing extent, layer and class, renormalized to max 1.
ActivationMap mean_map(const std::vector<ActivationMap>& maps);

/// True when `voxel` ranks among the ceil(fraction · voxels) highest values
/// (ties at the threshold included). Always false for a degenerate map.
bool in_top_fraction(const ActivationMap& map, const Extent3& voxel, double fraction);

/// Writes the map as a volume file at `path`, its sidecar at `path` + ".json"
/// and, when `slices` is set, the three orthogonal mid-slices as CSV next to it.
void export_map(const ActivationMap& map, const std::filesystem::path& path, bool slices = true);

}  // namespace volformer
