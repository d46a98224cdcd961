#include "volformer/localize/grad_cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "volformer/core/log.hpp"
#include "volformer/data/volume_io.hpp"

namespace volformer {

nlohmann::json ActivationMap::sidecar() const {
  return {{"target_class", target_class},
          {"layer", layer},
          {"interpolation", interpolation},
          {"normalization", normalization},
          {"degenerate", degenerate},
          {"raw_max", raw_max},
          {"averaged_maps", averaged},
          {"extent", volume.shape()}};
}

std::vector<std::string> cam_layers(const ModelConfig& cfg) {
  std::vector<std::string> names{"stem"};
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    if (cfg.attention_plan[s] != AttentionKind::none) names.push_back(stage + ".conv");
    names.push_back(stage);
  }
  return names;
}

Tensor<float> upsample_trilinear(const Tensor<float>& map, const Extent3& extent) {
  if (map.dim() != 3) throw DimensionError("upsample_trilinear expects [d×h×w], got " + shape_str(map.shape()));
  const std::array<std::size_t, 3> src{map.size(0), map.size(1), map.size(2)};
  // Per axis: lower source index and weight of the upper neighbor for each target index.
  std::array<std::vector<std::size_t>, 3> lo;
  std::array<std::vector<double>, 3> frac;
  for (std::size_t a = 0; a < 3; ++a) {
    if (extent[a] == 0) throw ContractError("upsample_trilinear target extent must be positive");
    const double ratio = double(src[a]) / double(extent[a]);
    for (std::size_t i = 0; i < extent[a]; ++i) {
      const double c = std::clamp((double(i) + 0.5) * ratio - 0.5, 0.0, double(src[a] - 1));
      const auto f = std::min<std::size_t>(std::size_t(std::floor(c)), src[a] - 1);
      lo[a].push_back(f);
      frac[a].push_back(c - double(f));
    }
  }
  Tensor<float> out(Shape{extent[0], extent[1], extent[2]});
  auto dst = out.mutable_data();
  const auto v = map.data();
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) {
    return double(v[(std::min(z, src[0] - 1) * src[1] + std::min(y, src[1] - 1)) * src[2] + std::min(x, src[2] - 1)]);
  };
  for (std::size_t z = 0; z < extent[0]; ++z)
    for (std::size_t y = 0; y < extent[1]; ++y)
      for (std::size_t x = 0; x < extent[2]; ++x) {
        const std::size_t z0 = lo[0][z], y0 = lo[1][y], x0 = lo[2][x];
        const double fz = frac[0][z], fy = frac[1][y], fx = frac[2][x];
        double acc = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
              if (w != 0) acc += w * at(z0 + dz, y0 + dy, x0 + dx);
            }
        dst[(z * extent[1] + y) * extent[2] + x] = float(acc);
      }
  return out;
}

namespace {
void normalize(ActivationMap& map) {
  auto v = map.volume.mutable_data();
  const float peak = v.empty() ? 0.0f : *std::max_element(v.begin(), v.end());
  map.raw_max = peak;
  map.degenerate = !(peak > 0.0f);
  if (map.degenerate) {
    std::fill(v.begin(), v.end(), 0.0f);
    return;
  }
  for (float& x : v) x = std::clamp(x / peak, 0.0f, 1.0f);
}
}  // namespace

ActivationMap grad_cam(Network<float>& model, const Batch<float>& batch, std::size_t target_class,
                       const std::string& layer) {
  const ModelConfig& cfg = model.config();
  if (batch.size() != 1) throw ContractError("grad_cam takes a single-sample batch, got " + std::to_string(batch.size()));
  if (target_class >= cfg.class_count) {
    throw IndexError("target class " + std::to_string(target_class) + " of a " + std::to_string(cfg.class_count) +
                     "-class model");
  }
  const auto names = cam_layers(cfg);
  const std::string target = layer.empty() ? names.back() : layer;
  if (std::find(names.begin(), names.end(), target) == names.end()) {
    throw ContractError("unknown grad_cam layer '" + target + "'");
  }

  FeatureTrace<float> trace;
  Tensor<float> logits = model.logits(batch, NormMode::eval, &trace);
  const auto it = std::find_if(trace.maps.begin(), trace.maps.end(), [&](const auto& m) { return m.first == target; });
  if (it == trace.maps.end()) throw StateError("layer " + target + " was not recorded by the forward pass");
  Tensor<float> activation = it->second;
  backward(narrow(reshape(logits, Shape{cfg.class_count}), 0, target_class, 1));
  const std::vector<float> grad = activation.grad();
  model.state().zero_grad();

  // activation [1×C×d×h×w]
  const std::size_t channels = activation.size(1), cells = activation.numel() / channels;
  const auto a = activation.data();
  std::vector<double> cam(cells, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double weight = 0;
    for (std::size_t i = 0; i < cells; ++i) weight += grad[c * cells + i];
    weight /= double(cells);
    for (std::size_t i = 0; i < cells; ++i) cam[i] += weight * a[c * cells + i];
  }
  Tensor<float> coarse(Shape{activation.size(2), activation.size(3), activation.size(4)});
  auto dst = coarse.mutable_data();
  for (std::size_t i = 0; i < cells; ++i) dst[i] = float(std::max(cam[i], 0.0));

  ActivationMap map;
  map.volume = upsample_trilinear(coarse, cfg.input_extent);
  map.layer = target;
  map.target_class = target_class;
  normalize(map);
  if (map.degenerate) log_warning("grad_cam: map for class " + std::to_string(target_class) + " at " + target + " is all zero");
  return map;
}

ActivationMap grad_cam(Network<float>& model, const Tensor<float>& volume, std::size_t target_class,
                       const std::string& layer) {
  if (model.config().is_fusion()) throw ContractError("grad_cam on a fusion model needs a full batch");
  if (volume.dim() != 3) throw DimensionError("grad_cam expects a [D×H×W] volume, got " + shape_str(volume.shape()));
  Batch<float> batch;
  batch.fmri = reshape(volume.detach(), Shape{1, volume.size(0), volume.size(1), volume.size(2)});
  return grad_cam(model, batch, target_class, layer);
}

ActivationMap mean_map(const std::vector<ActivationMap>& maps) {
  if (maps.empty()) throw ContractError("mean_map needs at least one map");
  ActivationMap out = maps.front();
  out.volume = Tensor<float>(maps.front().volume.shape());
  out.averaged = 0;
  std::vector<double> acc(out.volume.numel(), 0.0);
  for (const auto& m : maps) {
    if (m.volume.shape() != out.volume.shape() || m.layer != out.layer || m.target_class != out.target_class) {
      throw ContractError("mean_map inputs differ in extent, layer or class");
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.volume.data()[i];
    out.averaged += m.averaged;
  }
  auto dst = out.volume.mutable_data();
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = float(acc[i] / double(maps.size()));
  normalize(out);
  return out;
}

bool in_top_fraction(const ActivationMap& map, const Extent3& voxel, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw ContractError("fraction must lie in (0, 1]");
  if (map.degenerate) return false;
  const Shape& s = map.volume.shape();
  if (voxel[0] >= s[0] || voxel[1] >= s[1] || voxel[2] >= s[2]) throw IndexError("voxel outside the map");
  std::vector<float> values = map.volume.to_vector();
  const auto k = std::max<std::size_t>(1, std::size_t(std::ceil(fraction * double(values.size()))));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end(), std::greater<>());
  const float threshold = values[k - 1];
  return map.volume.at({voxel[0], voxel[1], voxel[2]}) >= threshold;
}

void export_map(const ActivationMap& map, const std::filesystem::path& path, bool slices) {
  if (map.volume.dim() != 3) throw DimensionError("activation map must be [D×H×W]");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_volume(path, map.volume);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + p.string());
  };
  write(path.string() + ".json", map.sidecar().dump(2) + "\n");
  if (!slices) return;
  const Shape& s = map.volume.shape();
  const std::array<const char*, 3> axis_names{"d", "h", "w"};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t mid = s[axis] / 2;
    const std::size_t r_axis = axis == 0 ? 1 : 0, c_axis = axis == 2 ? 1 : 2;
    std::string text;
    for (std::size_t r = 0; r < s[r_axis]; ++r) {
      for (std::size_t c = 0; c < s[c_axis]; ++c) {
        std::array<std::size_t, 3> idx{};
        idx[axis] = mid;
        idx[r_axis] = r;
        idx[c_axis] = c;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", double(map.volume.at({idx[0], idx[1], idx[2]})));
        text += (c ? "," : "") + std::string(buf);
      }
      text += "\n";
    }
    write(path.string() + ".slice_" + axis_names[axis] + std::to_string(mid) + ".csv", text);
  }
}

}  // namespace volformer
