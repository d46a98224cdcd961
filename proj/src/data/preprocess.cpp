#include "volformer/data/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "volformer/core/error.hpp"

namespace volformer {

Extent3 pad_offsets(const Extent3& source, const Extent3& target) {
  Extent3 off{};
  for (std::size_t a = 0; a < 3; ++a) off[a] = source[a] <= target[a] ? (target[a] - source[a]) / 2 : 0;
  return off;
}

Tensor<float> pad_volume(const Tensor<float>& v, const Extent3& target, bool allow_crop) {
  if (v.dim() != 3) throw DimensionError("pad_volume expects [D×H×W], got " + shape_str(v.shape()));
  const Extent3 src{v.size(0), v.size(1), v.size(2)};
  if (!allow_crop) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (src[a] > target[a]) {
        throw ContractError("cannot pad " + extent_str(src) + " to " + extent_str(target) + ": axis " +
                            std::to_string(a) + " has extent " + std::to_string(src[a]) + " > " +
                            std::to_string(target[a]) + " (enable cropping to center-crop it)");
      }
    }
  }
  if (src == target) return v.detach();
  // Per axis, copy src[lo_src, lo_src + len) into out[lo_dst, lo_dst + len).
  Extent3 lo_src{}, lo_dst{}, len{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (src[a] <= target[a]) {
      lo_dst[a] = (target[a] - src[a]) / 2;
      len[a] = src[a];
    } else {
      lo_src[a] = (src[a] - target[a]) / 2;
      len[a] = target[a];
    }
  }
  Tensor<float> out(Shape{target[0], target[1], target[2]});
  auto dst = out.mutable_data();
  const auto in = v.data();
  for (std::size_t d = 0; d < len[0]; ++d)
    for (std::size_t h = 0; h < len[1]; ++h) {
      const std::size_t s = ((lo_src[0] + d) * src[1] + lo_src[1] + h) * src[2] + lo_src[2];
      const std::size_t o = ((lo_dst[0] + d) * target[1] + lo_dst[1] + h) * target[2] + lo_dst[2];
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(s), len[2], dst.begin() + static_cast<std::ptrdiff_t>(o));
    }
  return out;
}

template <typename T>
FcResult compute_fc(const Tensor<T>& series, const Tensor<T>& parcellation, std::size_t p) {
  if (series.dim() != 4) throw DimensionError("compute_fc expects series [T×D×H×W], got " + shape_str(series.shape()));
  if (parcellation.dim() != 3 || parcellation.size(0) != series.size(1) || parcellation.size(1) != series.size(2) ||
      parcellation.size(2) != series.size(3)) {
    throw DimensionError("parcellation " + shape_str(parcellation.shape()) + " does not match series " +
                         shape_str(series.shape()));
  }
  const std::size_t steps = series.size(0), voxels = parcellation.numel();
  if (steps < 3) throw ContractError("compute_fc needs at least 3 time points, got " + std::to_string(steps));
  if (p == 0) throw ContractError("compute_fc needs at least one ROI");

  std::vector<std::size_t> roi_of(voxels);
  std::vector<std::size_t> counts(p + 1, 0);
  const auto labels = parcellation.data();
  for (std::size_t i = 0; i < voxels; ++i) {
    const double id = double(labels[i]);
    if (id < 0 || id > double(p) || id != std::floor(id)) {
      throw DataError("parcellation holds ROI id " + std::to_string(id) + " outside 0.." + std::to_string(p));
    }
    roi_of[i] = static_cast<std::size_t>(id);
    ++counts[roi_of[i]];
  }
  for (std::size_t r = 1; r <= p; ++r)
    if (counts[r] == 0) throw DataError("ROI " + std::to_string(r) + " has no voxels in the parcellation");

  // mean series per ROI, [p × steps]
  std::vector<double> mean(p * steps, 0.0);
  const auto values = series.data();
  for (std::size_t t = 0; t < steps; ++t) {
    const T* frame = values.data() + t * voxels;
    for (std::size_t i = 0; i < voxels; ++i)
      if (roi_of[i]) mean[(roi_of[i] - 1) * steps + t] += double(frame[i]);
  }
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t t = 0; t < steps; ++t) mean[r * steps + t] /= double(counts[r + 1]);

  // center each series and take its population standard deviation
  std::vector<double> sd(p, 0.0);
  FcResult result{Tensor<double>(Shape{p, p}), {}};
  for (std::size_t r = 0; r < p; ++r) {
    double* row = mean.data() + r * steps;
    double m = 0;
    for (std::size_t t = 0; t < steps; ++t) m += row[t];
    m /= double(steps);
    double ss = 0, scale = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      scale = std::max(scale, std::abs(row[t]));
      row[t] -= m;
      ss += row[t] * row[t];
    }
    sd[r] = std::sqrt(ss / double(steps));
    // constant up to rounding of the mean
    if (sd[r] <= 1e-12 * std::max(scale, 1.0)) {
      sd[r] = 0;
      result.flagged.push_back(r + 1);
    }
  }
  auto out = result.matrix.mutable_data();
  for (std::size_t i = 0; i < p; ++i) {
    out[i * p + i] = 1.0;
    for (std::size_t j = i + 1; j < p; ++j) {
      double r = 0;
      if (sd[i] > 0 && sd[j] > 0) {
        double cov = 0;
        for (std::size_t t = 0; t < steps; ++t) cov += mean[i * steps + t] * mean[j * steps + t];
        r = std::clamp(cov / double(steps) / (sd[i] * sd[j]), -1.0, 1.0);
      }
      out[i * p + j] = out[j * p + i] = r;
    }
  }
  return result;
}

template FcResult compute_fc<float>(const Tensor<float>&, const Tensor<float>&, std::size_t);
template FcResult compute_fc<double>(const Tensor<double>&, const Tensor<double>&, std::size_t);

}  // namespace volformer
