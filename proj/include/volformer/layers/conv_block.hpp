#pragma once

#include <optional>
#include <string>

#include "volformer/core/ops.hpp"
#include "volformer/layers/params.hpp"

namespace volformer {

/// Bias-free 3D convolution with same padding (pad = k / 2).
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, weight_, stride_, kernel_ / 2); }
  void collect(ParamSet<T>& set, const std::string& prefix) const { set.add_param(join_name(prefix, "weight"), weight_); }

  Tensor<T>& weight() { return weight_; }
  std::size_t stride() const { return stride_; }

 private:
  Tensor<T> weight_;
  std::size_t kernel_ = 3;
  std::size_t stride_ = 1;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, NormMode mode) {
    return batch_norm(x, gamma_, beta_, stats_, mode);
  }
  void collect(ParamSet<T>& set, const std::string& prefix) const;

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  RunningStats<T>& stats() { return stats_; }

 private:
  Tensor<T> gamma_, beta_;
  RunningStats<T> stats_;
};

/// Two 3³ conv + BN layers with a residual connection; the first conv carries
/// the stride. A 1³ conv + BN projection replaces the identity shortcut when
/// the channel count or stride changes.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);

  /// x [B×Cin×D×H×W] → [B×Cout×ceil(D/s)×ceil(H/s)×ceil(W/s)]
  Tensor<T> forward(const Tensor<T>& x, NormMode mode);
  void collect(ParamSet<T>& set, const std::string& prefix) const;

  bool has_projection() const { return shortcut_conv_.has_value(); }
  Conv3d<T>& conv1() { return conv1_; }
  Conv3d<T>& conv2() { return conv2_; }

 private:
  Conv3d<T> conv1_, conv2_;
  BatchNorm<T> bn1_, bn2_;
  std::optional<Conv3d<T>> shortcut_conv_;
  std::optional<BatchNorm<T>> shortcut_bn_;
};

}  // namespace volformer
