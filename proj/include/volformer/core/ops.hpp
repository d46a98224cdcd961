#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "volformer/core/tensor.hpp"

namespace volformer {

// Elementwise binary ops broadcast numpy-style (shapes right-aligned, extent 1
// stretches). Backward reduces over the stretched axes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);

/// Sum of all elements, shape {}.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
/// Population mean over `axes`; reduced axes are kept with extent 1.
template <typename T> Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes);
/// Population variance (divisor = count) over `axes`, extents kept.
template <typename T> Tensor<T> variance(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mean_var(const Tensor<T>& x, const std::vector<std::size_t>& axes);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
/// Slice [start, start+length) along `axis`.
template <typename T> Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// [m×k]·[k×n] → [m×n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched product [B×m×k]·[B×k×n]; with transpose_b, b is [B×n×k].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// exp(x - max) / sum(exp(x - max)) along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Zero-padded cross-correlation (no kernel flip). Input [C×D×H×W] or
/// [B×C×D×H×W], kernel [Cout×Cin×kd×kh×kw]. Output extent per axis is
/// (e + 2·pad - k) / stride + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t pad);

enum class NormMode { train, eval };

/// Exponential moving averages kept by batch_norm in train mode.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  Tensor<T> updates;  // shape {1}; count of train-mode batches folded in

  explicit RunningStats(std::size_t channels = 0)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)), updates(Shape{1}, T(0)) {}
  bool populated() const { return updates.data()[0] > T(0); }
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of x [B×C×...]: statistics over batch and all
/// trailing axes in train mode, running statistics in eval mode.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, NormMode mode,
                     T momentum = T(kBatchNormMomentum), T epsilon = T(kBatchNormEpsilon));

/// Mean over all spatial positions: [C×D×H×W] → [C], [B×C×D×H×W] → [B×C].
template <typename T> Tensor<T> avg_pool_global(const Tensor<T>& x);

/// -log p[label] for a probability vector p.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& probs, std::size_t label);

/// Mean softmax cross-entropy over a batch of logits [B×n]. Optional
/// per-class weights scale each sample's term (normalized by the weight sum).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                                const std::vector<T>& class_weights = {});

}  // namespace volformer
