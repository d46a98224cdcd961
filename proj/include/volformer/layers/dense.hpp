#pragma once

#include <string>
#include <vector>

#include "volformer/core/random.hpp"
#include "volformer/core/tensor.hpp"
#include "volformer/layers/params.hpp"

namespace volformer {

/// y = x·W + b with W stored [in×out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  /// x [M×in] → [M×out]
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParamSet<T>& set, const std::string& prefix) const;

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  std::size_t in_features() const { return weight_.size(0); }
  std::size_t out_features() const { return weight_.size(1); }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;  // undefined when disabled
};

/// Fully connected stack with ReLU between layers (none after the last).
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParamSet<T>& set, const std::string& prefix) const;
  std::size_t out_features() const { return layers_.back().out_features(); }
  std::vector<Linear<T>>& layers() { return layers_; }

 private:
  std::vector<Linear<T>> layers_;
};

/// Final fully connected map from pooled features to class scores.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t features, std::size_t classes, Rng& rng);

  /// f [B×F] → logits [B×n]
  Tensor<T> logits(const Tensor<T>& features) const { return fc_.forward(features); }
  /// softmax over classes; f may be [F] or [B×F]
  Tensor<T> classify(const Tensor<T>& features) const;
  void collect(ParamSet<T>& set, const std::string& prefix) const { fc_.collect(set, prefix); }
  Linear<T>& fc() { return fc_; }
  std::size_t classes() const { return fc_.out_features(); }

 private:
  Linear<T> fc_;
};

}  // namespace volformer
