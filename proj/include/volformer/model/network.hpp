#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "volformer/layers/attention.hpp"
#include "volformer/layers/conv_block.hpp"
#include "volformer/layers/dense.hpp"
#include "volformer/model/config.hpp"

namespace volformer {

/// Inputs for one forward pass. Only the branches enabled in the model's
/// config are read; each tensor's leading axis is the batch.
template <typename T>
struct Batch {
  Tensor<T> fmri;   // [B×D×H×W]
  Tensor<T> smri;   // [B×D×H×W]
  Tensor<T> fc;     // [B×fc_input_dim]
  Tensor<T> pheno;  // [B×pheno_input_dim]

  std::size_t size() const { return fmri.defined() ? fmri.size(0) : 0; }
};

/// Intermediate feature maps recorded during a forward pass.
template <typename T>
struct FeatureTrace {
  std::vector<std::pair<std::string, Tensor<T>>> maps;  // stem, stage1.conv, stage1, ...
  std::vector<Tensor<T>> attention_masks;               // one per deep attention block

  const Tensor<T>& last_map() const { return maps.back().second; }
};

/// Data normalization, 7³ stem, residual stages with their attention blocks,
/// and global average pooling: volumes [B×D×H×W] → features [B×C_last].
template <typename T>
class Trunk {
 public:
  Trunk() = default;
  Trunk(const ModelConfig& cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& volumes, NormMode mode, FeatureTrace<T>* trace = nullptr);
  void collect(ParamSet<T>& set, const std::string& prefix) const;
  std::size_t feature_width() const { return width_; }

 private:
  struct Stage {
    std::vector<ResidualBlock<T>> blocks;
    std::optional<SgaBlock<T>> sga;
    std::optional<DgaBlock<T>> dga;
  };

  Extent3 input_extent_{};
  bool use_data_norm_ = true;
  std::size_t width_ = 0;
  Conv3d<T> stem_conv_;
  BatchNorm<T> stem_bn_;
  std::vector<Stage> stages_;
};

/// Common interface of the single-modality classifier and the fusion model.
template <typename T>
class Network {
 public:
  virtual ~Network() = default;

  /// Class scores before softmax, [B×n].
  virtual Tensor<T> logits(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace = nullptr) = 0;
  /// Registers trainable parameters and running-statistics buffers.
  virtual void collect(ParamSet<T>& set) const = 0;
  virtual const ModelConfig& config() const = 0;

  /// softmax(logits), [B×n].
  Tensor<T> probabilities(const Batch<T>& batch, NormMode mode) { return softmax(logits(batch, mode), 1); }
  ParamSet<T> state() const {
    ParamSet<T> set;
    collect(set);
    return set;
  }
};

/// fMRI trunk followed by the fully connected classifier.
template <typename T>
class VolumeClassifier : public Network<T> {
 public:
  explicit VolumeClassifier(const ModelConfig& cfg);

  Tensor<T> logits(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace = nullptr) override;
  void collect(ParamSet<T>& set) const override;
  const ModelConfig& config() const override { return cfg_; }

  ClassifierHead<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  Trunk<T> trunk_;
  ClassifierHead<T> head_;
};

/// Enabled branches (fMRI trunk, sMRI trunk, FC MLP, phenotype MLP) are
/// concatenated and classified by one fully connected layer.
template <typename T>
class FusionModel : public Network<T> {
 public:
  explicit FusionModel(const ModelConfig& cfg);

  Tensor<T> logits(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace = nullptr) override;
  void collect(ParamSet<T>& set) const override;
  const ModelConfig& config() const override { return cfg_; }

  /// Concatenated branch features, [B×fused_width].
  Tensor<T> fused_features(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace = nullptr);
  ClassifierHead<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  Trunk<T> fmri_;
  std::optional<Trunk<T>> smri_;
  std::optional<Mlp<T>> fc_;
  std::optional<Mlp<T>> pheno_;
  ClassifierHead<T> head_;
};

/// VolumeClassifier for single-modality configs, FusionModel otherwise.
template <typename T>
std::unique_ptr<Network<T>> build_network(const ModelConfig& cfg);

/// Probability vector [n] for one padded volume [D×H×W] in eval mode.
template <typename T>
Tensor<T> forward_volume(Network<T>& model, const Tensor<T>& volume);

/// Copies every parameter and buffer of `from` into the same-named entry of
/// `to`. Names absent from `to` are skipped when `allow_missing` is set.
template <typename T>
void copy_state(const Network<T>& from, Network<T>& to, bool allow_missing = false);

}  // namespace volformer
