#pragma once

#include <string>
#include <vector>

#include "volformer/core/ops.hpp"
#include "volformer/layers/params.hpp"

namespace volformer {

/// Shallow global attention: an MLP across token positions (per channel)
/// followed by an MLP across channels (per token), each with a residual.
/// Cost and parameter count are linear in the token count N; no N×N
/// intermediate exists.
///
/// Weights are stored for row-vector products:
///   spatial_in  [N×hs], spatial_out [hs×N]   (token mixing)
///   channel_in  [C×hc], channel_out [hc×C]   (channel mixing, out zero-init)
template <typename T>
class SgaBlock {
 public:
  SgaBlock() = default;
  SgaBlock(std::size_t tokens, std::size_t channels, std::size_t spatial_hidden,
           std::size_t channel_hidden, Rng& rng);

  /// x [N×C] or [B×N×C] → same shape
  Tensor<T> forward_tokens(const Tensor<T>& x) const;
  /// feature map [B×C×D×H×W] with D·H·W == N → same shape
  Tensor<T> forward(const Tensor<T>& x) const;

  /// x' = x + mix over tokens; input and output [B×C×N].
  Tensor<T> spatial_mix(const Tensor<T>& x_bcn) const;
  /// x'' = x' + mix over channels; input and output [B×N×C].
  Tensor<T> channel_mix(const Tensor<T>& x_bnc) const;

  void collect(ParamSet<T>& set, const std::string& prefix) const;

  std::size_t tokens() const { return tokens_; }
  std::size_t channels() const { return channels_; }
  Tensor<T>& spatial_in() { return spatial_in_; }
  Tensor<T>& spatial_out() { return spatial_out_; }
  Tensor<T>& channel_in() { return channel_in_; }
  Tensor<T>& channel_out() { return channel_out_; }

 private:
  void check_tokens(std::size_t n) const;

  std::size_t tokens_ = 0, channels_ = 0;
  Tensor<T> spatial_in_, spatial_out_, channel_in_, channel_out_;
};

/// Deep global attention: learned position embedding, multi-head
/// self-attention and a two-layer feed-forward, both residual:
///   z0 = x + E_pos,  z1 = z0 + MSA(z0),  z2 = z1 + FF(z1).
///
/// The qkv weight [C × heads·3·Ch] holds each head's [q|k|v] projection in
/// consecutive column blocks. The output projection [heads·Ch × C] starts at
/// zero, so z1 == z0 at initialization.
template <typename T>
class DgaBlock {
 public:
  DgaBlock() = default;
  DgaBlock(std::size_t tokens, std::size_t channels, std::size_t heads, std::size_t ff_hidden, Rng& rng);

  /// z [N×C] or [B×N×C]. When `masks` is given it receives one [B·heads×N×N]
  /// tensor of attention probabilities.
  Tensor<T> forward_tokens(const Tensor<T>& x, std::vector<Tensor<T>>* masks = nullptr) const;
  /// feature map [B×C×D×H×W] → same shape
  Tensor<T> forward(const Tensor<T>& x, std::vector<Tensor<T>>* masks = nullptr) const;

  /// Multi-head self-attention output (without the residual), [B×N×C].
  Tensor<T> msa(const Tensor<T>& z, std::vector<Tensor<T>>* masks = nullptr) const;
  /// max(0, z·W3 + b1)·W4 + b2 (without the residual), [B×N×C].
  Tensor<T> feed_forward(const Tensor<T>& z) const;

  void collect(ParamSet<T>& set, const std::string& prefix) const;

  std::size_t tokens() const { return tokens_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_width() const { return head_width_; }
  std::size_t ff_hidden() const { return ff1_.size(1); }
  Tensor<T>& position() { return position_; }
  Tensor<T>& qkv() { return qkv_; }
  Tensor<T>& proj() { return proj_; }
  Tensor<T>& ff1() { return ff1_; }
  Tensor<T>& b1() { return b1_; }
  Tensor<T>& ff2() { return ff2_; }
  Tensor<T>& b2() { return b2_; }

 private:
  Tensor<T> as_batched(const Tensor<T>& z) const;

  std::size_t tokens_ = 0, channels_ = 0, heads_ = 0, head_width_ = 0;
  Tensor<T> position_, qkv_, proj_, ff1_, b1_, ff2_, b2_;
};

inline constexpr double kPositionEmbeddingStd = 0.02;

}  // namespace volformer
