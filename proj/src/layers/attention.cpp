#include "volformer/layers/attention.hpp"

#include <cmath>

namespace volformer {

// ------------------------------------------------------------------------ SGA

template <typename T>
SgaBlock<T>::SgaBlock(std::size_t tokens, std::size_t channels, std::size_t spatial_hidden,
                      std::size_t channel_hidden, Rng& rng)
    : tokens_(tokens),
      channels_(channels),
      spatial_in_(kaiming_uniform<T>({tokens, spatial_hidden}, tokens, rng)),
      spatial_out_(kaiming_uniform<T>({spatial_hidden, tokens}, spatial_hidden, rng)),
      channel_in_(kaiming_uniform<T>({channels, channel_hidden}, channels, rng)),
      channel_out_(trainable<T>({channel_hidden, channels}, T(0))) {}

template <typename T>
void SgaBlock<T>::check_tokens(std::size_t n) const {
  if (n != tokens_) {
    throw DimensionError("SGA block built for " + std::to_string(tokens_) + " tokens received " +
                         std::to_string(n) + "; its spatial weights are specific to the token count");
  }
}

template <typename T>
Tensor<T> SgaBlock<T>::spatial_mix(const Tensor<T>& x_bcn) const {
  const std::size_t b = x_bcn.size(0), c = x_bcn.size(1), n = x_bcn.size(2);
  check_tokens(n);
  Tensor<T> flat = reshape(x_bcn, {b * c, n});
  Tensor<T> mixed = matmul(relu(matmul(flat, spatial_in_)), spatial_out_);
  return add(x_bcn, reshape(mixed, {b, c, n}));
}

template <typename T>
Tensor<T> SgaBlock<T>::channel_mix(const Tensor<T>& x_bnc) const {
  const std::size_t b = x_bnc.size(0), n = x_bnc.size(1), c = x_bnc.size(2);
  Tensor<T> flat = reshape(x_bnc, {b * n, c});
  Tensor<T> mixed = matmul(relu(matmul(flat, channel_in_)), channel_out_);
  return add(x_bnc, reshape(mixed, {b, n, c}));
}

template <typename T>
Tensor<T> SgaBlock<T>::forward_tokens(const Tensor<T>& x) const {
  const bool single = x.dim() == 2;
  if (x.dim() != 2 && x.dim() != 3) throw DimensionError("SGA expects [N×C] or [B×N×C], got " + shape_str(x.shape()));
  Tensor<T> z = single ? reshape(x, {1, x.size(0), x.size(1)}) : x;
  check_tokens(z.size(1));
  if (z.size(2) != channels_) {
    throw DimensionError("SGA block built for " + std::to_string(channels_) + " channels received " +
                         shape_str(x.shape()));
  }
  Tensor<T> spatial = spatial_mix(permute(z, {0, 2, 1}));
  Tensor<T> out = channel_mix(permute(spatial, {0, 2, 1}));
  return single ? reshape(out, x.shape()) : out;
}

template <typename T>
Tensor<T> SgaBlock<T>::forward(const Tensor<T>& x) const {
  if (x.dim() != 5) throw DimensionError("SGA feature map must be [B×C×D×H×W], got " + shape_str(x.shape()));
  const std::size_t b = x.size(0), c = x.size(1), n = x.size(2) * x.size(3) * x.size(4);
  Tensor<T> spatial = spatial_mix(reshape(x, {b, c, n}));
  Tensor<T> mixed = channel_mix(permute(spatial, {0, 2, 1}));
  return reshape(permute(mixed, {0, 2, 1}), x.shape());
}

template <typename T>
void SgaBlock<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  set.add_param(join_name(prefix, "spatial_in"), spatial_in_);
  set.add_param(join_name(prefix, "spatial_out"), spatial_out_);
  set.add_param(join_name(prefix, "channel_in"), channel_in_);
  set.add_param(join_name(prefix, "channel_out"), channel_out_);
}

// ------------------------------------------------------------------------ DGA

template <typename T>
DgaBlock<T>::DgaBlock(std::size_t tokens, std::size_t channels, std::size_t heads, std::size_t ff_hidden, Rng& rng)
    : tokens_(tokens), channels_(channels), heads_(heads) {
  if (heads == 0 || channels % heads != 0) {
    throw DimensionError("DGA channels " + std::to_string(channels) + " do not split into " +
                         std::to_string(heads) + " heads");
  }
  head_width_ = channels / heads;
  position_ = Tensor<T>({tokens, channels});
  rng.fill_normal(position_.mutable_data(), 0.0, kPositionEmbeddingStd);
  position_.set_requires_grad(true);
  qkv_ = kaiming_uniform<T>({channels, heads * 3 * head_width_}, channels, rng);
  proj_ = trainable<T>({heads * head_width_, channels}, T(0));
  ff1_ = kaiming_uniform<T>({channels, ff_hidden}, channels, rng);
  b1_ = trainable<T>({ff_hidden}, T(0));
  ff2_ = kaiming_uniform<T>({ff_hidden, channels}, ff_hidden, rng);
  b2_ = trainable<T>({channels}, T(0));
}

template <typename T>
Tensor<T> DgaBlock<T>::as_batched(const Tensor<T>& z) const {
  if (z.dim() != 2 && z.dim() != 3) throw DimensionError("DGA expects [N×C] or [B×N×C], got " + shape_str(z.shape()));
  Tensor<T> out = z.dim() == 2 ? reshape(z, {1, z.size(0), z.size(1)}) : z;
  if (out.size(1) != tokens_ || out.size(2) != channels_) {
    throw DimensionError("DGA block built for " + std::to_string(tokens_) + " tokens × " +
                         std::to_string(channels_) + " channels received " + shape_str(z.shape()));
  }
  return out;
}

template <typename T>
Tensor<T> DgaBlock<T>::msa(const Tensor<T>& zin, std::vector<Tensor<T>>* masks) const {
  Tensor<T> z = as_batched(zin);
  const std::size_t b = z.size(0), n = tokens_, c = channels_, k = heads_, ch = head_width_;
  if (qkv_.size(1) != k * 3 * ch || proj_.size(0) != k * ch) {
    throw DimensionError("DGA projection shapes " + shape_str(qkv_.shape()) + " / " + shape_str(proj_.shape()) +
                         " disagree with " + std::to_string(k) + " heads of width " + std::to_string(ch));
  }
  Tensor<T> qkv = matmul(reshape(z, {b * n, c}), qkv_);
  // [B·N × k·3·Ch] → [3 × B × k × N × Ch]
  Tensor<T> parts = permute(reshape(qkv, {b, n, k, 3, ch}), {3, 0, 2, 1, 4});
  auto pick = [&](std::size_t i) { return reshape(narrow(parts, 0, i, 1), {b * k, n, ch}); };
  Tensor<T> q = pick(0), key = pick(1), value = pick(2);
  Tensor<T> logits = scale(bmm(q, key, true), T(1) / std::sqrt(T(ch)));
  Tensor<T> mask = softmax(logits, 2);
  if (masks) masks->push_back(mask);
  Tensor<T> heads = bmm(mask, value);  // [B·k × N × Ch]
  Tensor<T> merged = reshape(permute(reshape(heads, {b, k, n, ch}), {0, 2, 1, 3}), {b * n, k * ch});
  return reshape(matmul(merged, proj_), {b, n, c});
}

template <typename T>
Tensor<T> DgaBlock<T>::feed_forward(const Tensor<T>& zin) const {
  Tensor<T> z = as_batched(zin);
  const std::size_t b = z.size(0), n = z.size(1), c = z.size(2);
  Tensor<T> hidden = relu(add(matmul(reshape(z, {b * n, c}), ff1_), b1_));
  return reshape(add(matmul(hidden, ff2_), b2_), {b, n, c});
}

template <typename T>
Tensor<T> DgaBlock<T>::forward_tokens(const Tensor<T>& x, std::vector<Tensor<T>>* masks) const {
  Tensor<T> z0 = add(as_batched(x), position_);
  Tensor<T> z1 = add(z0, msa(z0, masks));
  Tensor<T> z2 = add(z1, feed_forward(z1));
  return x.dim() == 2 ? reshape(z2, x.shape()) : z2;
}

template <typename T>
Tensor<T> DgaBlock<T>::forward(const Tensor<T>& x, std::vector<Tensor<T>>* masks) const {
  if (x.dim() != 5) throw DimensionError("DGA feature map must be [B×C×D×H×W], got " + shape_str(x.shape()));
  const std::size_t b = x.size(0), c = x.size(1), n = x.size(2) * x.size(3) * x.size(4);
  Tensor<T> tokens = permute(reshape(x, {b, c, n}), {0, 2, 1});
  Tensor<T> out = forward_tokens(tokens, masks);
  return reshape(permute(out, {0, 2, 1}), x.shape());
}

template <typename T>
void DgaBlock<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  set.add_param(join_name(prefix, "position"), position_);
  set.add_param(join_name(prefix, "qkv"), qkv_);
  set.add_param(join_name(prefix, "proj"), proj_);
  set.add_param(join_name(prefix, "ff1"), ff1_);
  set.add_param(join_name(prefix, "b1"), b1_);
  set.add_param(join_name(prefix, "ff2"), ff2_);
  set.add_param(join_name(prefix, "b2"), b2_);
}

template class SgaBlock<float>;
template class SgaBlock<double>;
template class DgaBlock<float>;
template class DgaBlock<double>;

}  // namespace volformer
