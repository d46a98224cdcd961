#include "volformer/layers/conv_block.hpp"

namespace volformer {

template <typename T>
Conv3d<T>::Conv3d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng)
    : weight_(kaiming_uniform<T>({out, in, kernel, kernel, kernel}, in * kernel * kernel * kernel, rng)),
      kernel_(kernel),
      stride_(stride) {}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma_(trainable<T>({channels}, T(1))), beta_(trainable<T>({channels}, T(0))), stats_(channels) {}

template <typename T>
void BatchNorm<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  set.add_param(join_name(prefix, "gamma"), gamma_);
  set.add_param(join_name(prefix, "beta"), beta_);
  set.add_buffer(join_name(prefix, "running_mean"), stats_.mean);
  set.add_buffer(join_name(prefix, "running_var"), stats_.var);
  set.add_buffer(join_name(prefix, "updates"), stats_.updates);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : conv1_(in, out, 3, stride, rng), conv2_(out, out, 3, 1, rng), bn1_(out), bn2_(out) {
  if (in != out || stride != 1) {
    shortcut_conv_.emplace(in, out, 1, stride, rng);
    shortcut_bn_.emplace(out);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, NormMode mode) {
  Tensor<T> h = relu(bn1_.forward(conv1_.forward(x), mode));
  h = bn2_.forward(conv2_.forward(h), mode);
  Tensor<T> skip = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x), mode) : x;
  return relu(add(h, skip));
}

template <typename T>
void ResidualBlock<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  conv1_.collect(set, join_name(prefix, "conv1"));
  bn1_.collect(set, join_name(prefix, "bn1"));
  conv2_.collect(set, join_name(prefix, "conv2"));
  bn2_.collect(set, join_name(prefix, "bn2"));
  if (shortcut_conv_) {
    shortcut_conv_->collect(set, join_name(prefix, "shortcut.conv"));
    shortcut_bn_->collect(set, join_name(prefix, "shortcut.bn"));
  }
}

template class Conv3d<float>;
template class Conv3d<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;

}  // namespace volformer
