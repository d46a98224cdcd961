#include "volformer/layers/dense.hpp"

#include "volformer/core/ops.hpp"

namespace volformer {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(kaiming_uniform<T>({in, out}, in, rng)) {
  if (bias) bias_ = trainable<T>({out}, T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  Tensor<T> y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

template <typename T>
void Linear<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  set.add_param(join_name(prefix, "weight"), weight_);
  if (bias_.defined()) set.add_param(join_name(prefix, "bias"), bias_);
}

template <typename T>
Mlp<T>::Mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw ContractError("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

template <typename T>
void Mlp<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(set, join_name(prefix, "fc" + std::to_string(i)));
}

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t features, std::size_t classes, Rng& rng) : fc_(features, classes, rng) {
  if (classes < 2) throw ContractError("classifier needs at least two classes");
}

template <typename T>
Tensor<T> ClassifierHead<T>::classify(const Tensor<T>& features) const {
  if (features.dim() == 1) {
    Tensor<T> row = reshape(features, {1, features.numel()});
    return reshape(softmax(fc_.forward(row), 1), {classes()});
  }
  return softmax(fc_.forward(features), 1);
}

template class Linear<float>;
template class Linear<double>;
template class Mlp<float>;
template class Mlp<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;

}  // namespace volformer
