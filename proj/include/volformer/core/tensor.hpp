#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "volformer/core/error.hpp"

namespace volformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
using BackwardFn = std::function<void(TensorImpl<T>&)>;

/// Storage and graph linkage for one tensor value. Gradients flow from a
/// node's `grad` into its `inputs` through `backward`.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn<T> backward;
  const char* op = "leaf";

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

/// Dense row-major tensor with reverse-mode autodiff. Copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> values)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Mutable access for leaves (parameter updates, in-place initialization).
  std::span<T> mutable_data() { return impl_->data; }
  std::vector<T> to_vector() const { return impl_->data; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  T at(std::initializer_list<std::size_t> index) const {
    return impl_->data[offset(index)];
  }
  T& at(std::initializer_list<std::size_t> index) {
    return impl_->data[offset(index)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zeros when nothing has flowed in yet.
  std::vector<T> grad() const {
    return impl_->grad.empty() ? std::vector<T>(numel(), T(0)) : impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values with no graph linkage.
  Tensor detach() const { return Tensor(shape(), impl_->data); }
  Tensor clone() const { return detach(); }

  bool is_leaf() const { return !impl_->backward; }
  const char* op_name() const { return impl_->op; }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    const Shape& s = impl_->shape;
    if (index.size() != s.size()) {
      throw IndexError("index rank " + std::to_string(index.size()) +
                       " does not match tensor rank " + std::to_string(s.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= s[axis]) {
        throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
      }
      off = off * s[axis] + i;
      ++axis;
    }
    return off;
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Graph recording switch for the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Topologically ordered list of recorded primitive applications reachable
/// from a root tensor.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  /// Seeds the root gradient with ones and runs every backward rule in
  /// reverse topological order.
  void replay_backward() const;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TensorImpl<T>*>& nodes() const { return nodes_; }

 private:
  std::vector<TensorImpl<T>*> nodes_;  // inputs precede their consumers
};

/// Accumulates d(loss)/d(t) into every reachable tensor t that requires grad.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace volformer
