#include "volformer/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "volformer/core/op_counter.hpp"
#include "volformer/core/parallel.hpp"

namespace volformer {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs,
                      BackwardFn<T> fn, const char* op) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool link = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) link = link || in->requires_grad;
  }
  if (link) {
    impl->requires_grad = true;
    impl->inputs = std::move(inputs);
    impl->backward = std::move(fn);
    impl->op = op;
  }
  return Tensor<T>(std::move(impl));
}

// Strides into each operand per output axis; 0 marks a stretched axis.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  auto sa = contiguous_strides(pa);
  auto sb = contiguous_strides(pb);
  p.out.resize(rank);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <class F>
void walk(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * p.out[ax];
      ib -= p.stride_b[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T, class Fwd, class Da, class Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Da da, Db db, const char* name) {
  Broadcast plan = plan_broadcast(a.shape(), b.shape());
  std::vector<T> out(shape_numel(plan.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(pa[ia], pb[ib]); });
  add_op_count(out.size());
  Shape shape = plan.out;
  return make_result<T>(
      std::move(shape), std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [plan, da, db](TensorImpl<T>& self) {
        TensorImpl<T>& A = *self.inputs[0];
        TensorImpl<T>& B = *self.inputs[1];
        const T* g = self.grad.data();
        const T* y = self.data.data();
        const T* xa = A.data.data();
        const T* xb = B.data.data();
        if (A.requires_grad) {
          T* ga = A.grad_buffer();
          walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += g[i] * da(xa[ia], xb[ib], y[i]);
          });
        }
        if (B.requires_grad) {
          T* gb = B.grad_buffer();
          walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += g[i] * db(xa[ia], xb[ib], y[i]);
          });
        }
      },
      name);
}

template <typename T, class Fwd, class Dx>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Dx dx, const char* name) {
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
  add_op_count(out.size());
  return make_result<T>(
      x.shape(), std::move(out), {x.impl_ptr()},
      [dx](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += g[i] * dx(X.data[i], self.data[i]);
      },
      name);
}

Shape keepdim_shape(const Shape& shape, const std::vector<std::size_t>& axes) {
  Shape out = shape;
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) {
      throw DimensionError("reduction axis " + std::to_string(ax) + " out of range for " +
                           shape_str(shape));
    }
    out[ax] = 1;
  }
  return out;
}

// Splits a shape around `axis` into outer × extent × inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// First and last output index o with 0 <= o*stride - pad + tap < extent.
struct TapRange {
  std::ptrdiff_t lo, hi;  // half-open
};

TapRange tap_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                   std::size_t pad, std::size_t tap) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto shift = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  const std::ptrdiff_t last_in = static_cast<std::ptrdiff_t>(in_extent) - 1 - shift;
  std::ptrdiff_t hi = last_in < 0 ? 0 : last_in / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
                [](T, T, T) { return T(1); }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
                [](T, T, T) { return T(-1); }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
                [](T x, T, T) { return x; }, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
                [](T x, T y, T) { return -x / (y * y); }, "div");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary(x, [value](T v) { return v + value; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  // Subgradient at exactly 0 is 0.
  return unary(x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; }, "sqrt");
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, "exp");
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; }, "log");
}

// ----------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  add_op_count(x.numel());
  return make_result<T>(
      Shape{}, {static_cast<T>(acc)}, {x.impl_ptr()},
      [](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < X.data.size(); ++i) gx[i] += g;
      },
      "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  Shape out_shape = keepdim_shape(x.shape(), axes);
  const std::size_t count = x.numel() / shape_numel(out_shape);
  if (count == 0) throw ContractError("mean over an empty extent");
  Broadcast plan = plan_broadcast(x.shape(), out_shape);
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const T* px = x.data().data();
  walk(plan, [&](std::size_t, std::size_t ix, std::size_t io) { acc[io] += px[ix]; });
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i] / double(count));
  add_op_count(x.numel());
  return make_result<T>(
      std::move(out_shape), std::move(out), {x.impl_ptr()},
      [plan, count](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T* g = self.grad.data();
        const T inv = T(1) / static_cast<T>(count);
        walk(plan, [&](std::size_t, std::size_t ix, std::size_t io) { gx[ix] += g[io] * inv; });
      },
      "mean");
}

template <typename T>
Tensor<T> variance(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  Shape out_shape = keepdim_shape(x.shape(), axes);
  const std::size_t count = x.numel() / shape_numel(out_shape);
  if (count == 0) throw ContractError("variance over an empty extent");
  Broadcast plan = plan_broadcast(x.shape(), out_shape);
  const std::size_t groups = shape_numel(out_shape);
  std::vector<double> mu(groups, 0.0), acc(groups, 0.0);
  const T* px = x.data().data();
  walk(plan, [&](std::size_t, std::size_t ix, std::size_t io) { mu[io] += px[ix]; });
  for (double& m : mu) m /= double(count);
  walk(plan, [&](std::size_t, std::size_t ix, std::size_t io) {
    const double d = px[ix] - mu[io];
    acc[io] += d * d;
  });
  std::vector<T> out(groups);
  for (std::size_t i = 0; i < groups; ++i) out[i] = static_cast<T>(acc[i] / double(count));
  add_op_count(2 * x.numel());
  return make_result<T>(
      std::move(out_shape), std::move(out), {x.impl_ptr()},
      [plan, count, mu](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T* g = self.grad.data();
        const double k = 2.0 / double(count);
        walk(plan, [&](std::size_t, std::size_t ix, std::size_t io) {
          gx[ix] += static_cast<T>(g[io] * k * (X.data[ix] - mu[io]));
        });
      },
      "variance");
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mean_var(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  return {mean(x, axes), variance(x, axes)};
}

// --------------------------------------------------------------------- layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return make_result<T>(
      std::move(shape), x.to_vector(), {x.impl_ptr()},
      [](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
      },
      "reshape");
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (order.size() != rank) {
    throw DimensionError("permute order has " + std::to_string(order.size()) +
                         " axes for tensor " + shape_str(in));
  }
  std::vector<bool> seen(rank, false);
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (order[i] >= rank || seen[order[i]]) throw DimensionError("invalid permutation order");
    seen[order[i]] = true;
    out[i] = in[order[i]];
  }
  const auto in_strides = contiguous_strides(in);
  // Source offset for each output element, computed once and shared with backward.
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < index->size(); ++i) {
      (*index)[i] = src;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        src += in_strides[order[ax]];
        if (idx[ax] < out[ax]) break;
        src -= in_strides[order[ax]] * out[ax];
        idx[ax] = 0;
      }
    }
  }
  std::vector<T> data(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = px[(*index)[i]];
  return make_result<T>(
      std::move(out), std::move(data), {x.impl_ptr()},
      [index](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*index)[i]] += self.grad[i];
      },
      "permute");
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  AxisSplit s = split_at(x.shape(), axis);
  if (start + length > s.extent) {
    throw DimensionError("narrow [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out = x.shape();
  out[axis] = length;
  std::vector<T> data(shape_numel(out));
  const T* px = x.data().data();
  const std::size_t run = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(px + (o * s.extent + start) * s.inner, run, data.data() + o * run);
  }
  return make_result<T>(
      std::move(out), std::move(data), {x.impl_ptr()},
      [s, start, run](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          T* dst = gx + (o * s.extent + start) * s.inner;
          const T* src = self.grad.data() + o * run;
          for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
        }
      },
      "narrow");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape out = parts[0].shape();
  if (axis >= out.size()) throw DimensionError("concat axis out of range for " + shape_str(out));
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out.size()) throw DimensionError("concat rank mismatch at " + shape_str(probe));
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != parts[0].shape()[i]) {
        throw DimensionError("concat extent mismatch: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(probe));
      }
    }
    out[axis] += probe[axis];
  }
  AxisSplit total = split_at(out, axis);
  std::vector<T> data(shape_numel(out));
  std::vector<std::size_t> offsets;
  std::vector<ImplPtr<T>> inputs;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t run = p.shape()[axis] * total.inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(src + o * run, run, data.data() + (o * total.extent + offset) * total.inner);
    }
    offsets.push_back(offset);
    offset += p.shape()[axis];
    inputs.push_back(p.impl_ptr());
  }
  return make_result<T>(
      std::move(out), std::move(data), std::move(inputs),
      [total, offsets, axis](TensorImpl<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          TensorImpl<T>& P = *self.inputs[k];
          if (!P.requires_grad) continue;
          T* gp = P.grad_buffer();
          const std::size_t run = P.shape[axis] * total.inner;
          for (std::size_t o = 0; o < total.outer; ++o) {
            const T* src = self.grad.data() + (o * total.extent + offsets[k]) * total.inner;
            for (std::size_t i = 0; i < run; ++i) gp[o * run + i] += src[i];
          }
        }
      },
      "concat");
}

// ------------------------------------------------------------------ contraction

namespace {

// C[m×n] += A[m×k]·B[k×n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(static_cast<std::ptrdiff_t>(m), [&](std::ptrdiff_t ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(static_cast<std::ptrdiff_t>(m), [&](std::ptrdiff_t ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  });
}

// C[k×n] += A[m×k]ᵀ·B[m×n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(static_cast<std::ptrdiff_t>(k), [&](std::ptrdiff_t pp) {
    const auto p = static_cast<std::size_t>(pp);
    T* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  add_op_count(m * k * n);
  return make_result<T>(
      Shape{m, n}, std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [m, k, n](TensorImpl<T>& self) {
        TensorImpl<T>& A = *self.inputs[0];
        TensorImpl<T>& B = *self.inputs[1];
        if (A.requires_grad) gemm_nt(self.grad.data(), B.data.data(), A.grad_buffer(), m, n, k);
        if (B.requires_grad) gemm_tn(A.data.data(), self.grad.data(), B.grad_buffer(), m, k, n);
      },
      "matmul");
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  const bool ok = a.dim() == 3 && b.dim() == 3 && a.size(0) == b.size(0) &&
                  a.size(2) == (transpose_b ? b.size(2) : b.size(1));
  if (!ok) {
    throw DimensionError(std::string("bmm shape mismatch: ") + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + (transpose_b ? "ᵀ" : ""));
  }
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2);
  const std::size_t n = transpose_b ? b.size(1) : b.size(2);
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    const T* pa = a.data().data() + s * m * k;
    const T* pb = b.data().data() + s * k * n;
    T* pc = out.data() + s * m * n;
    if (transpose_b) {
      gemm_nt(pa, pb, pc, m, k, n);
    } else {
      gemm_nn(pa, pb, pc, m, k, n);
    }
  }
  add_op_count(batch * m * k * n);
  return make_result<T>(
      Shape{batch, m, n}, std::move(out), {a.impl_ptr(), b.impl_ptr()},
      [batch, m, k, n, transpose_b](TensorImpl<T>& self) {
        TensorImpl<T>& A = *self.inputs[0];
        TensorImpl<T>& B = *self.inputs[1];
        T* ga = A.requires_grad ? A.grad_buffer() : nullptr;
        T* gb = B.requires_grad ? B.grad_buffer() : nullptr;
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = self.grad.data() + s * m * n;
          const T* pa = A.data.data() + s * m * k;
          const T* pb = B.data.data() + s * k * n;
          if (transpose_b) {
            // C = A·Bᵀ with B [n×k]: dA = G·B, dB = Gᵀ·A
            if (ga) gemm_nn(g, pb, ga + s * m * k, m, n, k);
            if (gb) gemm_tn(g, pa, gb + s * k * n, m, n, k);
          } else {
            if (ga) gemm_nt(g, pb, ga + s * m * k, m, n, k);
            if (gb) gemm_tn(pa, g, gb + s * k * n, m, k, n);
          }
        }
      },
      "bmm");
}

// -------------------------------------------------------------------- softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  parallel_for(static_cast<std::ptrdiff_t>(s.outer * s.inner), [&](std::ptrdiff_t job) {
    const std::size_t o = static_cast<std::size_t>(job) / s.inner;
    const std::size_t in = static_cast<std::size_t>(job) % s.inner;
    const std::size_t base = o * s.extent * s.inner + in;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, px[base + j * s.inner]);
    double total = 0;
    for (std::size_t j = 0; j < s.extent; ++j) {
      const T e = std::exp(px[base + j * s.inner] - mx);
      out[base + j * s.inner] = e;
      total += double(e);
    }
    for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] = T(double(out[base + j * s.inner]) / total);
  });
  add_op_count(3 * x.numel());
  return make_result<T>(
      x.shape(), std::move(out), {x.impl_ptr()},
      [s](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        parallel_for(static_cast<std::ptrdiff_t>(s.outer * s.inner), [&](std::ptrdiff_t job) {
          const std::size_t o = static_cast<std::size_t>(job) / s.inner;
          const std::size_t in = static_cast<std::size_t>(job) % s.inner;
          const std::size_t base = o * s.extent * s.inner + in;
          T dot = T(0);
          for (std::size_t j = 0; j < s.extent; ++j) {
            const std::size_t i = base + j * s.inner;
            dot += g[i] * y[i];
          }
          for (std::size_t j = 0; j < s.extent; ++j) {
            const std::size_t i = base + j * s.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        });
      },
      "softmax");
}

// --------------------------------------------------------------------- conv3d

namespace {

struct ConvGeometry {
  std::size_t batch, cin, cout;
  std::size_t d, h, w;        // input extents
  std::size_t kd, kh, kw;
  std::size_t od, oh, ow;     // output extents
  std::size_t stride, pad;
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                            const Shape& input_shape, const Shape& kernel_shape) {
  if (k > in + 2 * pad) {
    throw DimensionError("conv3d kernel " + shape_str(kernel_shape) + " larger than padded input " +
                         shape_str(input_shape) + " (pad " + std::to_string(pad) + ")");
  }
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
  const bool batched = input.dim() == 5;
  if ((input.dim() != 4 && input.dim() != 5) || kernel.dim() != 5) {
    throw DimensionError("conv3d expects input [C×D×H×W] or [B×C×D×H×W] and kernel [Cout×Cin×k×k×k], got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride == 0) throw ContractError("conv3d stride must be positive");
  const std::size_t off = batched ? 1 : 0;
  ConvGeometry g{};
  g.batch = batched ? input.size(0) : 1;
  g.cin = input.size(off);
  g.d = input.size(off + 1);
  g.h = input.size(off + 2);
  g.w = input.size(off + 3);
  g.cout = kernel.size(0);
  g.kd = kernel.size(2);
  g.kh = kernel.size(3);
  g.kw = kernel.size(4);
  if (kernel.size(1) != g.cin) {
    throw DimensionError("conv3d channel mismatch: input " + shape_str(input.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
  }
  g.stride = stride;
  g.pad = pad;
  g.od = conv_out_extent(g.d, g.kd, stride, pad, input.shape(), kernel.shape());
  g.oh = conv_out_extent(g.h, g.kh, stride, pad, input.shape(), kernel.shape());
  g.ow = conv_out_extent(g.w, g.kw, stride, pad, input.shape(), kernel.shape());

  const std::size_t in_vol = g.d * g.h * g.w;
  const std::size_t out_vol = g.od * g.oh * g.ow;
  const std::size_t ktaps = g.kd * g.kh * g.kw;
  std::vector<T> out(g.batch * g.cout * out_vol, T(0));
  const T* px = input.data().data();
  const T* pk = kernel.data().data();

  parallel_for(static_cast<std::ptrdiff_t>(g.batch * g.cout), [&](std::ptrdiff_t job) {
    const std::size_t b = static_cast<std::size_t>(job) / g.cout;
    const std::size_t co = static_cast<std::size_t>(job) % g.cout;
    T* dst = out.data() + (b * g.cout + co) * out_vol;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* src = px + (b * g.cin + ci) * in_vol;
      const T* wk = pk + (co * g.cin + ci) * ktaps;
      for (std::size_t a = 0; a < g.kd; ++a) {
        const TapRange rd = tap_range(g.od, g.d, g.stride, g.pad, a);
        for (std::size_t bb = 0; bb < g.kh; ++bb) {
          const TapRange rh = tap_range(g.oh, g.h, g.stride, g.pad, bb);
          for (std::size_t c = 0; c < g.kw; ++c) {
            const TapRange rw = tap_range(g.ow, g.w, g.stride, g.pad, c);
            const T wv = wk[(a * g.kh + bb) * g.kw + c];
            if (wv == T(0)) continue;
            for (std::ptrdiff_t od = rd.lo; od < rd.hi; ++od) {
              const std::size_t id = od * g.stride + a - g.pad;
              for (std::ptrdiff_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::size_t ih = oh * g.stride + bb - g.pad;
                const T* srow = src + (id * g.h + ih) * g.w;
                T* drow = dst + (od * g.oh + oh) * g.ow;
                const std::ptrdiff_t shift = std::ptrdiff_t(c) - std::ptrdiff_t(g.pad);
                if (g.stride == 1) {
#pragma omp simd
                  for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) drow[ow] += wv * srow[ow + shift];
                } else {
                  const auto s = std::ptrdiff_t(g.stride);
                  for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) drow[ow] += wv * srow[ow * s + shift];
                }
              }
            }
          }
        }
      }
    }
  });
  add_op_count(g.batch * g.cout * g.cin * ktaps * out_vol);

  Shape out_shape = batched ? Shape{g.batch, g.cout, g.od, g.oh, g.ow} : Shape{g.cout, g.od, g.oh, g.ow};
  return make_result<T>(
      std::move(out_shape), std::move(out), {input.impl_ptr(), kernel.impl_ptr()},
      [g, in_vol, out_vol, ktaps](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        TensorImpl<T>& K = *self.inputs[1];
        const T* gout = self.grad.data();
        const T* px = X.data.data();
        const T* pk = K.data.data();
        if (X.requires_grad) {
          T* gx = X.grad_buffer();
          parallel_for(static_cast<std::ptrdiff_t>(g.batch * g.cin), [&](std::ptrdiff_t job) {
            const std::size_t b = static_cast<std::size_t>(job) / g.cin;
            const std::size_t ci = static_cast<std::size_t>(job) % g.cin;
            T* dst = gx + (b * g.cin + ci) * in_vol;
            for (std::size_t co = 0; co < g.cout; ++co) {
              const T* src = gout + (b * g.cout + co) * out_vol;
              const T* wk = pk + (co * g.cin + ci) * ktaps;
              for (std::size_t a = 0; a < g.kd; ++a) {
                const TapRange rd = tap_range(g.od, g.d, g.stride, g.pad, a);
                for (std::size_t bb = 0; bb < g.kh; ++bb) {
                  const TapRange rh = tap_range(g.oh, g.h, g.stride, g.pad, bb);
                  for (std::size_t c = 0; c < g.kw; ++c) {
                    const TapRange rw = tap_range(g.ow, g.w, g.stride, g.pad, c);
                    const T wv = wk[(a * g.kh + bb) * g.kw + c];
                    if (wv == T(0)) continue;
                    for (std::ptrdiff_t od = rd.lo; od < rd.hi; ++od) {
                      const std::size_t id = od * g.stride + a - g.pad;
                      for (std::ptrdiff_t oh = rh.lo; oh < rh.hi; ++oh) {
                        const std::size_t ih = oh * g.stride + bb - g.pad;
                        T* drow = dst + (id * g.h + ih) * g.w;
                        const T* srow = src + (od * g.oh + oh) * g.ow;
                        const std::ptrdiff_t shift = std::ptrdiff_t(c) - std::ptrdiff_t(g.pad);
                        if (g.stride == 1) {
#pragma omp simd
                          for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) drow[ow + shift] += wv * srow[ow];
                        } else {
                          const auto s = std::ptrdiff_t(g.stride);
                          for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) drow[ow * s + shift] += wv * srow[ow];
                        }
                      }
                    }
                  }
                }
              }
            }
          });
        }
        if (K.requires_grad) {
          T* gk = K.grad_buffer();
          parallel_for(static_cast<std::ptrdiff_t>(g.cout), [&](std::ptrdiff_t job) {
            const auto co = static_cast<std::size_t>(job);
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              T* wk = gk + (co * g.cin + ci) * ktaps;
              for (std::size_t a = 0; a < g.kd; ++a) {
                const TapRange rd = tap_range(g.od, g.d, g.stride, g.pad, a);
                for (std::size_t bb = 0; bb < g.kh; ++bb) {
                  const TapRange rh = tap_range(g.oh, g.h, g.stride, g.pad, bb);
                  for (std::size_t c = 0; c < g.kw; ++c) {
                    const TapRange rw = tap_range(g.ow, g.w, g.stride, g.pad, c);
                    T acc = T(0);
                    for (std::size_t b = 0; b < g.batch; ++b) {
                      const T* src = px + (b * g.cin + ci) * in_vol;
                      const T* go = gout + (b * g.cout + co) * out_vol;
                      for (std::ptrdiff_t od = rd.lo; od < rd.hi; ++od) {
                        const std::size_t id = od * g.stride + a - g.pad;
                        for (std::ptrdiff_t oh = rh.lo; oh < rh.hi; ++oh) {
                          const std::size_t ih = oh * g.stride + bb - g.pad;
                          const T* srow = src + (id * g.h + ih) * g.w;
                          const T* grow = go + (od * g.oh + oh) * g.ow;
                          const std::ptrdiff_t shift = std::ptrdiff_t(c) - std::ptrdiff_t(g.pad);
                          if (g.stride == 1) {
#pragma omp simd reduction(+ : acc)
                            for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) acc += grow[ow] * srow[ow + shift];
                          } else {
                            const auto s = std::ptrdiff_t(g.stride);
                            for (std::ptrdiff_t ow = rw.lo; ow < rw.hi; ++ow) acc += grow[ow] * srow[ow * s + shift];
                          }
                        }
                      }
                    }
                    wk[(a * g.kh + bb) * g.kw + c] += acc;
                  }
                }
              }
            }
          });
        }
      },
      "conv3d");
}

// ----------------------------------------------------------------- batch norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, NormMode mode, T momentum, T epsilon) {
  if (x.dim() < 2) throw DimensionError("batch_norm expects [B×C×...], got " + shape_str(x.shape()));
  const std::size_t batch = x.size(0), channels = x.size(1);
  const std::size_t spatial = x.numel() / (batch * channels);
  if (batch == 0) throw ContractError("batch_norm needs at least one sample");
  if (gamma.numel() != channels || beta.numel() != channels || stats.mean.numel() != channels ||
      stats.var.numel() != channels) {
    throw DimensionError("batch_norm parameters sized for " + std::to_string(gamma.numel()) +
                         " channels, input " + shape_str(x.shape()));
  }
  if (mode == NormMode::eval && !stats.populated()) {
    throw StateError("batch_norm in eval mode before running statistics were populated");
  }
  const std::size_t count = batch * spatial;
  const T* px = x.data().data();
  std::vector<T> mu(channels), inv_std(channels);
  if (mode == NormMode::train) {
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    parallel_for(static_cast<std::ptrdiff_t>(channels), [&](std::ptrdiff_t cc) {
      const auto c = static_cast<std::size_t>(cc);
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = px + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double m = s / double(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = px + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= double(count);
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + double(epsilon)));
      rm[c] = (T(1) - momentum) * rm[c] + momentum * static_cast<T>(m);
      rv[c] = (T(1) - momentum) * rv[c] + momentum * static_cast<T>(v);
    });
    stats.updates.mutable_data()[0] += T(1);
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = stats.mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(stats.var.data()[c] + epsilon);
    }
  }
  std::vector<T> xhat(x.numel()), out(x.numel());
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  parallel_for(static_cast<std::ptrdiff_t>(batch * channels), [&](std::ptrdiff_t job) {
    const std::size_t c = static_cast<std::size_t>(job) % channels;
    const std::size_t base = static_cast<std::size_t>(job) * spatial;
    for (std::size_t i = 0; i < spatial; ++i) {
      const T n = (px[base + i] - mu[c]) * inv_std[c];
      xhat[base + i] = n;
      out[base + i] = pg[c] * n + pb[c];
    }
  });
  add_op_count(4 * x.numel());
  const bool train = mode == NormMode::train;
  return make_result<T>(
      x.shape(), std::move(out), {x.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()},
      [xhat = std::move(xhat), inv_std, batch, channels, spatial, count, train](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        TensorImpl<T>& G = *self.inputs[1];
        TensorImpl<T>& Bt = *self.inputs[2];
        const T* g = self.grad.data();
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        parallel_for(static_cast<std::ptrdiff_t>(channels), [&](std::ptrdiff_t cc) {
          const auto c = static_cast<std::size_t>(cc);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_g[c] += g[base + i];
              sum_gx[c] += double(g[base + i]) * xhat[base + i];
            }
          }
        });
        if (G.requires_grad) {
          T* gg = G.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) gg[c] += static_cast<T>(sum_gx[c]);
        }
        if (Bt.requires_grad) {
          T* gb = Bt.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) gb[c] += static_cast<T>(sum_g[c]);
        }
        if (X.requires_grad) {
          T* gx = X.grad_buffer();
          const T* pg = G.data.data();
          parallel_for(static_cast<std::ptrdiff_t>(batch * channels), [&](std::ptrdiff_t job) {
            const std::size_t c = static_cast<std::size_t>(job) % channels;
            const std::size_t base = static_cast<std::size_t>(job) * spatial;
            const T k = pg[c] * inv_std[c];
            if (train) {
              const T mg = static_cast<T>(sum_g[c] / double(count));
              const T mgx = static_cast<T>(sum_gx[c] / double(count));
              for (std::size_t i = 0; i < spatial; ++i) {
                gx[base + i] += k * (g[base + i] - mg - xhat[base + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < spatial; ++i) gx[base + i] += k * g[base + i];
            }
          });
        }
      },
      "batch_norm");
}

// ------------------------------------------------------------------- pooling

template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& x) {
  if (x.dim() != 4 && x.dim() != 5) {
    throw DimensionError("avg_pool_global expects [C×D×H×W] or [B×C×D×H×W], got " + shape_str(x.shape()));
  }
  const bool batched = x.dim() == 5;
  const std::size_t groups = batched ? x.size(0) * x.size(1) : x.size(0);
  const std::size_t spatial = x.numel() / groups;
  std::vector<T> out(groups);
  const T* px = x.data().data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double s = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) s += px[gi * spatial + i];
    out[gi] = static_cast<T>(s / double(spatial));
  }
  add_op_count(x.numel());
  Shape shape = batched ? Shape{x.size(0), x.size(1)} : Shape{x.size(0)};
  return make_result<T>(
      std::move(shape), std::move(out), {x.impl_ptr()},
      [groups, spatial](TensorImpl<T>& self) {
        TensorImpl<T>& X = *self.inputs[0];
        T* gx = X.grad_buffer();
        const T inv = T(1) / static_cast<T>(spatial);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const T v = self.grad[gi] * inv;
          for (std::size_t i = 0; i < spatial; ++i) gx[gi * spatial + i] += v;
        }
      },
      "avg_pool_global");
}

// -------------------------------------------------------------------- losses

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::size_t label) {
  if (label >= probs.numel()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(probs.numel()) + " classes");
  }
  const T p = probs.data()[label];
  return make_result<T>(
      Shape{}, {-std::log(p)}, {probs.impl_ptr()},
      [label](TensorImpl<T>& self) {
        TensorImpl<T>& P = *self.inputs[0];
        P.grad_buffer()[label] -= self.grad[0] / P.data[label];
      },
      "cross_entropy");
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                                const std::vector<T>& class_weights) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy expects logits [B×n] with B labels, got " +
                         shape_str(logits.shape()) + " and " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.size(0), n = logits.size(1);
  if (!class_weights.empty() && class_weights.size() != n) {
    throw DimensionError("class weight count does not match class count");
  }
  std::vector<T> probs(batch * n), weight(batch, T(1));
  double loss = 0.0, wsum = 0.0;
  const T* pl = logits.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= n) {
      throw IndexError("label " + std::to_string(labels[b]) + " out of range for " +
                       std::to_string(n) + " classes");
    }
    const T* row = pl + b * n;
    const T mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(double(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[b * n + j] = static_cast<T>(std::exp(double(row[j] - mx)) / total);
    if (!class_weights.empty()) weight[b] = class_weights[labels[b]];
    loss += weight[b] * (std::log(total) - double(row[labels[b]] - mx));
    wsum += weight[b];
  }
  add_op_count(3 * batch * n);
  return make_result<T>(
      Shape{}, {static_cast<T>(loss / wsum)}, {logits.impl_ptr()},
      [probs = std::move(probs), weight, labels, wsum, n](TensorImpl<T>& self) {
        TensorImpl<T>& L = *self.inputs[0];
        T* gl = L.grad_buffer();
        const T g = self.grad[0];
        for (std::size_t b = 0; b < labels.size(); ++b) {
          const T k = static_cast<T>(g * weight[b] / wsum);
          for (std::size_t j = 0; j < n; ++j) {
            gl[b * n + j] += k * (probs[b * n + j] - (j == labels[b] ? T(1) : T(0)));
          }
        }
      },
      "softmax_cross_entropy");
}

#define VOLFORMER_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sqrt(const Tensor<T>&);                                                     \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&, const std::vector<std::size_t>&);                    \
  template Tensor<T> variance(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template std::pair<Tensor<T>, Tensor<T>> mean_var(const Tensor<T>&,                            \
                                                    const std::vector<std::size_t>&);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> narrow(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                RunningStats<T>&, NormMode, T, T);                               \
  template Tensor<T> avg_pool_global(const Tensor<T>&);                                          \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&,    \
                                           const std::vector<T>&);

VOLFORMER_INSTANTIATE_OPS(float)
VOLFORMER_INSTANTIATE_OPS(double)

}  // namespace volformer
