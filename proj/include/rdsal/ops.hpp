#pragma once

#include <span>

#include "rdsal/tensor.hpp"

namespace rdsal {

enum class Activation { Relu, Sigmoid, Tanh };

// Elementwise
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> rsub_scalar(T s, const Tensor<T>& x);  // s - x
template <typename T> Tensor<T> log_elem(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <typename T> Tensor<T> pointwise(const Tensor<T>& x, Activation act);
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return pointwise(x, Activation::Relu); }
// Output is clamped to [1e-7, 1 - 1e-7]; keeps probabilities strictly inside (0,1).
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return pointwise(x, Activation::Sigmoid); }
template <typename T> Tensor<T> tanh_act(const Tensor<T>& x) { return pointwise(x, Activation::Tanh); }

// Reductions
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

// Linear algebra. matmul: (M,K)x(K,N); linear: x (N,in), w (in,out), bias (out).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Convolutions on NCHW. Weights: conv2d (out,in,k,k); conv2d_transpose (in,out,k,k).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride = 1,
                 std::int64_t padding = 0, std::int64_t dilation = 1);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t padding = 0, std::int64_t dilation = 1);
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride = 1,
                           std::int64_t padding = 0);
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::int64_t stride = 1, std::int64_t padding = 0);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::int64_t size, std::int64_t stride);

// align_corners=false sampling; border-clamped.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

// Data movement
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T> Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
    return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}
template <typename T> Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len);
template <typename T> Tensor<T> permute(const Tensor<T>& x, std::span<const int> perm);
template <typename T> Tensor<T> permute(const Tensor<T>& x, std::initializer_list<int> perm) {
    return permute(x, std::span<const int>(perm.begin(), perm.size()));
}
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape new_shape);

}  // namespace rdsal
