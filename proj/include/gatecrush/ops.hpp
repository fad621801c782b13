#pragma once

#include <cstdint>
#include <vector>

#include "gatecrush/tensor.hpp"

namespace gatecrush {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C);
// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C);
// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C);

// Builds an op output node: allocates data, wires inputs, propagates
// needs_grad. Inputs are referenced only when gradients must flow, so
// no-grad forwards stay tape-free.
template <typename T>
Tensor<T> make_op(std::vector<int64_t> shape, const char* op,
                  std::initializer_list<Tensor<T>> inputs);

}  // namespace detail

// elementwise / shape
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s);
template <typename T>
Tensor<T> add_const(const Tensor<T>& a, double c);
template <typename T>
Tensor<T> log1p_elem(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape);
template <typename T>
Tensor<T> concat1d(const Tensor<T>& a, const Tensor<T>& b);
// stacks scalar tensors into a 1-D vector; gradient scatters back
template <typename T>
Tensor<T> pack(const std::vector<Tensor<T>>& scalars);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

// y_i = dot(a[i,:], v)
template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& v);
// vec + broadcast scalar tensor
template <typename T>
Tensor<T> broadcast_add_scalar(const Tensor<T>& vec, const Tensor<T>& scalar);

// nn
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding);
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride);
template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& x);
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& labels);

// y[n,c,h,w] = x[n,c,h,w] * g[c]
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& g);

// BN after conv; running stats are buffers updated in train mode.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                      double momentum = 0.1, double eps = 1e-5);

}  // namespace gatecrush
