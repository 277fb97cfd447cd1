#pragma once

#include "nanohtnet/tensor.hpp"

// Serial reference kernels. These are deliberately naive (textbook loops,
// no OpenMP, no blocking) and live in a separate library linked only by
// tests and benchmarks, so they stay independent of the optimized paths
// they are used to check.
namespace nht::ref {

template <class S>
Tensor<S> matmul_naive(const Tensor<S>& a, const Tensor<S>& b);

template <class S>
Tensor<S> conv1d_naive(const Tensor<S>& x, const Tensor<S>& w, int64_t stride);

// softmax by direct evaluation exp(x_i) / sum(exp(x_j)), no max shift.
template <class S>
Tensor<S> softmax_direct(const Tensor<S>& x);

template <class S>
Tensor<S> layer_norm_twopass(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta);

// Type-II DCT of each column of x (time runs down rows), evaluated straight
// from the double-sum definition with orthonormal scaling.
template <class S>
Tensor<S> dct_direct(const Tensor<S>& x);

}  // namespace nht::ref
