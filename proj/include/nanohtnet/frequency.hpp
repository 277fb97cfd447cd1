#pragma once

#include "nanohtnet/tensor.hpp"

namespace nht {

// Orthonormal type-II DCT over the time axis. The basis matrix B is [T x T]
// with B[f][t] = c(f) * cos(pi * (2t + 1) * f / (2T)), c(0) = sqrt(1/T) and
// c(f>0) = sqrt(2/T), which makes B orthogonal: B * B^T = I. The inverse
// transform is therefore B^T.
Tensor<double> dct_basis(int64_t T);

// Forward transform of each column of x (time runs down the rows):
// coeffs = B * x, x is [T x ch].
template <class S>
Tensor<S> dct(const Tensor<S>& x);

// Keeps the k lowest-frequency coefficient rows (f < k) and drops the rest.
template <class S>
Tensor<S> lowpass(const Tensor<S>& coeffs, int64_t k);

// Fused truncated transform: the first k rows of B applied to x, i.e.
// lowpass(dct(x), k) without computing the dropped rows.
template <class S>
Tensor<S> dct_lowpass(const Tensor<S>& x, int64_t k);

// Exact inverse of the full transform: x = B^T * coeffs.
template <class S>
Tensor<S> idct(const Tensor<S>& coeffs);

// Inverse from k retained coefficients, zero-padding the dropped band:
// [k x ch] -> [T x ch]. Differentiable (the transform is a constant matrix),
// so it can sit on the model's output path.
template <class S>
Tensor<S> idct_padded(const Tensor<S>& coeffs, int64_t T, Tape<S>* tape = nullptr);

}  // namespace nht
