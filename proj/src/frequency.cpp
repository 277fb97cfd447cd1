#include "nanohtnet/frequency.hpp"

#include <cmath>

namespace nht {

Tensor<double> dct_basis(int64_t T) {
  if (T <= 0) throw ContractError("dct_basis: T must be positive");
  Tensor<double> b({T, T});
  const double c0 = std::sqrt(1.0 / static_cast<double>(T));
  const double cf = std::sqrt(2.0 / static_cast<double>(T));
  for (int64_t f = 0; f < T; ++f)
    for (int64_t t = 0; t < T; ++t)
      b[f * T + t] = (f == 0 ? c0 : cf) *
                     std::cos(M_PI * (2.0 * static_cast<double>(t) + 1.0) *
                              static_cast<double>(f) / (2.0 * static_cast<double>(T)));
  return b;
}

template <class S>
Tensor<S> dct(const Tensor<S>& x) {
  const int64_t T = x.rows();
  Tensor<S> b = cast_tensor<S>(dct_basis(T));
  return matmul(b, x);
}

template <class S>
Tensor<S> lowpass(const Tensor<S>& coeffs, int64_t k) {
  const int64_t T = coeffs.rows(), ch = coeffs.cols();
  if (k < 1 || k > T)
    throw ContractError("lowpass: k must be in [1, T], got " + std::to_string(k));
  Tensor<S> out({k, ch});
  for (int64_t i = 0; i < k * ch; ++i) out[i] = coeffs[i];
  return out;
}

template <class S>
Tensor<S> dct_lowpass(const Tensor<S>& x, int64_t k) {
  const int64_t T = x.rows();
  if (k < 1 || k > T)
    throw ContractError("dct_lowpass: k must be in [1, T], got " + std::to_string(k));
  Tensor<double> b = dct_basis(T);
  Tensor<double> trunc({k, T});
  for (int64_t i = 0; i < k * T; ++i) trunc[i] = b[i];
  return matmul(cast_tensor<S>(trunc), x);
}

template <class S>
Tensor<S> idct(const Tensor<S>& coeffs) {
  const int64_t T = coeffs.rows();
  Tensor<S> bt = transpose(cast_tensor<S>(dct_basis(T)));
  return matmul(bt, coeffs);
}

template <class S>
Tensor<S> idct_padded(const Tensor<S>& coeffs, int64_t T, Tape<S>* tape) {
  const int64_t k = coeffs.rows();
  if (k > T) throw ContractError("idct_padded: more coefficients than output frames");
  // B^T restricted to the first k columns (retained band only).
  Tensor<double> b = dct_basis(T);
  Tensor<S> bt_k({T, k});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t f = 0; f < k; ++f) bt_k[t * k + f] = static_cast<S>(b[f * T + t]);
  return matmul(bt_k, coeffs, tape);
}

#define NHT_FREQ_INSTANTIATE(S)                                  \
  template Tensor<S> dct(const Tensor<S>&);                      \
  template Tensor<S> lowpass(const Tensor<S>&, int64_t);         \
  template Tensor<S> dct_lowpass(const Tensor<S>&, int64_t);     \
  template Tensor<S> idct(const Tensor<S>&);                     \
  template Tensor<S> idct_padded(const Tensor<S>&, int64_t, Tape<S>*);

NHT_FREQ_INSTANTIATE(float)
NHT_FREQ_INSTANTIATE(double)
#undef NHT_FREQ_INSTANTIATE

}  // namespace nht
