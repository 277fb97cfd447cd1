#include "nanohtnet/reference.hpp"

#include <cmath>

namespace nht::ref {

template <class S>
Tensor<S> matmul_naive(const Tensor<S>& a, const Tensor<S>& b) {
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimError("matmul_naive: inner extents differ");
  Tensor<S> c({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      S acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

template <class S>
Tensor<S> conv1d_naive(const Tensor<S>& x, const Tensor<S>& w, int64_t stride) {
  const int64_t n = x.rows(), ci = x.cols();
  const int64_t k = w.extent(0), co = w.extent(2);
  const int64_t n_out = (n - k) / stride + 1;
  Tensor<S> y({n_out, co});
  for (int64_t o = 0; o < n_out; ++o)
    for (int64_t b = 0; b < co; ++b) {
      S acc = 0;
      for (int64_t t = 0; t < k; ++t)
        for (int64_t a = 0; a < ci; ++a)
          acc += x[(o * stride + t) * ci + a] * w[(t * ci + a) * co + b];
      y[o * co + b] = acc;
    }
  return y;
}

template <class S>
Tensor<S> softmax_direct(const Tensor<S>& x) {
  const int64_t n = x.last_extent(), m = x.lead_count();
  Tensor<S> y(x.shape());
  for (int64_t r = 0; r < m; ++r) {
    S denom = 0;
    for (int64_t c = 0; c < n; ++c) denom += std::exp(x[r * n + c]);
    for (int64_t c = 0; c < n; ++c) y[r * n + c] = std::exp(x[r * n + c]) / denom;
  }
  return y;
}

template <class S>
Tensor<S> layer_norm_twopass(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta) {
  const int64_t n = x.last_extent(), m = x.lead_count();
  Tensor<S> y(x.shape());
  for (int64_t r = 0; r < m; ++r) {
    S mean = 0;
    for (int64_t c = 0; c < n; ++c) mean += x[r * n + c];
    mean /= static_cast<S>(n);
    S var = 0;
    for (int64_t c = 0; c < n; ++c) var += (x[r * n + c] - mean) * (x[r * n + c] - mean);
    var /= static_cast<S>(n);
    for (int64_t c = 0; c < n; ++c)
      y[r * n + c] = gamma[c] * (x[r * n + c] - mean) / std::sqrt(var + static_cast<S>(1e-5)) +
                     beta[c];
  }
  return y;
}

template <class S>
Tensor<S> dct_direct(const Tensor<S>& x) {
  const int64_t T = x.rows(), ch = x.cols();
  Tensor<S> y({T, ch});
  for (int64_t f = 0; f < T; ++f) {
    const double cf = f == 0 ? std::sqrt(1.0 / static_cast<double>(T))
                             : std::sqrt(2.0 / static_cast<double>(T));
    for (int64_t c = 0; c < ch; ++c) {
      double acc = 0;
      for (int64_t t = 0; t < T; ++t)
        acc += static_cast<double>(x[t * ch + c]) *
               std::cos(M_PI * (2.0 * static_cast<double>(t) + 1.0) * static_cast<double>(f) /
                        (2.0 * static_cast<double>(T)));
      y[f * ch + c] = static_cast<S>(cf * acc);
    }
  }
  return y;
}

#define NHT_REF_INSTANTIATE(S)                                                       \
  template Tensor<S> matmul_naive(const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> conv1d_naive(const Tensor<S>&, const Tensor<S>&, int64_t);      \
  template Tensor<S> softmax_direct(const Tensor<S>&);                               \
  template Tensor<S> layer_norm_twopass(const Tensor<S>&, const Tensor<S>&,          \
                                        const Tensor<S>&);                           \
  template Tensor<S> dct_direct(const Tensor<S>&);

NHT_REF_INSTANTIATE(float)
NHT_REF_INSTANTIATE(double)
#undef NHT_REF_INSTANTIATE

}  // namespace nht::ref
