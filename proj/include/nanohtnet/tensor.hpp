#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nanohtnet/errors.hpp"

namespace nht {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor over float or double. `node` ties a value to a
// Tape when gradients are tracked (-1 = untracked); node ids are only
// meaningful for the tape that issued them.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<S> data);
  static Tensor full(Shape shape, S value);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors; throw on other ranks.
  int64_t rows() const;
  int64_t cols() const;

  // Last-dim view: leading extents flattened into rows.
  int64_t last_extent() const;
  int64_t lead_count() const;

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  const std::vector<S>& vec() const { return data_; }
  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  S& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  S at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  int node = -1;

 private:
  Shape shape_;
  std::vector<S> data_;
};

template <class To, class From>
Tensor<To> cast_tensor(const Tensor<From>& t);

// Reverse-mode tape. Ops append nodes in forward order, so ids already form
// a topological order; backward() walks them once in reverse. Saved
// activations live inside each node's backward closure.
template <class S>
class Tape {
 public:
  using BackFn = std::function<void(const Tensor<S>& grad_out, Tape<S>& tape)>;

  // Registers a leaf (parameter/input) node and returns its id.
  int leaf(const Shape& shape);
  // Marks a tensor as a leaf in place.
  void track(Tensor<S>& t) { t.node = leaf(t.shape()); }

  int record(const char* op, std::vector<int> inputs, const Shape& out_shape, BackFn back);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss_node` must be scalar.
  void backward(int loss_node);

  // Accumulated gradient for a node; zeros if nothing reached it.
  Tensor<S> grad(int node) const;
  bool grad_set(int node) const;
  // Adds a contribution to a node's gradient (used by backward closures).
  void accumulate(int node, const Tensor<S>& g);

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
  const char* op_name(int node) const { return nodes_[static_cast<size_t>(node)].op; }

 private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    Shape shape;
    BackFn back;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
};

// ---- differentiable ops -------------------------------------------------
// Every op computes eagerly and records a tape node when `tape` is non-null
// and at least one input is tracked.

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> scale(const Tensor<S>& a, S c, Tape<S>* tape = nullptr);
// Broadcasts a length-n vector over the rows of an [m x n] matrix.
template <class S>
Tensor<S> add_row(const Tensor<S>& a, const Tensor<S>& bias, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> transpose(const Tensor<S>& a, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int64_t c0, int64_t c1, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);
template <class S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int64_t>& idx, Tape<S>* tape = nullptr);
// Places rows of `values` at `idx` in an [m x n] zero matrix.
template <class S>
Tensor<S> scatter_rows(const Tensor<S>& values, const std::vector<int64_t>& idx, int64_t m,
                       Tape<S>* tape = nullptr);
template <class S>
Tensor<S> mean_rows(const Tensor<S>& a, Tape<S>* tape = nullptr);  // [m x n] -> [1 x n]
template <class S>
Tensor<S> sum_all(const Tensor<S>& a, Tape<S>* tape = nullptr);  // -> [1]
template <class S>
Tensor<S> mean_all(const Tensor<S>& a, Tape<S>* tape = nullptr);  // -> [1]
// Exact (erf-based) GELU: x * Phi(x).
template <class S>
Tensor<S> gelu(const Tensor<S>& a, Tape<S>* tape = nullptr);
// Elementwise sqrt; the derivative at exactly 0 is defined as 0 (subgradient
// choice) so zero-distance terms cannot poison gradients with infinities.
template <class S>
Tensor<S> sqrt_elem(const Tensor<S>& a, Tape<S>* tape = nullptr);
// Normalizes the last dim: y = gamma * (x - mean) / sqrt(var + 1e-5) + beta.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Tape<S>* tape = nullptr);
// Max-subtracted softmax over the last dim.
template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& x, Tape<S>* tape = nullptr);
// log(sum(exp(x))) over the last dim: [m x n] -> [m x 1].
template <class S>
Tensor<S> logsumexp_lastdim(const Tensor<S>& x, Tape<S>* tape = nullptr);
// Scales each last-dim slice to unit Euclidean norm.
template <class S>
Tensor<S> l2_normalize_lastdim(const Tensor<S>& x, Tape<S>* tape = nullptr);
// 1-D valid (non-padded) convolution along rows: x [n x c_in],
// w [k x c_in x c_out] -> [(n-k)/stride + 1 x c_out].
template <class S>
Tensor<S> conv1d_strided(const Tensor<S>& x, const Tensor<S>& w, int64_t stride,
                         Tape<S>* tape = nullptr);
// out[i, j, :] = a[i, :] + b[j, :], for fusing per-frame and per-joint rows.
template <class S>
Tensor<S> outer_sum(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);

// ---- gradient checking ---------------------------------------------------
// Runs `f` once with `theta` tracked on a fresh tape to get the analytic
// gradient, then central differences with per-coordinate step
// h_i = step * max(1, |theta_i|). Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|).
template <class S>
using ScalarFn = std::function<Tensor<S>(const Tensor<S>& theta, Tape<S>* tape)>;

template <class S>
S grad_check(const ScalarFn<S>& f, const Tensor<S>& theta, S step);

// ---- seeded initialisation ----------------------------------------------
template <class S>
void fill_uniform(Tensor<S>& t, S lo, S hi, uint64_t seed, uint64_t stream);
// Xavier/Glorot uniform: limit = sqrt(6 / (fan_in + fan_out)).
template <class S>
void fill_xavier(Tensor<S>& t, int64_t fan_in, int64_t fan_out, uint64_t seed, uint64_t stream);

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace nht
