#include "nanohtnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "nanohtnet/rng.hpp"

namespace nht {

namespace {
// Work threshold below which OpenMP parallelism is not worth the fork/join.
constexpr int64_t kParallelCutoff = 1 << 15;

template <class S>
inline S gelu_scalar(S x) {
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
}

template <class S>
inline S gelu_grad_scalar(S x) {
  const S phi = std::exp(static_cast<S>(-0.5) * x * x) *
                static_cast<S>(0.3989422804014326779);  // 1/sqrt(2*pi)
  const S Phi =
      static_cast<S>(0.5) * (static_cast<S>(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
  return Phi + x * phi;
}
}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

template <class S>
Tensor<S>::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t e : shape_)
    if (e <= 0) throw DimError("tensor extents must be positive, got " + shape_str(shape_));
  data_.assign(static_cast<size_t>(shape_numel(shape_)), S(0));
}

template <class S>
Tensor<S>::Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw DimError("data size does not match shape " + shape_str(shape_));
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <class S>
int64_t Tensor<S>::rows() const {
  if (rank() != 2) throw DimError("rank-2 tensor required, got " + shape_str(shape_));
  return shape_[0];
}

template <class S>
int64_t Tensor<S>::cols() const {
  if (rank() != 2) throw DimError("rank-2 tensor required, got " + shape_str(shape_));
  return shape_[1];
}

template <class S>
int64_t Tensor<S>::last_extent() const {
  if (shape_.empty()) throw DimError("rank-0 tensor has no last extent");
  return shape_.back();
}

template <class S>
int64_t Tensor<S>::lead_count() const {
  return numel() / last_extent();
}

template <class S>
bool Tensor<S>::all_finite() const {
  for (S v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <class To, class From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

// ---- Tape -----------------------------------------------------------------

template <class S>
int Tape<S>::leaf(const Shape& shape) {
  nodes_.push_back(Node{"leaf", {}, shape, BackFn{}});
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

template <class S>
int Tape<S>::record(const char* op, std::vector<int> inputs, const Shape& out_shape, BackFn back) {
  nodes_.push_back(Node{op, std::move(inputs), out_shape, std::move(back)});
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

template <class S>
void Tape<S>::backward(int loss_node) {
  if (loss_node < 0 || loss_node >= size()) throw ContractError("backward: node id not on this tape");
  if (shape_numel(nodes_[static_cast<size_t>(loss_node)].shape) != 1)
    throw ContractError("backward: loss node must be scalar");
  grads_[static_cast<size_t>(loss_node)] =
      Tensor<S>::full(nodes_[static_cast<size_t>(loss_node)].shape, S(1));
  // Nodes were appended in forward order, so reverse id order is a reverse
  // topological order; every node is visited at most once.
  for (int id = loss_node; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.back || grads_[static_cast<size_t>(id)].empty()) continue;
    n.back(grads_[static_cast<size_t>(id)], *this);
  }
}

template <class S>
Tensor<S> Tape<S>::grad(int node) const {
  if (node < 0 || node >= size()) throw ContractError("grad: node id not on this tape");
  const Tensor<S>& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) return Tensor<S>(nodes_[static_cast<size_t>(node)].shape);
  return g;
}

template <class S>
bool Tape<S>::grad_set(int node) const {
  return node >= 0 && node < size() && !grads_[static_cast<size_t>(node)].empty();
}

template <class S>
void Tape<S>::accumulate(int node, const Tensor<S>& g) {
  if (node < 0 || node >= size()) throw ContractError("accumulate: node id not on this tape");
  Tensor<S>& slot = grads_[static_cast<size_t>(node)];
  if (slot.empty()) {
    slot = g;
    return;
  }
  if (!slot.same_shape(g)) throw DimError("accumulate: gradient shape mismatch");
  S* d = slot.data();
  const S* s = g.data();
  const int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

// ---- op helpers -----------------------------------------------------------

namespace {

template <class S, class Fn>
int maybe_record(Tape<S>* tape, const char* op, std::initializer_list<int> ins, const Shape& shape,
                 Fn&& back) {
  if (!tape) return -1;
  bool tracked = false;
  for (int i : ins) tracked |= (i >= 0);
  if (!tracked) return -1;
  return tape->record(op, std::vector<int>(ins), shape, std::forward<Fn>(back));
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

}  // namespace

// ---- elementwise ops ------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  const int64_t n = a.numel();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  const int an = a.node, bn = b.node;
  out.node = maybe_record(tape, "add", {an, bn}, out.shape(),
                          [an, bn](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) t.accumulate(an, g);
                            if (bn >= 0) t.accumulate(bn, g);
                          });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  const int an = a.node, bn = b.node;
  out.node = maybe_record(tape, "sub", {an, bn}, out.shape(),
                          [an, bn](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) t.accumulate(an, g);
                            if (bn >= 0) {
                              Tensor<S> neg(g.shape());
                              for (int64_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
                              t.accumulate(bn, neg);
                            }
                          });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  const int an = a.node, bn = b.node;
  Tensor<S> av = (bn >= 0 || an >= 0) ? a : Tensor<S>();
  Tensor<S> bv = (an >= 0 || bn >= 0) ? b : Tensor<S>();
  out.node = maybe_record(tape, "mul", {an, bn}, out.shape(),
                          [an, bn, av, bv](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) {
                              Tensor<S> da(g.shape());
                              for (int64_t i = 0; i < g.numel(); ++i) da[i] = g[i] * bv[i];
                              t.accumulate(an, da);
                            }
                            if (bn >= 0) {
                              Tensor<S> db(g.shape());
                              for (int64_t i = 0; i < g.numel(); ++i) db[i] = g[i] * av[i];
                              t.accumulate(bn, db);
                            }
                          });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c, Tape<S>* tape) {
  Tensor<S> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
  const int an = a.node;
  out.node = maybe_record(tape, "scale", {an}, out.shape(),
                          [an, c](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da(g.shape());
                            for (int64_t i = 0; i < g.numel(); ++i) da[i] = g[i] * c;
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> add_row(const Tensor<S>& a, const Tensor<S>& bias, Tape<S>* tape) {
  const int64_t n = a.last_extent();
  if (bias.numel() != n)
    throw DimError("add_row: bias length " + std::to_string(bias.numel()) + " vs last extent " +
                   std::to_string(n));
  const int64_t m = a.lead_count();
  Tensor<S> out(a.shape());
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
  const int an = a.node, bn = bias.node;
  const Shape bias_shape = bias.shape();
  out.node = maybe_record(tape, "add_row", {an, bn}, out.shape(),
                          [an, bn, m, n, bias_shape](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) t.accumulate(an, g);
                            if (bn >= 0) {
                              Tensor<S> db(bias_shape);
                              for (int64_t r = 0; r < m; ++r)
                                for (int64_t c = 0; c < n; ++c) db[c] += g[r * n + c];
                              t.accumulate(bn, db);
                            }
                          });
  return out;
}

// ---- matmul / transpose / reshape ------------------------------------------

namespace kernels {

// C[m x n] (+)= A[m x k] * B[k x n]. Each output row is owned by exactly one
// thread and accumulated in a fixed order, so results are independent of the
// thread count.
template <class S>
void matmul_mk_kn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelCutoff)
  for (int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    std::fill(crow, crow + n, S(0));
    const S* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
void transpose(const S* a, S* o, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static) if (m * n > kParallelCutoff)
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) o[j * m + i] = a[i * n + j];
}

}  // namespace kernels

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  const int64_t m = a.rows(), k = a.cols();
  if (b.rows() != k)
    throw DimError("matmul: inner extents differ, " + shape_str(a.shape()) + " * " +
                   shape_str(b.shape()));
  const int64_t n = b.cols();
  Tensor<S> out({m, n});
  kernels::matmul_mk_kn(a.data(), b.data(), out.data(), m, k, n);
  const int an = a.node, bn = b.node;
  Tensor<S> av = (bn >= 0) ? a : Tensor<S>();
  Tensor<S> bv = (an >= 0) ? b : Tensor<S>();
  out.node = maybe_record(tape, "matmul", {an, bn}, out.shape(),
                          [an, bn, av, bv, m, k, n](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) {
                              // dA = dC * B^T
                              Tensor<S> bt({n, k});
                              kernels::transpose(bv.data(), bt.data(), k, n);
                              Tensor<S> da({m, k});
                              kernels::matmul_mk_kn(g.data(), bt.data(), da.data(), m, n, k);
                              t.accumulate(an, da);
                            }
                            if (bn >= 0) {
                              // dB = A^T * dC
                              Tensor<S> at({k, m});
                              kernels::transpose(av.data(), at.data(), m, k);
                              Tensor<S> db({k, n});
                              kernels::matmul_mk_kn(at.data(), g.data(), db.data(), k, m, n);
                              t.accumulate(bn, db);
                            }
                          });
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a, Tape<S>* tape) {
  const int64_t m = a.rows(), n = a.cols();
  Tensor<S> out({n, m});
  kernels::transpose(a.data(), out.data(), m, n);
  const int an = a.node;
  out.node = maybe_record(tape, "transpose", {an}, out.shape(),
                          [an, m, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da({m, n});
                            kernels::transpose(g.data(), da.data(), n, m);
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape, Tape<S>* tape) {
  if (shape_numel(new_shape) != a.numel())
    throw DimError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                   shape_str(new_shape));
  Tensor<S> out(new_shape, a.vec());
  const int an = a.node;
  const Shape old_shape = a.shape();
  out.node = maybe_record(tape, "reshape", {an}, out.shape(),
                          [an, old_shape](const Tensor<S>& g, Tape<S>& t) {
                            t.accumulate(an, Tensor<S>(old_shape, g.vec()));
                          });
  return out;
}

// ---- structural ops --------------------------------------------------------

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts, Tape<S>* tape) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int64_t m = parts[0].rows();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor<S> out({m, total});
  std::vector<int64_t> offsets;
  std::vector<int64_t> widths;
  std::vector<int> in_nodes;
  int64_t off = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    const int64_t w = p.cols();
    for (int64_t r = 0; r < m; ++r)
      std::memcpy(out.data() + r * total + off, p.data() + r * w, sizeof(S) * static_cast<size_t>(w));
    offsets.push_back(off);
    widths.push_back(w);
    in_nodes.push_back(p.node);
    tracked |= (p.node >= 0);
    off += w;
  }
  if (tape && tracked) {
    out.node = tape->record("concat_cols", in_nodes, out.shape(),
                            [in_nodes, offsets, widths, m, total](const Tensor<S>& g, Tape<S>& t) {
                              for (size_t p = 0; p < in_nodes.size(); ++p) {
                                if (in_nodes[p] < 0) continue;
                                Tensor<S> dp({m, widths[p]});
                                for (int64_t r = 0; r < m; ++r)
                                  std::memcpy(dp.data() + r * widths[p],
                                              g.data() + r * total + offsets[p],
                                              sizeof(S) * static_cast<size_t>(widths[p]));
                                t.accumulate(in_nodes[p], dp);
                              }
                            });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int64_t c0, int64_t c1, Tape<S>* tape) {
  const int64_t m = a.rows(), n = a.cols();
  if (c0 < 0 || c1 <= c0 || c1 > n)
    throw DimError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                   ") for " + shape_str(a.shape()));
  const int64_t w = c1 - c0;
  Tensor<S> out({m, w});
  for (int64_t r = 0; r < m; ++r)
    std::memcpy(out.data() + r * w, a.data() + r * n + c0, sizeof(S) * static_cast<size_t>(w));
  const int an = a.node;
  out.node = maybe_record(tape, "slice_cols", {an}, out.shape(),
                          [an, m, n, c0, w](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da({m, n});
                            for (int64_t r = 0; r < m; ++r)
                              std::memcpy(da.data() + r * n + c0, g.data() + r * w,
                                          sizeof(S) * static_cast<size_t>(w));
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  const int64_t n = a.cols();
  if (b.cols() != n) throw DimError("concat_rows: column count mismatch");
  const int64_t ma = a.rows(), mb = b.rows();
  Tensor<S> out({ma + mb, n});
  std::memcpy(out.data(), a.data(), sizeof(S) * static_cast<size_t>(ma * n));
  std::memcpy(out.data() + ma * n, b.data(), sizeof(S) * static_cast<size_t>(mb * n));
  const int an = a.node, bn = b.node;
  out.node = maybe_record(tape, "concat_rows", {an, bn}, out.shape(),
                          [an, bn, ma, mb, n](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) {
                              Tensor<S> da({ma, n});
                              std::memcpy(da.data(), g.data(), sizeof(S) * static_cast<size_t>(ma * n));
                              t.accumulate(an, da);
                            }
                            if (bn >= 0) {
                              Tensor<S> db({mb, n});
                              std::memcpy(db.data(), g.data() + ma * n,
                                          sizeof(S) * static_cast<size_t>(mb * n));
                              t.accumulate(bn, db);
                            }
                          });
  return out;
}

template <class S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int64_t>& idx, Tape<S>* tape) {
  const int64_t m = a.rows(), n = a.cols();
  if (idx.empty()) throw ContractError("gather_rows: empty index list");
  for (int64_t i : idx)
    if (i < 0 || i >= m) throw ContractError("gather_rows: index out of range");
  const int64_t k = static_cast<int64_t>(idx.size());
  Tensor<S> out({k, n});
  for (int64_t r = 0; r < k; ++r)
    std::memcpy(out.data() + r * n, a.data() + idx[static_cast<size_t>(r)] * n,
                sizeof(S) * static_cast<size_t>(n));
  const int an = a.node;
  out.node = maybe_record(tape, "gather_rows", {an}, out.shape(),
                          [an, idx, m, n, k](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da({m, n});
                            for (int64_t r = 0; r < k; ++r) {
                              S* drow = da.data() + idx[static_cast<size_t>(r)] * n;
                              const S* grow = g.data() + r * n;
                              for (int64_t c = 0; c < n; ++c) drow[c] += grow[c];
                            }
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> scatter_rows(const Tensor<S>& values, const std::vector<int64_t>& idx, int64_t m,
                       Tape<S>* tape) {
  const int64_t k = values.rows(), n = values.cols();
  if (static_cast<int64_t>(idx.size()) != k)
    throw DimError("scatter_rows: index count does not match value rows");
  for (int64_t i : idx)
    if (i < 0 || i >= m) throw ContractError("scatter_rows: index out of range");
  Tensor<S> out({m, n});
  for (int64_t r = 0; r < k; ++r) {
    S* drow = out.data() + idx[static_cast<size_t>(r)] * n;
    const S* v = values.data() + r * n;
    for (int64_t c = 0; c < n; ++c) drow[c] += v[c];
  }
  const int vn = values.node;
  out.node = maybe_record(tape, "scatter_rows", {vn}, out.shape(),
                          [vn, idx, k, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> dv({k, n});
                            for (int64_t r = 0; r < k; ++r)
                              std::memcpy(dv.data() + r * n, g.data() + idx[static_cast<size_t>(r)] * n,
                                          sizeof(S) * static_cast<size_t>(n));
                            t.accumulate(vn, dv);
                          });
  return out;
}

// ---- reductions -------------------------------------------------------------

template <class S>
Tensor<S> mean_rows(const Tensor<S>& a, Tape<S>* tape) {
  const int64_t m = a.rows(), n = a.cols();
  Tensor<S> out({1, n});
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < n; ++c) out[c] += a[r * n + c];
  for (int64_t c = 0; c < n; ++c) out[c] /= static_cast<S>(m);
  const int an = a.node;
  out.node = maybe_record(tape, "mean_rows", {an}, out.shape(),
                          [an, m, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da({m, n});
                            for (int64_t r = 0; r < m; ++r)
                              for (int64_t c = 0; c < n; ++c) da[r * n + c] = g[c] / static_cast<S>(m);
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a, Tape<S>* tape) {
  Tensor<S> out({1});
  S acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
  out[0] = acc;
  const int an = a.node;
  const Shape in_shape = a.shape();
  out.node = maybe_record(tape, "sum_all", {an}, out.shape(),
                          [an, in_shape](const Tensor<S>& g, Tape<S>& t) {
                            t.accumulate(an, Tensor<S>::full(in_shape, g[0]));
                          });
  return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a, Tape<S>* tape) {
  const S inv = S(1) / static_cast<S>(a.numel());
  Tensor<S> out({1});
  S acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
  out[0] = acc * inv;
  const int an = a.node;
  const Shape in_shape = a.shape();
  out.node = maybe_record(tape, "mean_all", {an}, out.shape(),
                          [an, in_shape, inv](const Tensor<S>& g, Tape<S>& t) {
                            t.accumulate(an, Tensor<S>::full(in_shape, g[0] * inv));
                          });
  return out;
}

// ---- nonlinearities ----------------------------------------------------------

template <class S>
Tensor<S> gelu(const Tensor<S>& a, Tape<S>* tape) {
  Tensor<S> out(a.shape());
  const int64_t n = a.numel();
  const S* pa = a.data();
  S* po = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) po[i] = gelu_scalar(pa[i]);
  const int an = a.node;
  Tensor<S> av = a;
  out.node = maybe_record(tape, "gelu", {an}, out.shape(),
                          [an, av](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da(g.shape());
                            for (int64_t i = 0; i < g.numel(); ++i)
                              da[i] = g[i] * gelu_grad_scalar(av[i]);
                            t.accumulate(an, da);
                          });
  return out;
}

template <class S>
Tensor<S> sqrt_elem(const Tensor<S>& a, Tape<S>* tape) {
  Tensor<S> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a[i] < S(0)) throw ContractError("sqrt_elem: negative input");
    out[i] = std::sqrt(a[i]);
  }
  const int an = a.node;
  Tensor<S> yv = out;
  out.node = maybe_record(tape, "sqrt", {an}, out.shape(),
                          [an, yv](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> da(g.shape());
                            for (int64_t i = 0; i < g.numel(); ++i)
                              da[i] = yv[i] > S(0) ? g[i] / (S(2) * yv[i]) : S(0);
                            t.accumulate(an, da);
                          });
  return out;
}

// ---- row-wise normalisations ---------------------------------------------------

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Tape<S>* tape) {
  const int64_t n = x.last_extent();
  const int64_t m = x.lead_count();
  if (gamma.numel() != n || beta.numel() != n)
    throw DimError("layer_norm: affine params must match last extent " + std::to_string(n));
  constexpr S kEps = static_cast<S>(1e-5);
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());     // saved for backward
  Tensor<S> inv_std({m});
#pragma omp parallel for schedule(static) if (m * n > kParallelCutoff)
  for (int64_t r = 0; r < m; ++r) {
    const S* xr = x.data() + r * n;
    S mean = 0;
    for (int64_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<S>(n);
    S var = 0;
    for (int64_t c = 0; c < n; ++c) {
      const S d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<S>(n);
    const S istd = S(1) / std::sqrt(var + kEps);
    inv_std[r] = istd;
    for (int64_t c = 0; c < n; ++c) {
      const S h = (xr[c] - mean) * istd;
      xhat[r * n + c] = h;
      out[r * n + c] = gamma[c] * h + beta[c];
    }
  }
  const int xn = x.node, gn = gamma.node, bn = beta.node;
  if (tape && (xn >= 0 || gn >= 0 || bn >= 0)) {
    Tensor<S> gammav = gamma;
    const Shape xs = x.shape(), gs = gamma.shape(), bs = beta.shape();
    out.node = tape->record(
        "layer_norm", {xn, gn, bn}, out.shape(),
        [=](const Tensor<S>& g, Tape<S>& t) {
          if (gn >= 0) {
            Tensor<S> dg(gs);
            for (int64_t r = 0; r < m; ++r)
              for (int64_t c = 0; c < n; ++c) dg[c] += g[r * n + c] * xhat[r * n + c];
            t.accumulate(gn, dg);
          }
          if (bn >= 0) {
            Tensor<S> db(bs);
            for (int64_t r = 0; r < m; ++r)
              for (int64_t c = 0; c < n; ++c) db[c] += g[r * n + c];
            t.accumulate(bn, db);
          }
          if (xn >= 0) {
            Tensor<S> dx(xs);
            for (int64_t r = 0; r < m; ++r) {
              // dxhat_c = g_c * gamma_c;
              // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
              S s1 = 0, s2 = 0;
              for (int64_t c = 0; c < n; ++c) {
                const S dh = g[r * n + c] * gammav[c];
                s1 += dh;
                s2 += dh * xhat[r * n + c];
              }
              s1 /= static_cast<S>(n);
              s2 /= static_cast<S>(n);
              for (int64_t c = 0; c < n; ++c) {
                const S dh = g[r * n + c] * gammav[c];
                dx[r * n + c] = inv_std[r] * (dh - s1 - xhat[r * n + c] * s2);
              }
            }
            t.accumulate(xn, dx);
          }
        });
  }
  return out;
}

template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& x, Tape<S>* tape) {
  const int64_t n = x.last_extent();
  const int64_t m = x.lead_count();
  Tensor<S> out(x.shape());
#pragma omp parallel for schedule(static) if (m * n > kParallelCutoff)
  for (int64_t r = 0; r < m; ++r) {
    const S* xr = x.data() + r * n;
    S* yr = out.data() + r * n;
    S mx = xr[0];
    for (int64_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    S denom = 0;
    for (int64_t c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      denom += yr[c];
    }
    for (int64_t c = 0; c < n; ++c) yr[c] /= denom;
  }
  const int xn = x.node;
  Tensor<S> yv = out;
  out.node = maybe_record(tape, "softmax", {xn}, out.shape(),
                          [xn, yv, m, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> dx(yv.shape());
                            for (int64_t r = 0; r < m; ++r) {
                              S dot = 0;
                              for (int64_t c = 0; c < n; ++c)
                                dot += g[r * n + c] * yv[r * n + c];
                              for (int64_t c = 0; c < n; ++c)
                                dx[r * n + c] = yv[r * n + c] * (g[r * n + c] - dot);
                            }
                            t.accumulate(xn, dx);
                          });
  return out;
}

template <class S>
Tensor<S> logsumexp_lastdim(const Tensor<S>& x, Tape<S>* tape) {
  const int64_t n = x.last_extent();
  const int64_t m = x.lead_count();
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Tensor<S> out(out_shape);
  Tensor<S> soft(x.shape());  // softmax saved for backward
  for (int64_t r = 0; r < m; ++r) {
    const S* xr = x.data() + r * n;
    S mx = xr[0];
    for (int64_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    S denom = 0;
    for (int64_t c = 0; c < n; ++c) {
      soft[r * n + c] = std::exp(xr[c] - mx);
      denom += soft[r * n + c];
    }
    for (int64_t c = 0; c < n; ++c) soft[r * n + c] /= denom;
    out[r] = mx + std::log(denom);
  }
  const int xn = x.node;
  out.node = maybe_record(tape, "logsumexp", {xn}, out.shape(),
                          [xn, soft, m, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> dx(soft.shape());
                            for (int64_t r = 0; r < m; ++r)
                              for (int64_t c = 0; c < n; ++c)
                                dx[r * n + c] = g[r] * soft[r * n + c];
                            t.accumulate(xn, dx);
                          });
  return out;
}

template <class S>
Tensor<S> l2_normalize_lastdim(const Tensor<S>& x, Tape<S>* tape) {
  const int64_t n = x.last_extent();
  const int64_t m = x.lead_count();
  constexpr S kTiny = static_cast<S>(1e-12);
  Tensor<S> out(x.shape());
  Tensor<S> norms({m});
  for (int64_t r = 0; r < m; ++r) {
    const S* xr = x.data() + r * n;
    S sq = 0;
    for (int64_t c = 0; c < n; ++c) sq += xr[c] * xr[c];
    const S nm = std::max(std::sqrt(sq), kTiny);
    norms[r] = nm;
    for (int64_t c = 0; c < n; ++c) out[r * n + c] = xr[c] / nm;
  }
  const int xn = x.node;
  Tensor<S> yv = out;
  out.node = maybe_record(tape, "l2_normalize", {xn}, out.shape(),
                          [xn, yv, norms, m, n](const Tensor<S>& g, Tape<S>& t) {
                            Tensor<S> dx(yv.shape());
                            for (int64_t r = 0; r < m; ++r) {
                              S dot = 0;
                              for (int64_t c = 0; c < n; ++c)
                                dot += g[r * n + c] * yv[r * n + c];
                              for (int64_t c = 0; c < n; ++c)
                                dx[r * n + c] =
                                    (g[r * n + c] - yv[r * n + c] * dot) / norms[r];
                            }
                            t.accumulate(xn, dx);
                          });
  return out;
}

// ---- convolution -----------------------------------------------------------

namespace kernels {

template <class S>
void conv1d(const S* x, const S* w, S* y, int64_t n, int64_t ci, int64_t co, int64_t k,
            int64_t stride) {
  const int64_t n_out = (n - k) / stride + 1;
#pragma omp parallel for schedule(static) if (n_out * co * k * ci > kParallelCutoff)
  for (int64_t o = 0; o < n_out; ++o) {
    S* yrow = y + o * co;
    std::fill(yrow, yrow + co, S(0));
    for (int64_t t = 0; t < k; ++t) {
      const S* xrow = x + (o * stride + t) * ci;
      const S* wrow = w + t * ci * co;
      for (int64_t a = 0; a < ci; ++a) {
        const S xv = xrow[a];
        const S* wr = wrow + a * co;
        for (int64_t b = 0; b < co; ++b) yrow[b] += xv * wr[b];
      }
    }
  }
}

}  // namespace kernels

template <class S>
Tensor<S> conv1d_strided(const Tensor<S>& x, const Tensor<S>& w, int64_t stride, Tape<S>* tape) {
  if (w.rank() != 3) throw DimError("conv1d: weight must be [k x c_in x c_out]");
  const int64_t n = x.rows(), ci = x.cols();
  const int64_t k = w.extent(0), wci = w.extent(1), co = w.extent(2);
  if (wci != ci) throw DimError("conv1d: channel mismatch");
  if (stride <= 0) throw ContractError("conv1d: stride must be positive");
  if (n < k) throw DimError("conv1d: input shorter than kernel");
  const int64_t n_out = (n - k) / stride + 1;
  Tensor<S> out({n_out, co});
  kernels::conv1d(x.data(), w.data(), out.data(), n, ci, co, k, stride);
  const int xn = x.node, wn = w.node;
  Tensor<S> xv = (wn >= 0) ? x : Tensor<S>();
  Tensor<S> wv = (xn >= 0) ? w : Tensor<S>();
  out.node = maybe_record(
      tape, "conv1d", {xn, wn}, out.shape(),
      [xn, wn, xv, wv, n, ci, co, k, stride, n_out](const Tensor<S>& g, Tape<S>& t) {
        if (wn >= 0) {
          Tensor<S> dw({k, ci, co});
          for (int64_t tk = 0; tk < k; ++tk)
            for (int64_t a = 0; a < ci; ++a)
              for (int64_t o = 0; o < n_out; ++o) {
                const S xvv = xv[(o * stride + tk) * ci + a];
                const S* grow = g.data() + o * co;
                S* dwr = dw.data() + (tk * ci + a) * co;
                for (int64_t b = 0; b < co; ++b) dwr[b] += xvv * grow[b];
              }
          t.accumulate(wn, dw);
        }
        if (xn >= 0) {
          Tensor<S> dx({n, ci});
          for (int64_t o = 0; o < n_out; ++o)
            for (int64_t tk = 0; tk < k; ++tk) {
              S* dxr = dx.data() + (o * stride + tk) * ci;
              const S* grow = g.data() + o * co;
              const S* wrow = wv.data() + tk * ci * co;
              for (int64_t a = 0; a < ci; ++a) {
                S acc = 0;
                const S* wr = wrow + a * co;
                for (int64_t b = 0; b < co; ++b) acc += wr[b] * grow[b];
                dxr[a] += acc;
              }
            }
          t.accumulate(xn, dx);
        }
      });
  return out;
}

// ---- outer sum ---------------------------------------------------------------

template <class S>
Tensor<S> outer_sum(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  const int64_t m = a.rows(), ka = a.cols();
  const int64_t n = b.rows(), kb = b.cols();
  if (ka != kb) throw DimError("outer_sum: feature widths differ");
  Tensor<S> out({m, n, ka});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      S* orow = out.data() + (i * n + j) * ka;
      const S* ar = a.data() + i * ka;
      const S* br = b.data() + j * ka;
      for (int64_t c = 0; c < ka; ++c) orow[c] = ar[c] + br[c];
    }
  const int an = a.node, bn = b.node;
  out.node = maybe_record(tape, "outer_sum", {an, bn}, out.shape(),
                          [an, bn, m, n, ka](const Tensor<S>& g, Tape<S>& t) {
                            if (an >= 0) {
                              Tensor<S> da({m, ka});
                              for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                  for (int64_t c = 0; c < ka; ++c)
                                    da[i * ka + c] += g[(i * n + j) * ka + c];
                              t.accumulate(an, da);
                            }
                            if (bn >= 0) {
                              Tensor<S> db({n, ka});
                              for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                  for (int64_t c = 0; c < ka; ++c)
                                    db[j * ka + c] += g[(i * n + j) * ka + c];
                              t.accumulate(bn, db);
                            }
                          });
  return out;
}

// ---- gradient checking ---------------------------------------------------------

template <class S>
S grad_check(const ScalarFn<S>& f, const Tensor<S>& theta, S step) {
  if (step <= S(0)) throw ContractError("grad_check: step must be positive");
  Tape<S> tape;
  Tensor<S> tracked = theta;
  tape.track(tracked);
  Tensor<S> loss = f(tracked, &tape);
  if (loss.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  tape.backward(loss.node);
  Tensor<S> analytic = tape.grad(tracked.node);

  Tensor<S> probe = theta;
  probe.node = -1;
  S worst = 0;
  for (int64_t i = 0; i < theta.numel(); ++i) {
    const S h = step * std::max(S(1), std::abs(theta[i]));
    const S saved = probe[i];
    probe[i] = saved + h;
    const S fp = f(probe, nullptr)[0];
    probe[i] = saved - h;
    const S fm = f(probe, nullptr)[0];
    probe[i] = saved;
    const S numeric = (fp - fm) / (S(2) * h);
    const S rel = std::abs(analytic[i] - numeric) / std::max(S(1), std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---- seeded init ---------------------------------------------------------------

template <class S>
void fill_uniform(Tensor<S>& t, S lo, S hi, uint64_t seed, uint64_t stream) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = lo + (hi - lo) * static_cast<S>(rng_unit(seed, stream, static_cast<uint64_t>(i)));
}

template <class S>
void fill_xavier(Tensor<S>& t, int64_t fan_in, int64_t fan_out, uint64_t seed, uint64_t stream) {
  if (fan_in <= 0 || fan_out <= 0) throw ContractError("fill_xavier: fans must be positive");
  const S limit = static_cast<S>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  fill_uniform(t, -limit, limit, seed, stream);
}

// ---- explicit instantiations ----------------------------------------------------

#define NHT_INSTANTIATE(S)                                                                       \
  template class Tensor<S>;                                                                      \
  template class Tape<S>;                                                                        \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                          \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                          \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                          \
  template Tensor<S> scale(const Tensor<S>&, S, Tape<S>*);                                       \
  template Tensor<S> add_row(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                      \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                       \
  template Tensor<S> transpose(const Tensor<S>&, Tape<S>*);                                      \
  template Tensor<S> reshape(const Tensor<S>&, Shape, Tape<S>*);                                 \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&, Tape<S>*);                       \
  template Tensor<S> slice_cols(const Tensor<S>&, int64_t, int64_t, Tape<S>*);                   \
  template Tensor<S> concat_rows(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                  \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<int64_t>&, Tape<S>*);       \
  template Tensor<S> scatter_rows(const Tensor<S>&, const std::vector<int64_t>&, int64_t,        \
                                  Tape<S>*);                                                     \
  template Tensor<S> mean_rows(const Tensor<S>&, Tape<S>*);                                      \
  template Tensor<S> sum_all(const Tensor<S>&, Tape<S>*);                                        \
  template Tensor<S> mean_all(const Tensor<S>&, Tape<S>*);                                       \
  template Tensor<S> gelu(const Tensor<S>&, Tape<S>*);                                           \
  template Tensor<S> sqrt_elem(const Tensor<S>&, Tape<S>*);                                      \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Tape<S>*); \
  template Tensor<S> softmax_lastdim(const Tensor<S>&, Tape<S>*);                                \
  template Tensor<S> logsumexp_lastdim(const Tensor<S>&, Tape<S>*);                              \
  template Tensor<S> l2_normalize_lastdim(const Tensor<S>&, Tape<S>*);                           \
  template Tensor<S> conv1d_strided(const Tensor<S>&, const Tensor<S>&, int64_t, Tape<S>*);      \
  template Tensor<S> outer_sum(const Tensor<S>&, const Tensor<S>&, Tape<S>*);                    \
  template S grad_check(const ScalarFn<S>&, const Tensor<S>&, S);                                \
  template void fill_uniform(Tensor<S>&, S, S, uint64_t, uint64_t);                              \
  template void fill_xavier(Tensor<S>&, int64_t, int64_t, uint64_t, uint64_t);

NHT_INSTANTIATE(float)
NHT_INSTANTIATE(double)
#undef NHT_INSTANTIATE

template Tensor<double> cast_tensor<double, float>(const Tensor<float>&);
template Tensor<float> cast_tensor<float, double>(const Tensor<double>&);
template Tensor<float> cast_tensor<float, float>(const Tensor<float>&);
template Tensor<double> cast_tensor<double, double>(const Tensor<double>&);

}  // namespace nht
