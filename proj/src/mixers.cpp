#include "nanohtnet/mixers.hpp"

#include <cmath>

#include "nanohtnet/rng.hpp"

namespace nht {

namespace {

template <class S>
void xavier(Tensor<S>& t, int64_t fan_in, int64_t fan_out, uint64_t seed,
            const std::string& name) {
  fill_xavier(t, fan_in, fan_out, seed, hash_name(name));
}

template <class S>
LayerNormParams<S> make_ln(int64_t c) {
  return {Tensor<S>::full({c}, S(1)), Tensor<S>({c})};
}

template <class S>
MlpParams<S> make_mlp(int64_t c_in, int64_t c_hidden, int64_t c_out, uint64_t seed,
                      const std::string& prefix) {
  MlpParams<S> p;
  p.w1 = Tensor<S>({c_in, c_hidden});
  xavier(p.w1, c_in, c_hidden, seed, prefix + ".w1");
  p.b1 = Tensor<S>({c_hidden});
  p.w2 = Tensor<S>({c_hidden, c_out});
  xavier(p.w2, c_hidden, c_out, seed, prefix + ".w2");
  p.b2 = Tensor<S>({c_out});
  return p;
}

template <class S>
LimbBranchParams<S> make_limb_branch(int64_t c, int64_t kernel, uint64_t seed,
                                     const std::string& prefix) {
  LimbBranchParams<S> p;
  p.conv_w = Tensor<S>({kernel, c, c});
  xavier(p.conv_w, kernel * c, kernel * c, seed, prefix + ".conv.w");
  p.conv_b = Tensor<S>({c});
  p.ln = make_ln<S>(c);
  p.mlp = make_mlp<S>(c, 2 * c, c, seed, prefix + ".mlp");
  return p;
}

template <class S>
AttnParams<S> make_attn(int64_t c, uint64_t seed, const std::string& prefix) {
  AttnParams<S> p;
  for (auto [name, t] : {std::pair<const char*, Tensor<S>*>{"wq", &p.wq},
                         {"wk", &p.wk},
                         {"wv", &p.wv},
                         {"wo", &p.wo}}) {
    *t = Tensor<S>({c, c});
    xavier(*t, c, c, seed, prefix + "." + name);
  }
  p.ln = make_ln<S>(c);
  return p;
}

template <class S>
AggregateParams<S> make_aggregate(int64_t c, uint64_t seed, const std::string& prefix) {
  AggregateParams<S> p;
  p.ln = make_ln<S>(c);
  p.mlp = make_mlp<S>(c, c, c, seed, prefix + ".mlp");
  return p;
}

template <class S>
GcnBlockParams<S> make_gcn(int64_t c, uint64_t seed, const std::string& prefix) {
  GcnBlockParams<S> p;
  p.w1 = Tensor<S>({c, c});
  xavier(p.w1, c, c, seed, prefix + ".w1");
  p.w2 = Tensor<S>({c, c});
  xavier(p.w2, c, c, seed, prefix + ".w2");
  return p;
}

}  // namespace

template <class S>
SpatialMixerParams<S> make_spatial_mixer(int64_t c, int64_t heads, uint64_t seed,
                                         const std::string& prefix) {
  if (c % 3 != 0) throw ContractError("spatial mixer width must be divisible by 3");
  const int64_t cp = c / 3;
  if (cp % heads != 0) throw ContractError("spatial split width must be divisible by heads");
  SpatialMixerParams<S> p;
  p.ljc = make_gcn<S>(cp, seed, prefix + ".ljc");
  p.ipc.distal = make_limb_branch<S>(cp, 2, seed, prefix + ".ipc.distal");
  p.ipc.whole = make_limb_branch<S>(cp, 3, seed, prefix + ".ipc.whole");
  p.gbi = make_attn<S>(cp, seed, prefix + ".gbi");
  p.agg = make_aggregate<S>(c, seed, prefix + ".agg");
  return p;
}

template <class S>
TemporalMixerParams<S> make_temporal_mixer(int64_t c, int64_t heads, uint64_t seed,
                                           const std::string& prefix) {
  if (c % 2 != 0) throw ContractError("temporal mixer width must be divisible by 2");
  const int64_t ch = c / 2;
  if (ch % heads != 0) throw ContractError("temporal split width must be divisible by heads");
  TemporalMixerParams<S> p;
  p.ime = make_gcn<S>(ch, seed, prefix + ".ime");
  p.gcp = make_attn<S>(ch, seed, prefix + ".gcp");
  p.agg = make_aggregate<S>(c, seed, prefix + ".agg");
  return p;
}

template <class S>
Tensor<S> gcn_residual_forward(const Tensor<S>& x, const Tensor<S>& adj,
                               const GcnBlockParams<S>& p, Tape<S>* tape) {
  if (adj.rows() != x.rows() || adj.cols() != x.rows())
    throw DimError("gcn: adjacency does not match token count");
  Tensor<S> inner = matmul(adj, matmul(x, p.w1, tape), tape);
  Tensor<S> outer = matmul(adj, matmul(gelu(inner, tape), p.w2, tape), tape);
  return add(x, outer, tape);
}

namespace {

template <class S>
Tensor<S> mlp_forward(const Tensor<S>& x, const MlpParams<S>& p, Tape<S>* tape) {
  Tensor<S> h = gelu(add_row(matmul(x, p.w1, tape), p.b1, tape), tape);
  return add_row(matmul(h, p.w2, tape), p.b2, tape);
}

template <class S>
Tensor<S> limb_branch_forward(const Tensor<S>& rows, const LimbBranchParams<S>& p,
                              int64_t stride, Tape<S>* tape) {
  Tensor<S> f =
      gelu(add_row(conv1d_strided(rows, p.conv_w, stride, tape), p.conv_b, tape), tape);
  Tensor<S> refined = mlp_forward(layer_norm(f, p.ln.gamma, p.ln.beta, tape), p.mlp, tape);
  return add(f, refined, tape);
}

}  // namespace

template <class S>
Tensor<S> ipc_forward(const Tensor<S>& x, const SkeletonTopology& topo, const IpcParams<S>& p,
                      Tape<S>* tape) {
  if (x.rows() != topo.joints) throw DimError("ipc: token count must equal joint count");
  const int64_t j = topo.joints;
  const auto rows23 = limb_rows_deg23(topo);    // 8 rows, limb-major [mid, end]
  const auto rows123 = limb_rows_deg123(topo);  // 12 rows, limb-major [root, mid, end]
  const auto rows3 = limb_rows_deg3(topo);      // 4 distal rows

  // Distal branch: windows of 2 -> one feature per limb, placed on end rows.
  Tensor<S> f1 = limb_branch_forward(gather_rows(x, rows23, tape), p.distal, 2, tape);
  Tensor<S> r1 = scatter_rows(f1, rows3, j, tape);

  // Whole-limb branch: windows of 3 -> one feature per limb, placed on both
  // the mid and end rows (duplicated per limb).
  Tensor<S> f2 = limb_branch_forward(gather_rows(x, rows123, tape), p.whole, 3, tape);
  Tensor<S> f2_dup = gather_rows(f2, {0, 0, 1, 1, 2, 2, 3, 3}, tape);
  Tensor<S> r2 = scatter_rows(f2_dup, rows23, j, tape);

  return add(add(x, r1, tape), r2, tape);
}

template <class S>
Tensor<S> attention_forward(const Tensor<S>& x, int64_t heads, const AttnParams<S>& p,
                            Tape<S>* tape, Tensor<S>* attn_out) {
  const int64_t n = x.rows(), c = x.cols();
  if (heads <= 0 || c % heads != 0)
    throw ContractError("attention: heads must divide the split width");
  const int64_t d = c / heads;
  const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(c)));

  Tensor<S> q = matmul(x, p.wq, tape);
  Tensor<S> k = matmul(x, p.wk, tape);
  Tensor<S> v = matmul(x, p.wv, tape);

  if (attn_out) *attn_out = Tensor<S>({heads, n, n});
  std::vector<Tensor<S>> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * d, (h + 1) * d, tape);
    Tensor<S> kh = slice_cols(k, h * d, (h + 1) * d, tape);
    Tensor<S> vh = slice_cols(v, h * d, (h + 1) * d, tape);
    Tensor<S> scores = scale(matmul(qh, transpose(kh, tape), tape), inv_scale, tape);
    Tensor<S> attn = softmax_lastdim(scores, tape);
    if (attn_out)
      for (int64_t i = 0; i < n * n; ++i) (*attn_out)[h * n * n + i] = attn[i];
    head_outs.push_back(matmul(attn, vh, tape));
  }
  Tensor<S> msa = matmul(concat_cols(head_outs, tape), p.wo, tape);
  return add(x, layer_norm(msa, p.ln.gamma, p.ln.beta, tape), tape);
}

template <class S>
Tensor<S> aggregate_forward(const Tensor<S>& z, const AggregateParams<S>& p, Tape<S>* tape) {
  return add(z, mlp_forward(layer_norm(z, p.ln.gamma, p.ln.beta, tape), p.mlp, tape), tape);
}

template <class S>
Tensor<S> spatial_mixer_forward(const Tensor<S>& x, const Tensor<S>& adj,
                                const SkeletonTopology& topo, int64_t heads,
                                const SpatialMixerParams<S>& p, bool ipc_enabled, Tape<S>* tape,
                                Tensor<S>* attn_out) {
  const int64_t c = x.cols();
  if (c % 3 != 0) throw DimError("spatial mixer: width must be divisible by 3");
  const int64_t cp = c / 3;
  Tensor<S> x_ljc = slice_cols(x, 0, cp, tape);
  Tensor<S> x_ipc = slice_cols(x, cp, 2 * cp, tape);
  Tensor<S> x_gbi = slice_cols(x, 2 * cp, c, tape);

  Tensor<S> y_ljc = gcn_residual_forward(x_ljc, adj, p.ljc, tape);
  Tensor<S> in_ipc = add(x_ipc, y_ljc, tape);
  Tensor<S> y_ipc = ipc_enabled ? ipc_forward(in_ipc, topo, p.ipc, tape) : in_ipc;
  Tensor<S> y_gbi = attention_forward(add(x_gbi, y_ipc, tape), heads, p.gbi, tape, attn_out);

  return aggregate_forward(concat_cols({y_ljc, y_ipc, y_gbi}, tape), p.agg, tape);
}

template <class S>
Tensor<S> temporal_mixer_forward(const Tensor<S>& x, const Tensor<S>& adj, int64_t heads,
                                 const TemporalMixerParams<S>& p, Tape<S>* tape,
                                 Tensor<S>* attn_out) {
  const int64_t c = x.cols();
  if (c % 2 != 0) throw DimError("temporal mixer: width must be divisible by 2");
  const int64_t ch = c / 2;
  Tensor<S> x_ime = slice_cols(x, 0, ch, tape);
  Tensor<S> x_gcp = slice_cols(x, ch, c, tape);

  Tensor<S> y_ime = gcn_residual_forward(x_ime, adj, p.ime, tape);
  Tensor<S> y_gcp = attention_forward(add(x_gcp, y_ime, tape), heads, p.gcp, tape, attn_out);

  return aggregate_forward(concat_cols({y_ime, y_gcp}, tape), p.agg, tape);
}

#define NHT_MIXER_INSTANTIATE(S)                                                              \
  template SpatialMixerParams<S> make_spatial_mixer(int64_t, int64_t, uint64_t,               \
                                                    const std::string&);                      \
  template TemporalMixerParams<S> make_temporal_mixer(int64_t, int64_t, uint64_t,             \
                                                      const std::string&);                    \
  template Tensor<S> gcn_residual_forward(const Tensor<S>&, const Tensor<S>&,                 \
                                          const GcnBlockParams<S>&, Tape<S>*);                \
  template Tensor<S> ipc_forward(const Tensor<S>&, const SkeletonTopology&,                   \
                                 const IpcParams<S>&, Tape<S>*);                              \
  template Tensor<S> attention_forward(const Tensor<S>&, int64_t, const AttnParams<S>&,       \
                                       Tape<S>*, Tensor<S>*);                                 \
  template Tensor<S> aggregate_forward(const Tensor<S>&, const AggregateParams<S>&, Tape<S>*); \
  template Tensor<S> spatial_mixer_forward(const Tensor<S>&, const Tensor<S>&,                \
                                           const SkeletonTopology&, int64_t,                  \
                                           const SpatialMixerParams<S>&, bool, Tape<S>*,      \
                                           Tensor<S>*);                                       \
  template Tensor<S> temporal_mixer_forward(const Tensor<S>&, const Tensor<S>&, int64_t,      \
                                            const TemporalMixerParams<S>&, Tape<S>*,          \
                                            Tensor<S>*);

NHT_MIXER_INSTANTIATE(float)
NHT_MIXER_INSTANTIATE(double)
#undef NHT_MIXER_INSTANTIATE

}  // namespace nht
