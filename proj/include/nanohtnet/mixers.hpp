#pragma once

#include <string>

#include "nanohtnet/skeleton.hpp"
#include "nanohtnet/tensor.hpp"

namespace nht {

// ---- parameter bundles -----------------------------------------------------

template <class S>
struct GcnBlockParams {  // residual two-layer graph convolution (no biases)
  Tensor<S> w1, w2;
};

template <class S>
struct LayerNormParams {
  Tensor<S> gamma, beta;
};

template <class S>
struct MlpParams {  // linear -> GELU -> linear
  Tensor<S> w1, b1, w2, b2;
};

template <class S>
struct LimbBranchParams {  // strided conv over limb rows + residual channel MLP
  Tensor<S> conv_w, conv_b;
  LayerNormParams<S> ln;
  MlpParams<S> mlp;
};

template <class S>
struct IpcParams {
  LimbBranchParams<S> distal;  // kernel 2 / stride 2 over the 8 [mid,end] rows
  LimbBranchParams<S> whole;   // kernel 3 / stride 3 over the 12 [root,mid,end] rows
};

template <class S>
struct AttnParams {  // multi-head self-attention, post-normed residual
  Tensor<S> wq, wk, wv, wo;
  LayerNormParams<S> ln;
};

template <class S>
struct AggregateParams {  // z + mlp(ln(z)), mixes the concatenated splits
  LayerNormParams<S> ln;
  MlpParams<S> mlp;
};

template <class S>
struct SpatialMixerParams {
  GcnBlockParams<S> ljc;  // local joint connectivity (skeleton graph)
  IpcParams<S> ipc;       // intra-part limb features
  AttnParams<S> gbi;      // global body interaction
  AggregateParams<S> agg;
};

template <class S>
struct TemporalMixerParams {
  GcnBlockParams<S> ime;  // inter-moment (consecutive token) graph
  AttnParams<S> gcp;      // global context, attention over all tokens
  AggregateParams<S> agg;
};

// ---- construction -----------------------------------------------------------

// Allocates and seeds one spatial mixer over channel width c (must be a
// multiple of 3; the per-split width c/3 must be divisible by `heads`).
template <class S>
SpatialMixerParams<S> make_spatial_mixer(int64_t c, int64_t heads, uint64_t seed,
                                         const std::string& prefix);
// Temporal mixer over width c (must be a multiple of 2; c/2 divisible by heads).
template <class S>
TemporalMixerParams<S> make_temporal_mixer(int64_t c, int64_t heads, uint64_t seed,
                                           const std::string& prefix);

// ---- forward passes -----------------------------------------------------------

// Y = X + A * gelu(A X W1) * W2 over a fixed normalized adjacency A.
template <class S>
Tensor<S> gcn_residual_forward(const Tensor<S>& x, const Tensor<S>& adj,
                               const GcnBlockParams<S>& p, Tape<S>* tape = nullptr);

// Limb-feature update: strided convs pool each limb's rows into one feature,
// a residual channel MLP refines it, and the result is added back onto the
// limb's distal rows. Rows of articulation degree 0/1 pass through untouched
// by the distal branch; degree-1 rows are touched only via the whole-limb
// branch placement on degree-2/3 rows (so 0/1 rows are bit-identical to the
// input).
template <class S>
Tensor<S> ipc_forward(const Tensor<S>& x, const SkeletonTopology& topo, const IpcParams<S>& p,
                      Tape<S>* tape = nullptr);

// Multi-head self-attention with residual: y = x + LN(MSA(x)). Scores are
// scaled by 1/sqrt(width) where width is the full split width (not the
// per-head dim). If `attn_out` is non-null it receives the [heads x n x n]
// row-stochastic attention maps.
template <class S>
Tensor<S> attention_forward(const Tensor<S>& x, int64_t heads, const AttnParams<S>& p,
                            Tape<S>* tape = nullptr, Tensor<S>* attn_out = nullptr);

// z + MLP(LN(z)).
template <class S>
Tensor<S> aggregate_forward(const Tensor<S>& z, const AggregateParams<S>& p,
                            Tape<S>* tape = nullptr);

// Spatial mixer over joint tokens [J x C]: channels split in thirds, the
// splits update progressively (graph -> limbs -> attention), then the
// concatenation is re-mixed by the aggregate MLP. `ipc_enabled=false`
// turns the limb stage into a pass-through of equal width (ablation).
template <class S>
Tensor<S> spatial_mixer_forward(const Tensor<S>& x, const Tensor<S>& adj,
                                const SkeletonTopology& topo, int64_t heads,
                                const SpatialMixerParams<S>& p, bool ipc_enabled = true,
                                Tape<S>* tape = nullptr, Tensor<S>* attn_out = nullptr);

// Temporal mixer over coefficient tokens [T_k x C]: channel halves, the
// consecutive-token graph feeds the all-token attention, then aggregation.
template <class S>
Tensor<S> temporal_mixer_forward(const Tensor<S>& x, const Tensor<S>& adj, int64_t heads,
                                 const TemporalMixerParams<S>& p, Tape<S>* tape = nullptr,
                                 Tensor<S>* attn_out = nullptr);

// ---- parameter traversal ---------------------------------------------------
// Visits every tensor in a fixed, documented order with a hierarchical name;
// the same order drives counting, optimizer state, checkpoints and the
// momentum-encoder update.

template <class P, class F>
void visit_gcn(P& p, const std::string& pre, F&& f) {
  f(pre + ".w1", p.w1);
  f(pre + ".w2", p.w2);
}

template <class P, class F>
void visit_ln(P& p, const std::string& pre, F&& f) {
  f(pre + ".g", p.gamma);
  f(pre + ".b", p.beta);
}

template <class P, class F>
void visit_mlp(P& p, const std::string& pre, F&& f) {
  f(pre + ".w1", p.w1);
  f(pre + ".b1", p.b1);
  f(pre + ".w2", p.w2);
  f(pre + ".b2", p.b2);
}

template <class P, class F>
void visit_limb_branch(P& p, const std::string& pre, F&& f) {
  f(pre + ".conv.w", p.conv_w);
  f(pre + ".conv.b", p.conv_b);
  visit_ln(p.ln, pre + ".ln", f);
  visit_mlp(p.mlp, pre + ".mlp", f);
}

template <class P, class F>
void visit_ipc(P& p, const std::string& pre, F&& f) {
  visit_limb_branch(p.distal, pre + ".distal", f);
  visit_limb_branch(p.whole, pre + ".whole", f);
}

template <class P, class F>
void visit_attn(P& p, const std::string& pre, F&& f) {
  f(pre + ".wq", p.wq);
  f(pre + ".wk", p.wk);
  f(pre + ".wv", p.wv);
  f(pre + ".wo", p.wo);
  visit_ln(p.ln, pre + ".ln", f);
}

template <class P, class F>
void visit_aggregate(P& p, const std::string& pre, F&& f) {
  visit_ln(p.ln, pre + ".ln", f);
  visit_mlp(p.mlp, pre + ".mlp", f);
}

template <class P, class F>
void visit_spatial_mixer(P& p, const std::string& pre, F&& f, bool ipc_enabled = true) {
  visit_gcn(p.ljc, pre + ".ljc", f);
  if (ipc_enabled) visit_ipc(p.ipc, pre + ".ipc", f);
  visit_attn(p.gbi, pre + ".gbi", f);
  visit_aggregate(p.agg, pre + ".agg", f);
}

template <class P, class F>
void visit_temporal_mixer(P& p, const std::string& pre, F&& f) {
  visit_gcn(p.ime, pre + ".ime", f);
  visit_attn(p.gcp, pre + ".gcp", f);
  visit_aggregate(p.agg, pre + ".agg", f);
}

}  // namespace nht
